"""Judge outputs (verdicts and feedback) and the parsers for endpoint replies."""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

ACTIONS = ("add", "remove", "increase", "decrease")
CHOICES = ("first", "second")


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class MotionDescription:
    text: str
    task_id: str
    seed: int = 0

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("motion description text is empty")

    def to_dict(self) -> dict:
        return {"text": self.text, "task_id": self.task_id, "seed": self.seed}


@dataclass(frozen=True)
class Verdict:
    choice: str
    justification: str = ""

    def __post_init__(self):
        if self.choice not in CHOICES:
            raise ValueError(f"verdict must be 'first' or 'second', got {self.choice!r}")

    @property
    def challenger_wins(self) -> bool:
        return self.choice == "first"

    def to_dict(self) -> dict:
        return {"choice": self.choice, "justification": self.justification}

    @classmethod
    def from_dict(cls, d: dict) -> "Verdict":
        return cls(d["choice"], d.get("justification", ""))


@dataclass(frozen=True)
class Suggestion:
    term_name: str
    action: str
    proposed_weight: float | None = None
    definition_hint: str | None = None

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"unknown action {self.action!r}")
        if self.action == "add" and not self.definition_hint:
            raise ValueError(f"add suggestion for {self.term_name!r} needs a definition_hint")
        if self.proposed_weight is not None and not (math.isfinite(self.proposed_weight) and self.proposed_weight >= 0):
            raise ValueError("proposed weights must be finite and >= 0")

    def to_dict(self) -> dict:
        return {
            "term_name": self.term_name,
            "action": self.action,
            "proposed_weight": self.proposed_weight,
            "definition_hint": self.definition_hint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Suggestion":
        w = d.get("proposed_weight")
        return cls(str(d["term_name"]), str(d["action"]).lower(),
                   None if w is None else float(w), d.get("definition_hint"))


@dataclass(frozen=True)
class Feedback:
    task_success: bool
    issues: str = ""
    suggestions: tuple[Suggestion, ...] = ()
    dropped: tuple[str, ...] = field(default=())  # suggestions rejected during parsing

    def to_dict(self) -> dict:
        return {
            "task_success": "yes" if self.task_success else "no",
            "issues": self.issues,
            "suggestions": [s.to_dict() for s in self.suggestions],
            "dropped": list(self.dropped),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Feedback":
        return cls(d["task_success"] == "yes", d.get("issues", ""),
                   tuple(Suggestion.from_dict(s) for s in d.get("suggestions", [])),
                   tuple(d.get("dropped", [])))

    def as_text(self) -> str:
        """Compact rendering used to fill synthesis prompts."""
        lines = [f"Task success: {'YES' if self.task_success else 'NO'}"]
        if self.issues:
            lines.append(f"Issues: {self.issues}")
        for s in self.suggestions:
            extra = []
            if s.proposed_weight is not None:
                extra.append(f"weight {s.proposed_weight:g}")
            if s.definition_hint:
                extra.append(f"definition: {s.definition_hint}")
            tail = f" ({', '.join(extra)})" if extra else ""
            lines.append(f"- {s.action} {s.term_name}{tail}")
        return "\n".join(lines)


EMPTY_FEEDBACK = Feedback(False, "No evaluation yet.", ())


_LEADING_WORD = re.compile(r"""\s*["'`*]*([A-Za-z]+)(?![A-Za-z])""")


def parse_verdict(text: str) -> Verdict:
    """Read the leading token of a selection reply; only ``first`` or ``second`` is accepted.

    Case, surrounding whitespace and quote or emphasis marks are ignored;
    anything else (``firstly``, ``the first``, an empty reply) raises ParseError.
    """
    m = _LEADING_WORD.match(text or "")
    word = m.group(1).lower() if m else ""
    if word not in CHOICES:
        raise ParseError(f"reply does not start with 'first' or 'second': {text[:40]!r}")
    rest = text[m.end():].strip(" \t\r\n\"'`*.:,-")
    return Verdict(word, rest)


_JSON_BLOCK = re.compile(r"```(?:json)?\s*(\{.*?\})\s*```", re.S)


def parse_feedback(text: str, allowed_terms=None) -> Feedback:
    """Parse a feedback reply: leading YES/NO, free-text issues, then a JSON suggestions block.

    Suggestions naming a term outside ``allowed_terms`` (when given) or failing
    validation are dropped and listed in ``Feedback.dropped``.
    """
    m = re.match(r"""\s*["'`*]*(yes|no)(?![a-z])""", text or "", re.I)
    if not m:
        raise ParseError("reply does not start with YES or NO")
    success = m.group(1).lower() == "yes"
    body = text[m.end():]
    block = _JSON_BLOCK.search(body)
    suggestions, dropped = [], []
    if block:
        try:
            raw = json.loads(block.group(1))
        except json.JSONDecodeError as exc:
            raise ParseError(f"suggestion block is not valid JSON: {exc}") from None
        items = raw.get("suggestions", []) if isinstance(raw, dict) else []
        for item in items:
            try:
                s = Suggestion.from_dict(item)
            except (KeyError, TypeError, ValueError) as exc:
                dropped.append(f"{item!r}: {exc}")
                continue
            if allowed_terms is not None and s.term_name not in allowed_terms:
                dropped.append(f"{s.term_name}: not a known term or feature")
                continue
            suggestions.append(s)
        issues = (body[: block.start()] + body[block.end():]).strip()
    else:
        issues = body.strip()
    issues = issues.lstrip(" .:,-\n").strip()
    return Feedback(success, issues, tuple(suggestions), tuple(dropped))
