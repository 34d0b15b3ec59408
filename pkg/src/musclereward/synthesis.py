"""Reward-program proposals: a deterministic local search and an endpoint-backed writer."""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass

import numpy as np

from .judge.endpoint import load_prompt
from .judge.feedback import EMPTY_FEEDBACK, Feedback, MotionDescription
from .reward.dsl import FUNCTIONS, ProgramError, parse_expr
from .reward.features import catalog_summary
from .reward.program import (
    TERM_LIBRARY,
    RewardProgram,
    RewardTerm,
    WeightMatrix,
    check_features,
    library_term,
    parse_program,
    probe_eval,
)
from .transport import chat_request, response_text, text_part

MAX_WEIGHT = 10.0
STEP_FACTOR = 1.5
JITTER = 0.1
RETRIES = 5


class SynthesisError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthesisContext:
    description: MotionDescription
    feedback: Feedback
    incumbent: RewardProgram
    weight_history: WeightMatrix | None = None
    max_weight: float = MAX_WEIGHT
    stage: int = 0  # stage id given to the proposals
    catalog: str = ""

    def __post_init__(self):
        if not self.max_weight > 0:
            raise ValueError("max_weight must be positive")
        if not self.catalog:
            object.__setattr__(self, "catalog", catalog_summary())


@dataclass(frozen=True)
class Proposal:
    program: RewardProgram
    provenance: str  # "mock" or "endpoint"
    attempt: int = 0


@dataclass(frozen=True)
class Validation:
    accepted: bool
    reason: str = ""

    def __bool__(self) -> bool:
        return self.accepted


def validate(proposal, task, max_weight: float = MAX_WEIGHT) -> Validation:
    """Accept iff the program parses, stays within the weight bound and probes finite."""
    program = proposal.program if isinstance(proposal, Proposal) else proposal
    if isinstance(program, str):
        try:
            program = parse_program(program)
        except ProgramError as exc:
            return Validation(False, f"parse error: {exc}")
    for name, w in zip(program.names, program.weights):
        if not 0.0 <= w <= max_weight:
            return Validation(False, f"weight bound: term {name!r} has weight {w} outside [0, {max_weight}]")
    try:
        for term in program.terms:
            check_features(term.expr, term.name)
    except ProgramError as exc:
        return Validation(False, str(exc))
    probe = probe_eval(program, task)
    if not probe:
        return Validation(False, f"probe failed: {probe.error}")
    return Validation(True)


def residual_table(history: WeightMatrix | None) -> str:
    if history is None or history.raw.size == 0:
        return "(no earlier stages)"
    lines = []
    for j in range(history.shape[1]):
        cells = ", ".join(f"{t}={history.normalized[i, j]:.3f}" for i, t in enumerate(history.terms)
                          if history.raw[i, j] > 0)
        lines.append(f"stage {j}: {cells or '(all zero)'}")
    return "\n".join(lines)


def grammar_text() -> str:
    fns = ", ".join(sorted(FUNCTIONS))
    return (
        "stage INT\n"
        "term NAME { EXPRESSION } @ WEIGHT   (one line per term, WEIGHT >= 0)\n"
        "Expressions use numbers, signal names, indexed signals such as joint_angle(3),\n"
        "+ - * / (division by zero yields 0), comparisons < <= > >= == != (giving 1 or 0),\n"
        f"parentheses and the functions {fns}.\n"
        "Example:\n"
        "stage 1\n"
        "term forward_velocity { forward_velocity } @ 2\n"
        "term balance { -abs(balance) } @ 1"
    )


# -- mock local search ----------------------------------------------------------

def suggestion_subsets(k: int) -> list[tuple[int, ...]]:
    """All subsets of ``range(k)``, largest first, lexicographic within a size."""
    out = []
    for size in range(k, -1, -1):
        out.extend(itertools.combinations(range(k), size))
    return out


def _added_term(s, fallback_weight: float):
    hint = s.definition_hint or ""
    if hint in TERM_LIBRARY:
        term = RewardTerm(s.term_name, library_term(hint).expr)
    else:
        try:
            expr = parse_expr(hint)
            check_features(expr, s.term_name)
            term = RewardTerm(s.term_name, expr)
        except ProgramError:
            lib = library_term(s.term_name)
            if lib is None:
                return None
            term = lib
    w = fallback_weight if s.proposed_weight is None else s.proposed_weight
    return term, w


class MockSynthesizer:
    """Applies feedback suggestions to the incumbent by fixed rules, plus seeded weight jitter."""

    mode = "mock"

    def __init__(self, step: float = STEP_FACTOR, jitter: float = JITTER):
        self.step = step
        self.jitter = jitter

    def apply(self, program: RewardProgram, suggestions, max_weight: float) -> RewardProgram:
        terms = list(program.terms)
        weights = list(program.weights)
        default = 0.1 * max_weight
        for s in suggestions:
            names = [t.name for t in terms]
            present = s.term_name in names
            i = names.index(s.term_name) if present else None
            if s.action == "increase":
                if present:
                    weights[i] = min(max_weight, weights[i] * self.step if weights[i] > 0 else default)
                else:
                    lib = library_term(s.term_name)
                    if lib is not None:
                        terms.append(lib)
                        weights.append(default)
            elif s.action == "decrease":
                if present:
                    weights[i] = weights[i] / self.step
            elif s.action == "remove":
                if present and len(terms) > 1:
                    del terms[i], weights[i]
            elif s.action == "add":
                if present:
                    if s.proposed_weight is not None:
                        weights[i] = s.proposed_weight
                else:
                    added = _added_term(s, default)
                    if added is not None:
                        terms.append(added[0])
                        weights.append(added[1])
        weights = [float(np.clip(w, 0.0, max_weight)) for w in weights]
        return RewardProgram(tuple(terms), tuple(weights), program.stage_id)

    def jittered(self, program: RewardProgram, rng, max_weight: float) -> RewardProgram:
        if not self.jitter:
            return program
        factors = rng.uniform(1.0 - self.jitter, 1.0 + self.jitter, size=len(program.weights))
        return program.with_weights(float(np.clip(w * f, 0.0, max_weight)) for w, f in zip(program.weights, factors))

    def propose(self, ctx: SynthesisContext, n: int, rng, task=None, scope: str = "") -> list[Proposal]:
        if n < 1:
            raise ValueError("n must be >= 1")
        sugg = list(ctx.feedback.suggestions)
        subsets = suggestion_subsets(len(sugg))
        out = []
        for v in range(n):
            chosen = [sugg[i] for i in subsets[v % len(subsets)]]
            base = self.apply(ctx.incumbent, chosen, ctx.max_weight)
            prog = self.jittered(base, rng, ctx.max_weight).with_stage(ctx.stage)
            if task is not None and not validate(prog, task, ctx.max_weight):
                prog = self.jittered(ctx.incumbent, rng, ctx.max_weight).with_stage(ctx.stage)
            out.append(Proposal(prog, "mock", 0))
        return out


# -- endpoint writer ------------------------------------------------------------

_FENCE = re.compile(r"```(?:reward|dsl|text)?\s*\n(.*?)```", re.S)


def extract_program(text: str) -> str:
    """Program text from the first fenced block, or the whole reply if unfenced."""
    m = _FENCE.search(text or "")
    return (m.group(1) if m else (text or "")).strip() + "\n"


def coding_prompt(ctx: SynthesisContext) -> str:
    feedback = ctx.feedback if ctx.feedback is not None else EMPTY_FEEDBACK
    return load_prompt("coding").format(
        task=ctx.description.text,
        catalog=ctx.catalog,
        grammar=grammar_text(),
        program=ctx.incumbent.serialize().strip(),
        feedback_string=feedback.as_text(),
        residual_terms=residual_table(ctx.weight_history),
        max_weight=f"{ctx.max_weight:g}",
    )


class EndpointSynthesizer:
    """Asks the endpoint for ``n`` programs; unusable replies are retried with the reason attached."""

    mode = "endpoint"

    def __init__(self, transport, model: str, retries: int = RETRIES):
        self.transport = transport
        self.model = model
        self.retries = retries

    def propose(self, ctx: SynthesisContext, n: int, rng, task=None, scope: str = "synth") -> list[Proposal]:
        if n < 1:
            raise ValueError("n must be >= 1")
        if task is None:
            raise SynthesisError("endpoint synthesis needs the task to validate proposals")
        base = coding_prompt(ctx)
        out = []
        for k in range(n):
            reason = None
            for attempt in range(self.retries):
                parts = [text_part(base + f"\n\nThis is variant {k + 1} of {n}; make it distinct from the others.")]
                if reason:
                    parts.append(text_part(f"Your previous reply could not be used: {reason}. Please fix it."))
                reply = response_text(self.transport.send(chat_request(self.model, parts), f"{scope}_{k}"))
                try:
                    program = parse_program(extract_program(reply)).with_stage(ctx.stage)
                except ProgramError as exc:
                    reason = f"parse error: {exc}"
                    continue
                check = validate(program, task, ctx.max_weight)
                if not check:
                    reason = check.reason
                    continue
                out.append(Proposal(program, "endpoint", attempt))
                break
            else:
                raise SynthesisError(f"no executable program for variant {k} after {self.retries} attempts: {reason}")
        return out
