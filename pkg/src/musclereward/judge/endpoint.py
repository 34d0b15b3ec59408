"""Judge backed by a multimodal chat-completions endpoint."""
from __future__ import annotations

from importlib import resources

import numpy as np

from ..reward.features import FEATURES, catalog_summary
from ..transport import chat_request, png_part, response_text, text_part
from .feedback import Feedback, ParseError, Verdict, parse_feedback, parse_verdict
from .render import MAX_FRAMES


class JudgeError(RuntimeError):
    pass


def load_prompt(name: str) -> str:
    return resources.files("musclereward").joinpath(f"prompts/{name}.txt").read_text()


def subsample(frames, budget: int) -> list[int]:
    """Evenly spaced indices of at most ``budget`` frames."""
    n = len(frames)
    if n <= budget:
        return list(range(n))
    return [int(i) for i in np.floor(np.arange(budget) * n / budget)]


def _images(frames, budget: int) -> list[dict]:
    return [png_part(frames.to_png(i)) for i in subsample(frames, budget)]


class EndpointJudge:
    """Comparison and feedback through prompts; replies parsed strictly, with retries.

    A comparison carries at most ``MAX_FRAMES`` images in total, split evenly
    between the two motions.
    """

    mode = "endpoint"

    def __init__(self, transport, model: str, attempts: int = 3):
        self.transport = transport
        self.model = model
        self.attempts = attempts

    def _ask(self, parts, scope: str) -> str:
        body = chat_request(self.model, parts)
        return response_text(self.transport.send(body, scope))

    def compare(self, desc, challenger, incumbent, frames=None, scope: str = "compare") -> Verdict:
        if incumbent is None:
            return Verdict("first", "no incumbent yet")
        if frames is None:
            raise JudgeError("endpoint comparison needs rendered frames for both motions")
        first, second = frames
        prompt = load_prompt("select").format(task=desc.text, rate=f"{first.rate:g}")
        half = MAX_FRAMES // 2
        parts = [text_part(prompt), text_part("First motion:"), *_images(first, half),
                 text_part("Second motion:"), *_images(second, half)]
        for _ in range(self.attempts):
            reply = self._ask(parts, scope)
            try:
                return parse_verdict(reply)
            except ParseError:
                continue
        return Verdict("second", "no parseable reply; incumbent kept")

    def critique(self, desc, trajectory, program, frames=None, scope: str = "feedback") -> Feedback:
        if frames is None:
            raise JudgeError("endpoint feedback needs rendered frames")
        prompt = load_prompt("feedback").format(
            task=desc.text, rate=f"{frames.rate:g}", reward_terms=program.describe(),
            catalog=catalog_summary(),
        )
        parts = [text_part(prompt), *_images(frames, MAX_FRAMES)]
        allowed = set(program.names) | {k for k, (indexed, _) in FEATURES.items() if not indexed}
        error = None
        for _ in range(self.attempts):
            reply = self._ask(parts, scope)
            try:
                return parse_feedback(reply, allowed)
            except ParseError as exc:
                error = exc
        raise JudgeError(f"feedback reply could not be parsed after {self.attempts} attempts: {error}")
