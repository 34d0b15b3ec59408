from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from musclereward.environments import load_task
from musclereward.judge import EMPTY_FEEDBACK, Feedback, MotionDescription, Suggestion
from musclereward.reward import parse_program, weight_matrix
from musclereward.synthesis import (
    EndpointSynthesizer,
    MockSynthesizer,
    SynthesisContext,
    SynthesisError,
    coding_prompt,
    extract_program,
    suggestion_subsets,
    validate,
)
from musclereward.transport import Transport, validate_request

TASK = load_task("walker_flat")
DESC = MotionDescription(TASK.spec.motion_description, "walker_flat", 0)
INCUMBENT = parse_program("term forward_velocity { forward_velocity } @ 0.5\nterm balance { -abs(balance) } @ 2")
EXACT = MockSynthesizer(jitter=0.0)


def fb(*suggestions, success=False):
    return Feedback(success, "", tuple(suggestions))


def test_increase_multiplies_by_step():
    out = EXACT.apply(INCUMBENT, [Suggestion("forward_velocity", "increase")], 10.0)
    assert out.weight("forward_velocity") == 0.75 and out.weight("balance") == 2.0


def test_add_uses_proposed_weight_and_hint():
    out = EXACT.apply(INCUMBENT, [Suggestion("effort", "add", 0.2, "-effort")], 10.0)
    assert out.names == ("forward_velocity", "balance", "effort")
    assert out.weight("effort") == 0.2
    assert out.serialize() == parse_program(out.serialize()).serialize()


def test_add_without_weight_defaults_to_a_tenth_of_the_bound():
    out = EXACT.apply(INCUMBENT, [Suggestion("effort", "add", None, "effort")], 10.0)
    assert out.weight("effort") == 1.0


def test_decrease_remove_and_clamp():
    out = EXACT.apply(INCUMBENT, [Suggestion("balance", "decrease"), Suggestion("forward_velocity", "remove")], 10.0)
    assert out.names == ("balance",) and out.weight("balance") == pytest.approx(2 / 1.5, rel=1e-15)
    single = parse_program("term a { height } @ 8")
    assert EXACT.apply(single, [Suggestion("a", "remove")], 10.0) == single
    assert EXACT.apply(single, [Suggestion("a", "increase")], 10.0).weight("a") == 10.0


def test_unknown_add_without_usable_hint_is_skipped():
    out = EXACT.apply(INCUMBENT, [Suggestion("made_up", "add", 1.0, "warp_drive + 1")], 10.0)
    assert out == INCUMBENT


@given(st.floats(0, 10), st.floats(1, 10))
def test_increase_never_lowers_a_weight(w, bound):
    w = min(w, bound)
    prog = parse_program(f"term a {{ height }} @ {w!r}")
    assert EXACT.apply(prog, [Suggestion("a", "increase")], bound).weight("a") >= w


def test_subset_order():
    assert suggestion_subsets(2) == [(0, 1), (0,), (1,), ()]
    assert len(suggestion_subsets(4)) == 16


def test_empty_feedback_gives_seeded_jitter_variants():
    ctx = SynthesisContext(DESC, EMPTY_FEEDBACK, INCUMBENT, stage=1)
    a = MockSynthesizer().propose(ctx, 3, np.random.default_rng(5), TASK)
    b = MockSynthesizer().propose(ctx, 3, np.random.default_rng(5), TASK)
    assert [p.program for p in a] == [p.program for p in b]
    assert len({p.program.weights for p in a}) == 3
    for p in a:
        assert p.program.names == INCUMBENT.names and p.program.stage_id == 1 and p.provenance == "mock"
        ratio = np.array(p.program.weights) / np.array(INCUMBENT.weights)
        assert np.all((ratio >= 0.9) & (ratio <= 1.1))


def test_variants_walk_the_suggestion_subsets():
    ctx = SynthesisContext(DESC, fb(Suggestion("forward_velocity", "increase"), Suggestion("effort", "add", 0.2,
                                                                                              "-effort")), INCUMBENT)
    props = EXACT.propose(ctx, 5, np.random.default_rng(0), TASK)
    assert [p.program.names for p in props] == [
        ("forward_velocity", "balance", "effort"), ("forward_velocity", "balance"),
        ("forward_velocity", "balance", "effort"), ("forward_velocity", "balance"),
        ("forward_velocity", "balance", "effort")]
    assert props[1].program.weight("forward_velocity") == 0.75
    assert props[3].program == INCUMBENT


def test_validate_examples():
    assert validate(INCUMBENT, TASK)
    too_big = validate(INCUMBENT.with_weights([0.5, 20.0]), TASK, 10.0)
    assert not too_big and "balance" in too_big.reason
    assert not validate("term a { warp_drive } @ 1", TASK)
    assert not validate("term a { height + } @ 1", TASK).accepted
    assert not validate("term a { exp(1000000 * height) } @ 1", TASK)


def test_context_checks_bound():
    with pytest.raises(ValueError):
        SynthesisContext(DESC, EMPTY_FEEDBACK, INCUMBENT, max_weight=0.0)


# -- endpoint writer --------------------------------------------------------------

class Scripted(Transport):
    def __init__(self, replies):
        self.replies = list(replies)
        self.bodies = []

    def _send(self, body, scope):
        self.bodies.append((scope, body))
        return {"choices": [{"message": {"content": self.replies.pop(0)}}]}


GOOD = "Here you go:\n```\nterm forward_velocity { forward_velocity } @ 3\nterm upright { -abs(balance) } @ 1\n```"


def test_extract_program():
    assert extract_program(GOOD).startswith("term forward_velocity")
    assert extract_program("term a { height } @ 1") == "term a { height } @ 1\n"


def test_endpoint_retries_with_reason_then_succeeds():
    t = Scripted(["I think you should walk faster.", "```\nterm a { height } @ 99\n```", GOOD])
    ctx = SynthesisContext(DESC, fb(Suggestion("forward_velocity", "increase")), INCUMBENT, stage=2)
    props = EndpointSynthesizer(t, "llm").propose(ctx, 1, np.random.default_rng(0), TASK, scope="it01/synth")
    assert len(props) == 1 and props[0].attempt == 2 and props[0].provenance == "endpoint"
    assert props[0].program.stage_id == 2 and props[0].program.weight("forward_velocity") == 3.0
    assert [s for s, _ in t.bodies] == ["it01/synth_0"] * 3
    for _, body in t.bodies:
        validate_request(body)
    retry_text = t.bodies[2][1]["messages"][0]["content"][-1]["text"]
    assert "weight bound" in retry_text


def test_endpoint_gives_up_after_five_attempts():
    t = Scripted(["nothing useful"] * 5)
    ctx = SynthesisContext(DESC, EMPTY_FEEDBACK, INCUMBENT)
    with pytest.raises(SynthesisError, match="5 attempts"):
        EndpointSynthesizer(t, "llm").propose(ctx, 1, np.random.default_rng(0), TASK)
    assert len(t.bodies) == 5


def test_coding_prompt_carries_context():
    hist = weight_matrix([INCUMBENT])
    ctx = SynthesisContext(DESC, fb(Suggestion("effort", "add", 0.2, "-effort")), INCUMBENT, hist, 10.0)
    text = coding_prompt(ctx)
    assert DESC.text in text and "forward_velocity" in text and "stage 0:" in text
    assert "add effort" in text and "10" in text
