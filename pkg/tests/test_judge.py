from __future__ import annotations

import json

import numpy as np
import pytest

from musclereward.dynamics import Trajectory
from musclereward.environments import load_task
from musclereward.judge import (
    EMPTY_FEEDBACK,
    EndpointJudge,
    Feedback,
    FrameSequence,
    JudgeError,
    MotionDescription,
    OracleJudge,
    ParseError,
    Suggestion,
    Verdict,
    compare,
    critique,
    frame_count,
    oracle_score,
    parse_feedback,
    parse_verdict,
    read_ppm,
    render_frames,
    task_target,
)
from musclereward.judge.endpoint import subsample
from musclereward.reward import parse_program
from musclereward.transport import Transport, validate_request

WALKER = load_task("walker_flat")
ARM = load_task("arm_reorient")
WALK_DESC = MotionDescription(WALKER.spec.motion_description, "walker_flat", 0)
ARM_DESC = MotionDescription(ARM.spec.motion_description, "arm_reorient", 0)


def walker_traj(x, height=None, u=0.0, lean=0.0, seconds=10.0):
    """Crafted walker rollout: pelvis x per row, pelvis height above ground per row."""
    n = len(x)
    q = np.repeat(WALKER.s0.q[None], n, axis=0)
    q[:, 0] = x
    q[:, 1] = WALKER.s0.q[1] if height is None else height
    q[:, 2] = lean
    m = WALKER.morphology
    return Trajectory(WALKER.s0, np.arange(1, n + 1) * seconds / n, q, np.zeros_like(q), np.zeros((n, m.n_u)),
                      np.full((n, m.n_u), u), {}, np.zeros(n), control_dt=seconds / n)


def arm_traj(pos_err, ori_err, n=50):
    m = ARM.morphology
    pose = np.zeros((n, 3))
    tx, ty = ARM.spec.target_position
    pose[:, 0] = tx + pos_err
    pose[:, 1] = ty
    pose[:, 2] = ARM.spec.target_orientation + ori_err
    q = np.repeat(ARM.s0.q[None], n, axis=0)
    return Trajectory(ARM.s0, np.arange(1, n + 1) * 0.01, q, np.zeros_like(q), np.zeros((n, m.n_u)),
                      np.zeros((n, m.n_u)), {}, np.zeros(n), obj_pose=pose, obj_grasped=np.ones(n, bool))


# -- oracle -------------------------------------------------------------------------

def test_displacement_score():
    traj = walker_traj(np.linspace(0, 2.4, 1000))
    assert oracle_score(WALK_DESC, traj) == pytest.approx(2.4, abs=1e-12)


def test_fall_stops_the_count():
    t = np.arange(1, 1001) * 0.01
    x = np.where(t <= 3.0, 0.8 * t / 3.0, 0.8 + (t - 3.0))
    h = np.where(t < 3.0 - 1e-9, WALKER.s0.q[1], 0.2 * WALKER.nominal_height)
    assert oracle_score(WALK_DESC, walker_traj(x, h)) == pytest.approx(0.8, abs=1e-12)


def test_perfect_manipulation_scores_zero():
    assert oracle_score(ARM_DESC, arm_traj(0.0, 0.0)) == pytest.approx(0.0, abs=1e-12)
    assert oracle_score(ARM_DESC, arm_traj(0.1, 0.2)) == pytest.approx(-0.2, abs=1e-12)


def test_unknown_task_binding_raises():
    with pytest.raises(KeyError):
        oracle_score(MotionDescription("fly", "bird_sky"), walker_traj(np.zeros(5)))


def test_compare_rules():
    good, bad = walker_traj(np.linspace(0, 2.0, 100)), walker_traj(np.linspace(0, 1.0, 100))
    assert compare(WALK_DESC, good, bad).choice == "first"
    assert compare(WALK_DESC, bad, good).choice == "second"
    assert compare(WALK_DESC, good, good).choice == "second"
    assert compare(WALK_DESC, bad, None).choice == "first"
    assert OracleJudge().compare(WALK_DESC, good, bad).challenger_wins


def test_critique_of_a_fall():
    t = np.arange(1, 1001) * 0.01
    x = np.minimum(0.1, 0.1 * t)
    h = np.where(t < 1.0 - 1e-9, WALKER.s0.q[1], 0.1)
    traj = walker_traj(x, h)
    with_balance = parse_program("term balance { -abs(balance) } @ 1\nterm fwd { forward_velocity } @ 1")
    fb = critique(WALK_DESC, traj, with_balance)
    assert not fb.task_success
    assert Suggestion("balance", "increase") in fb.suggestions
    assert fb.suggestions[0].term_name == "balance"
    fb = critique(WALK_DESC, traj, parse_program("term fwd { forward_velocity } @ 1"))
    added = {s.term_name: s for s in fb.suggestions}
    assert added["balance"].action == "add" and added["balance"].definition_hint
    assert "forward_velocity" in added
    assert fb == critique(WALK_DESC, traj, parse_program("term fwd { forward_velocity } @ 1"))


def test_critique_flags_lean_and_effort():
    traj = walker_traj(np.linspace(0, 6.0, 1000), lean=0.5, u=0.8)
    fb = critique(WALK_DESC, traj, parse_program("term effort { -effort } @ 1"))
    assert fb.task_success
    names = [s.term_name for s in fb.suggestions]
    assert "torso_uprightness" in names and "effort" in names
    assert Suggestion("effort", "increase") in fb.suggestions


def test_manipulation_success_needs_no_suggestions():
    fb = critique(ARM_DESC, arm_traj(0.001, 0.002), parse_program("term p { -target_position_error } @ 1"))
    assert fb.task_success and fb.suggestions == ()


def test_manipulation_dominant_error_picks_the_term():
    prog = parse_program("term target_position_error { -target_position_error } @ 1\n"
                         "term target_orientation_error { -target_orientation_error } @ 1")
    assert critique(ARM_DESC, arm_traj(0.2, 0.01), prog).suggestions == (Suggestion("target_position_error", "increase"),)
    assert critique(ARM_DESC, arm_traj(0.01, 0.6), prog).suggestions == (
        Suggestion("target_orientation_error", "increase"),)


def test_compare_antisymmetric_when_scores_differ():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = rng.uniform(0, 3, 2)
        ta, tb = walker_traj(np.linspace(0, a, 50)), walker_traj(np.linspace(0, b, 50))
        assert compare(WALK_DESC, ta, tb).choice != compare(WALK_DESC, tb, ta).choice


# -- rendering -------------------------------------------------------------------------

def test_frame_counts():
    assert frame_count(10.0, 10.0) == 100
    assert frame_count(1.0, 10.0) == 10
    assert frame_count(30.0, 10.0) == 100
    traj = walker_traj(np.linspace(0, 1, 1000))
    assert len(render_frames(traj, WALKER.morphology, WALKER.terrain, 10.0)) == 100
    short = walker_traj(np.linspace(0, 1, 100), seconds=1.0)
    assert len(render_frames(short, WALKER.morphology, WALKER.terrain, 10.0)) == 10


def test_rendering_is_deterministic_and_static_states_repeat():
    traj = walker_traj(np.zeros(100), seconds=1.0)
    a = render_frames(traj, WALKER.morphology, WALKER.terrain)
    b = render_frames(traj, WALKER.morphology, WALKER.terrain)
    assert np.array_equal(a.frames, b.frames)
    assert all(np.array_equal(a.frames[0], f) for f in a.frames)
    assert a.size == (320, 240)


def test_camera_follows_torso():
    traj = walker_traj(np.linspace(0, 5, 100), seconds=1.0)
    fs = render_frames(traj, WALKER.morphology, WALKER.terrain)
    centres = fs.windows[:, :2].mean(axis=1)
    assert np.allclose(centres, traj.q[::10, 0])


def test_arm_frames_show_target(tmp_path):
    traj = arm_traj(0.05, 0.1)
    fs = render_frames(traj, ARM.morphology, ARM.terrain, 10.0, task_target(ARM))
    assert np.any(np.all(fs.frames[0] == (20, 150, 60), axis=-1))
    ppm = fs.to_ppm(0)
    assert np.array_equal(read_ppm(ppm), fs.frames[0])
    fs.save(tmp_path)
    back = FrameSequence.load(tmp_path)
    assert np.array_equal(back.frames, fs.frames)


# -- reply parsers ---------------------------------------------------------------------

@pytest.mark.parametrize("reply, choice", [("first", "first"), ("second", "second"), ("First.", "first"),
                                           ('  "second" because it walks', "second"), ("**first**", "first")])
def test_verdict_accepts_leading_token(reply, choice):
    assert parse_verdict(reply).choice == choice


@pytest.mark.parametrize("reply", ["", "firstly", "the first one", "I choose second", "neither", "2nd"])
def test_verdict_rejects_anything_else(reply):
    with pytest.raises(ParseError):
        parse_verdict(reply)


def test_verdict_type_guards_choice():
    with pytest.raises(ValueError):
        Verdict("third")


FEEDBACK_REPLY = """YES
The walker drifts left and its steps are short.
```json
{"suggestions": [
  {"term_name": "forward_velocity", "action": "increase"},
  {"term_name": "effort", "action": "add", "proposed_weight": 0.2, "definition_hint": "-effort"},
  {"term_name": "teleport", "action": "add", "definition_hint": "teleport"},
  {"term_name": "height", "action": "jump"}
]}
```"""


def test_feedback_parser():
    fb = parse_feedback(FEEDBACK_REPLY, {"forward_velocity", "effort", "height"})
    assert fb.task_success
    assert fb.issues == "The walker drifts left and its steps are short."
    assert fb.suggestions == (Suggestion("forward_velocity", "increase"),
                              Suggestion("effort", "add", 0.2, "-effort"))
    assert len(fb.dropped) == 2
    assert parse_feedback("no, it falls over").task_success is False


@pytest.mark.parametrize("reply", ["", "Maybe it works", "Yesterday it walked"])
def test_feedback_needs_yes_or_no(reply):
    with pytest.raises(ParseError):
        parse_feedback(reply)


def test_feedback_round_trip_and_text():
    fb = parse_feedback(FEEDBACK_REPLY, {"forward_velocity", "effort"})
    assert Feedback.from_dict(json.loads(json.dumps(fb.to_dict()))) == fb
    text = fb.as_text()
    assert text.startswith("Task success: YES") and "add effort (weight 0.2, definition: -effort)" in text
    assert EMPTY_FEEDBACK.suggestions == ()


def test_suggestion_invariants():
    with pytest.raises(ValueError):
        Suggestion("x", "add")
    with pytest.raises(ValueError):
        Suggestion("x", "increase", -1.0)
    with pytest.raises(ValueError):
        Suggestion("x", "grow")


# -- endpoint judge with a scripted transport ----------------------------------------

class Scripted(Transport):
    def __init__(self, replies):
        self.replies = list(replies)
        self.bodies = []

    def _send(self, body, scope):
        self.bodies.append((scope, body))
        text = self.replies.pop(0)
        return {"choices": [{"message": {"role": "assistant", "content": text}}]}


def _frames(n, seconds=10.0):
    return render_frames(walker_traj(np.linspace(0, 1, n), seconds=seconds), WALKER.morphology, WALKER.terrain)


def test_endpoint_compare_budget_and_schema():
    t = Scripted(["second"])
    judge = EndpointJudge(t, "vlm-test")
    v = judge.compare(WALK_DESC, None, object(), frames=(_frames(1000), _frames(1000)))
    assert v.choice == "second"
    scope, body = t.bodies[0]
    validate_request(body)
    parts = body["messages"][0]["content"]
    images = [p for p in parts if p["type"] == "image_url"]
    assert len(images) == 100
    texts = [p["text"] for p in parts if p["type"] == "text"]
    assert '"first"' in texts[0] and '"second"' in texts[0]


def test_endpoint_compare_retries_then_keeps_incumbent():
    t = Scripted(["hmm", "maybe", "unclear"])
    v = EndpointJudge(t, "m", attempts=3).compare(WALK_DESC, None, object(), frames=(_frames(50), _frames(50)))
    assert v.choice == "second" and len(t.bodies) == 3
    t = Scripted(["junk", "first it is"])
    assert EndpointJudge(t, "m").compare(WALK_DESC, None, object(), frames=(_frames(50), _frames(50))).choice == "first"


def test_endpoint_compare_without_incumbent_skips_the_call():
    t = Scripted([])
    assert EndpointJudge(t, "m").compare(WALK_DESC, None, None).choice == "first"
    assert t.bodies == []


def test_endpoint_critique_parses_and_raises():
    prog = parse_program("term forward_velocity { forward_velocity } @ 1")
    t = Scripted(["nonsense", FEEDBACK_REPLY])
    fb = EndpointJudge(t, "m").critique(WALK_DESC, None, prog, frames=_frames(100))
    assert fb.task_success and fb.suggestions[0].term_name == "forward_velocity"
    prompt = t.bodies[0][1]["messages"][0]["content"][0]["text"]
    assert "forward_velocity (weight 1.0)" in prompt and "YES" in prompt
    with pytest.raises(JudgeError):
        EndpointJudge(Scripted(["a", "b", "c"]), "m").critique(WALK_DESC, None, prog, frames=_frames(10))


def test_subsample_is_even_and_bounded():
    idx = subsample(range(1000), 50)
    assert len(idx) == 50 and idx[0] == 0 and np.all(np.diff(idx) == 20)
    assert subsample(range(7), 50) == list(range(7))
