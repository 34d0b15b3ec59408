"""Acceptance suite: one test per acceptance criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``. The loop criterion runs two
full learn runs and takes several minutes.
"""
from __future__ import annotations

import json
import math
import time
from contextlib import contextmanager

import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from musclereward import loop
from musclereward.controller import (
    PlannerConfig,
    Simulator,
    desired_forces,
    gain,
    low_level_control,
    mppi_update,
    mppi_weights,
    plan,
    posture_map,
)
from musclereward.dynamics import activation_step, dynamics_step, make_state
from musclereward.environments import arm_morphology, load_task
from musclereward.judge import MotionDescription, ParseError, diagnose, parse_verdict
from musclereward.loop import RunConfig, export_heatmap, incumbent_scores, read_heatmap_csv, run
from musclereward.reward import RewardContext, RewardProgram, RewardTerm, eval_step_reward, parse_expr, parse_program
from musclereward.transport import HttpTransport, validate_request

from conftest import FRICTIONLESS, pendulum
from test_controller import REFERENCE, posture_hold_run
from test_dynamics import pendulum_energy
from test_endpoint_run import fake_endpoint
from test_muscles import P, rk4_activation
from test_reward import programs


@contextmanager
def criterion(name: str, budget_s: float | None, capsys):
    """Time the block, print one PASS/FAIL line and fail if the runtime budget is exceeded."""
    t0 = time.perf_counter()
    status, note = "FAIL", ""
    try:
        yield
        status = "PASS"
    except BaseException as exc:
        note = f" ({type(exc).__name__})"
        raise
    finally:
        elapsed = time.perf_counter() - t0
        over = budget_s is not None and elapsed >= budget_s
        if over and status == "PASS":
            status, note = "FAIL", f" (over the {budget_s:g} s budget)"
        limit = f" < {budget_s:g} s" if budget_s is not None else ""
        with capsys.disabled():
            print(f"\n[{status}] {name}: {elapsed:.1f} s{limit}{note}")
    assert not over, f"{name} took {elapsed:.1f} s, budget {budget_s} s"


def test_activation_ode(capsys):
    with criterion("activation ODE", 5.0, capsys):
        rng = np.random.default_rng(0)
        a = rng.uniform(0, 1, 1000)
        u = rng.uniform(0, 1, 1000)
        dt = rng.uniform(1e-4, 0.05, 1000)
        got = activation_step(a, u, P, dt)
        worst = 0.0
        for i in range(1000):
            tau = P.tau_act if u[i] > a[i] else P.tau_deact
            worst = max(worst, abs(got[i] - rk4_activation(a[i], u[i], tau, dt[i])))
        assert worst <= 1e-6, worst

        seqs = rng.uniform(0, 1, (1000, 500))
        act = rng.uniform(0, 1, 1000)
        for k in range(seqs.shape[1]):
            act = activation_step(act, seqs[:, k], P, 1e-3)
            assert np.all((act >= 0.0) & (act <= 1.0))


def test_dynamics_sanity(capsys):
    with criterion("dynamics sanity", 30.0, capsys):
        arm = arm_morphology()
        q = np.random.default_rng(1).uniform(-np.pi, np.pi, (100, arm.n_q))
        M = arm.kin.mass_matrix(q)
        assert np.max(np.abs(M - np.swapaxes(M, -1, -2))) <= 1e-10
        assert np.all(np.linalg.eigvalsh(M) > 0)

        pend = pendulum()
        cfg = FRICTIONLESS
        assert cfg.dt == 1e-3
        s = make_state(pend, [math.pi / 3])
        e0 = pendulum_energy(s.q[0], s.qdot[0])
        worst = 0.0
        for _ in range(5000):
            s = dynamics_step(s, np.zeros(0), pend, cfg)
            worst = max(worst, abs(pendulum_energy(s.q[0], s.qdot[0]) - e0))
        assert worst / abs(e0) < 0.01


def test_gain_law(capsys):
    with criterion("gain law", 5.0, capsys):
        arm = arm_morphology()
        rng = np.random.default_rng(2)
        n = 100_000
        s = make_state(arm, rng.uniform(-2, 2, (n, arm.n_q)))
        z = rng.uniform(-2, 2, (n, arm.d_z))
        k_bar = rng.uniform(0, 1e6, (n, 1))
        f, K = desired_forces(s, z, arm, k_bar)
        assert np.all(K >= 0.0) and np.all(f <= 0.0)

        z0 = posture_map(s, arm)
        f0, K0 = desired_forces(s, z0, arm, k_bar)
        assert np.all(K0 == 0.0) and np.all(f0 == 0.0)
        assert np.all(low_level_control(s, z0, arm, k_bar) == 0.0)

        one = pendulum(rho=0.05)
        assert gain(make_state(one, [0.0]), np.array([0.5]), one, 100.0)[0] == 2.5


def test_planner(capsys):
    with criterion("planner", 60.0, capsys):
        @settings(max_examples=300)
        @given(st.lists(st.floats(-50, 50), min_size=2, max_size=16), st.floats(-1e3, 1e3), st.floats(0.05, 10))
        def shift_invariant(costs, shift, lam):
            c = np.array(costs)
            cands = np.arange(2.0 * len(c)).reshape(len(c), 2)
            assert np.max(np.abs(mppi_update(cands, c, lam) - mppi_update(cands, c + shift, lam))) <= 1e-12

        shift_invariant()
        for lam in (0.01, 1.0, 7.5):
            w = mppi_weights([0.0, lam * math.log(2)], lam)
            assert abs(w[0] - 2 / 3) <= 1e-12 and abs(w[1] - 1 / 3) <= 1e-12

        m = pendulum(rho=0.05, limits=(-1.0, 1.0))
        sim = Simulator(m, None, None, None, 1.0)
        s = make_state(m, [0.0])
        cost = lambda c: (c[:, 0] + 0.45) ** 2  # noqa: E731
        grid = np.linspace(*m.joint_limits[0], 4001)[:, None]
        best = grid[np.argmin(cost(grid)), 0]
        cfg = PlannerConfig(temperature=0.01)
        for seed in range(20):
            rng = np.random.default_rng(seed)
            z = None
            for _ in range(5):
                z = plan(s, None, sim, cfg, rng, z_mean=z, cost_fn=cost)
            assert abs(z[0] - best) <= cfg.noise_sigma, (seed, z[0], best)


def test_controller_regression(capsys):
    with criterion("controller regression", 60.0, capsys):
        ref = json.loads(REFERENCE.read_text())
        got = posture_hold_run(ref["seed"], seconds=2.0)
        assert got["first_time_below_0.1"] is not None and got["first_time_below_0.1"] <= 2.0
        assert got["first_time_below_0.1"] == pytest.approx(ref["first_time_below_0.1"], abs=0.05)


def test_reward_dsl(capsys):
    with criterion("reward DSL", None, capsys):
        @settings(max_examples=500)
        @given(programs())
        def round_trip(program):
            text = program.serialize()
            assert parse_program(text) == program and parse_program(text).serialize() == text

        round_trip()

        task = load_task("walker_flat")
        ctx = RewardContext.from_task(task)
        base = parse_program("term a { height } @ 1\nterm b { -abs(balance) } @ 1\n"
                             "term c { forward_velocity } @ 1\nterm d { -effort } @ 1")
        u = np.full(task.morphology.n_u, 0.3)
        rng = np.random.default_rng(4)
        for _ in range(200):
            prog = base.with_weights(rng.uniform(0, 10, 4))
            alpha = rng.uniform(0, 100)
            t0, _ = eval_step_reward(prog, task.s0, u, ctx)
            t1, _ = eval_step_reward(prog.scaled(alpha), task.s0, u, ctx)
            assert abs(t1 - alpha * t0) <= 1e-12 * max(1.0, abs(alpha * t0))

        # height, balance and forward-velocity terms as a weighted sum
        q = task.s0.q.copy()
        q[2] = 0.15
        s = make_state(task.morphology, q, qdot=np.linspace(-1, 1, task.morphology.n_q))
        w = (0.5, 1.25, 2.0)
        walk = RewardProgram((RewardTerm("height", parse_expr("height")),
                              RewardTerm("balance", parse_expr("-abs(balance)")),
                              RewardTerm("forward", parse_expr("forward_velocity"))), w)
        total, per = eval_step_reward(walk, s, np.zeros(task.morphology.n_u), ctx)
        kin = task.morphology.kin
        feet = [i for foot in task.morphology.feet for i in foot]
        support_x = kin.points(q, kin.C_contact)[feet, 0].mean()
        expected_terms = ((q[1] - task.terrain.height(q[0])) / task.nominal_height,
                          -abs(kin.com(q)[0] - support_x), s.qdot[0])
        assert (per["height"], per["balance"], per["forward"]) == expected_terms
        assert total == w[0] * expected_terms[0] + w[1] * expected_terms[1] + w[2] * expected_terms[2]


LOOP_CONFIG = dict(task_id="walker_flat", iters=8, samples=4, seed=0)


def test_loop(tmp_path, capsys):
    with criterion("loop (oracle + mock, walker_flat, N=8, samples=4)", None, capsys):
        timings = []
        for name in ("a", "b"):
            t0 = time.perf_counter()
            history = run(RunConfig(**LOOP_CONFIG, out_dir=str(tmp_path / name)))
            timings.append(time.perf_counter() - t0)
            assert timings[-1] < 15 * 60, timings
        with capsys.disabled():
            print(f"\n  run times {timings[0]:.0f} s and {timings[1]:.0f} s")
        scores = incumbent_scores(history)
        assert len(scores) == 8 and all(b >= a for a, b in zip(scores, scores[1:])), scores

        task = load_task("walker_flat", 0)
        desc = MotionDescription(task.spec.motion_description, "walker_flat", 0)
        runs = tmp_path / "b"
        recs = history["iterations"]
        dist = [diagnose(desc, loop.Trajectory.from_csv(runs / rec["incumbent"]["trajectory"], task.s0,
                                                        task.sim.control_dt)).distance for rec in (recs[0], recs[-1])]
        with capsys.disabled():
            print(f"  iteration-0 distance {dist[0]:.3f} m, final {dist[1]:.3f} m, ratio {dist[1] / dist[0]:.2f}")
        assert dist[0] > 0 and dist[1] >= 1.5 * dist[0], dist
        assert (tmp_path / "a" / "history.json").read_bytes() == (runs / "history.json").read_bytes()


def test_heatmap(tmp_path, capsys):
    with criterion("heatmap export", None, capsys):
        history = run(RunConfig(task_id="walker_flat", iters=5, samples=3, duration_s=0.5, planner={"n_samples": 8},
                                out_dir=str(tmp_path / "run")))
        paths = export_heatmap(tmp_path / "run", tmp_path / "hm")
        terms, m = read_heatmap_csv(paths["csv"])
        progs = [parse_program(rec["incumbent"]["text"]) for rec in history["iterations"]]
        union = sorted({n for p in progs for n in p.names}, key=lambda n: min(
            (j, p.names.index(n)) for j, p in enumerate(progs) if n in p.names))
        assert terms == union and m.shape == (len(union), 5)
        for j, p in enumerate(progs):
            if sum(p.weights) > 0:
                assert abs(m[:, j].sum() - 1.0) <= 1e-12
        _, raw = read_heatmap_csv(paths["raw"])
        for j, p in enumerate(progs):
            assert [raw[i, j] for i, n in enumerate(terms) if n in p.names] == [p.weight(n) for n in terms
                                                                               if n in p.names]
        copy = tmp_path / "copy.csv"
        lines = ["term," + ",".join(f"stage_{j}" for j in range(m.shape[1]))]
        lines += [n + "," + ",".join(repr(float(x)) for x in row) for n, row in zip(terms, m)]
        copy.write_text("\n".join(lines) + "\n")
        assert copy.read_bytes() == paths["csv"].read_bytes()
        t2, m2 = read_heatmap_csv(copy)
        assert t2 == terms and np.array_equal(m2, m)


def test_endpoint_clients(tmp_path, monkeypatch, capsys):
    with criterion("endpoint clients", None, capsys):
        client = httpx.Client(transport=httpx.MockTransport(fake_endpoint([])))

        class Mocked(HttpTransport):
            def __init__(self, config, client_=None):
                super().__init__(config, client)

        monkeypatch.setattr(loop, "HttpTransport", Mocked)
        monkeypatch.setenv("MUSCLEREWARD_ENDPOINT_URL", "http://vlm.local/v1")
        monkeypatch.setenv("MUSCLEREWARD_MODEL", "model-test")
        cfg = dict(task_id="walker_flat", iters=2, samples=2, duration_s=0.3, planner={"n_samples": 8},
                   judge="endpoint", synth="endpoint")
        run(RunConfig(**cfg, out_dir=str(tmp_path / "live")))
        bodies = [json.loads(p.read_text())["request"] for p in (tmp_path / "live").rglob("transcripts/*.json")]
        assert bodies
        for body in bodies:
            validate_request(body)

        monkeypatch.delenv("MUSCLEREWARD_ENDPOINT_URL")
        run(RunConfig(**cfg, out_dir=str(tmp_path / "replay"), replay_dir=str(tmp_path / "live")))
        assert (tmp_path / "replay" / "history.json").read_bytes() == (tmp_path / "live" / "history.json").read_bytes()

        for reply, choice in (("first", "first"), ("second", "second"), ("Second, it is steadier.", "second")):
            assert parse_verdict(reply).choice == choice
        for reply in ("firstly", "the first", "I pick second", "", "none"):
            with pytest.raises(ParseError):
                parse_verdict(reply)
