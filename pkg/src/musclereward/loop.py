"""Iterative reward refinement: plan and roll out, judge, critique, propose, repeat.

Run directory layout::

    config.json              full RunConfig
    initial.reward           r0
    history.json             RunHistory (no wall-clock values)
    timings.json             wall-clock durations
    heatmap.csv              per-stage normalised incumbent weights (terms x stages)
    heatmap_raw.csv          the same, unnormalised
    heatmap.svg
    iter_000/
        p0.reward ...        programs evaluated in this iteration
        p0.csv ...           their rollouts
        frames_p0/ ...       rendered frames (frame_000.png, ...)
        verdict_p0.json ...  comparison against the incumbent
        feedback.json        critique of the incumbent after the iteration
        next_p0.reward ...   proposals for the following iteration
        transcripts/         endpoint exchanges (endpoint modes only)
"""
from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .controller import mpc_policy, task_planner
from .dynamics.rollout import rollout
from .dynamics.trajectory import Trajectory
from .environments import TASK_IDS, load_task
from .judge import (
    EMPTY_FEEDBACK,
    EndpointJudge,
    Feedback,
    FrameSequence,
    MotionDescription,
    OracleJudge,
    Verdict,
    oracle_score,
    render_frames,
    task_target,
)
from .reward.features import RewardContext
from .reward.program import RewardProgram, parse_program, weight_matrix
from .synthesis import MAX_WEIGHT, EndpointSynthesizer, MockSynthesizer, SynthesisContext, validate
from .transport import EndpointConfig, HttpTransport, RecordingTransport, ReplayTransport

HISTORY_FORMAT = 1

DEFAULT_PROGRAMS = {
    "walker": (
        "stage 0\n"
        "term forward_velocity { forward_velocity } @ 1\n"
        "term height { min(height, 1.0) } @ 1\n"
        "term torso_uprightness { torso_uprightness } @ 1\n"
        "term effort { -effort } @ 0.1\n"
    ),
    "arm_reach": (
        "stage 0\n"
        "term grasp_distance { -grasp_distance } @ 2\n"
        "term target_position_error { -target_position_error } @ 2\n"
        "term effort { -effort } @ 0.1\n"
    ),
    "arm_reorient": (
        "stage 0\n"
        "term grasp_distance { -grasp_distance } @ 2\n"
        "term target_position_error { -target_position_error } @ 2\n"
        "term target_orientation_error { -target_orientation_error } @ 1\n"
        "term effort { -effort } @ 0.1\n"
    ),
}


def default_program(task_id: str) -> str:
    return DEFAULT_PROGRAMS["walker" if task_id.startswith("walker") else task_id]


class RunError(RuntimeError):
    pass


class CorruptHistoryError(RunError):
    pass


# purpose codes for derived random streams
_PLANNER, _SYNTH = 0, 1


@dataclass
class RunConfig:
    task_id: str = "walker_flat"
    iters: int = 8
    samples: int = 4
    seed: int = 0
    sim_seed: int | None = None  # task instance (terrain) seed; defaults to seed
    planner_seed: int | None = None
    synth_seed: int | None = None
    judge: str = "oracle"  # oracle | endpoint
    synth: str = "mock"  # mock | endpoint
    initial_program: str | None = None  # path to r0; None uses the task default
    out_dir: str = "run"
    duration_s: float | None = None  # None: task horizon
    planner: dict = field(default_factory=dict)  # PlannerConfig overrides
    max_weight: float = MAX_WEIGHT
    frame_rate: float = 10.0
    judge_model: str | None = None  # endpoint modes; None reads the environment
    synth_model: str | None = None
    replay_dir: str | None = None  # answer endpoint requests from this run's transcripts
    jobs: int = 1

    def __post_init__(self):
        if self.task_id not in TASK_IDS:
            raise ValueError(f"unknown task_id {self.task_id!r}")
        if self.iters < 1 or self.samples < 1:
            raise ValueError("iters and samples must be >= 1")
        if self.judge not in ("oracle", "endpoint") or self.synth not in ("mock", "endpoint"):
            raise ValueError("judge is oracle|endpoint and synth is mock|endpoint")
        if self.duration_s is not None and not self.duration_s > 0:
            raise ValueError("duration_s must be positive")

    def seeds(self) -> dict:
        return {
            "sim": self.seed if self.sim_seed is None else self.sim_seed,
            "planner": self.seed if self.planner_seed is None else self.planner_seed,
            "synth": self.seed if self.synth_seed is None else self.synth_seed,
        }

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def recorded(self) -> dict:
        """The part of the config that determines results (goes into history.json)."""
        d = self.to_dict()
        for k in ("out_dir", "replay_dir", "jobs", "initial_program"):
            d.pop(k)
        d["seeds"] = self.seeds()
        return d


# -- helpers ---------------------------------------------------------------------

def _write_json(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    os.replace(tmp, path)


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def steps_for(task, duration_s: float | None) -> int:
    duration = task.spec.horizon_s if duration_s is None else duration_s
    return max(1, int(round(duration / task.sim.control_dt)))


def evaluate_program(task_id: str, sim_seed: int, program_text: str, planner: dict, policy_seed: int,
                     steps: int) -> Trajectory:
    """Plan with MPC under ``program`` and roll out; picklable for worker processes."""
    task = load_task(task_id, sim_seed)
    program = parse_program(program_text)
    policy = mpc_policy(program, task, task_planner(task, **planner), seed=policy_seed)
    traj = rollout(policy, task.s0, steps, task.morphology, task.sim, program, task.terrain,
                   RewardContext.from_task(task))
    traj.meta["policy_seed"] = policy_seed
    return traj


def _render(task, traj, rate):
    return render_frames(traj, task.morphology, task.terrain, rate, task_target(task))


def make_judge(config: RunConfig, run_dir: Path):
    if config.judge == "oracle":
        return OracleJudge()
    return EndpointJudge(_transport(config, run_dir, "judge"), config.judge_model)


def make_synth(config: RunConfig, run_dir: Path):
    if config.synth == "mock":
        return MockSynthesizer()
    return EndpointSynthesizer(_transport(config, run_dir, "synth"), config.synth_model)


def _transport(config: RunConfig, run_dir: Path, role: str):
    if config.replay_dir:
        inner = ReplayTransport(config.replay_dir)
    else:
        inner = HttpTransport(EndpointConfig.from_env(role))
    return RecordingTransport(inner, run_dir)


def _resolve_models(config: RunConfig) -> None:
    for role, attr, mode in (("judge", "judge_model", config.judge), ("synth", "synth_model", config.synth)):
        if mode == "endpoint" and getattr(config, attr) is None:
            if config.replay_dir:
                recorded = json.loads((Path(config.replay_dir) / "config.json").read_text())
                setattr(config, attr, recorded.get(attr))
            else:
                setattr(config, attr, EndpointConfig.from_env(role).model)


# -- heatmap ---------------------------------------------------------------------

def incumbent_programs(run_dir, history: dict) -> list[RewardProgram]:
    run_dir = Path(run_dir)
    return [parse_program((run_dir / rec["incumbent"]["program"]).read_text()) for rec in history["iterations"]]


def _csv_matrix(path: Path, terms, matrix) -> None:
    lines = ["term," + ",".join(f"stage_{j}" for j in range(matrix.shape[1]))]
    for name, row in zip(terms, matrix):
        lines.append(name + "," + ",".join(repr(float(x)) for x in row))
    path.write_text("\n".join(lines) + "\n")


def read_heatmap_csv(path) -> tuple[list[str], np.ndarray]:
    lines = Path(path).read_text().splitlines()
    terms, rows = [], []
    for line in lines[1:]:
        name, *vals = line.split(",")
        terms.append(name)
        rows.append([float(v) for v in vals])
    ncols = len(lines[0].split(",")) - 1
    return terms, np.array(rows, dtype=float).reshape(len(terms), ncols)


def heatmap_svg(terms, matrix, cell: int = 36, label: int = 170) -> str:
    """Heatmap of a (terms x stages) matrix in [0, 1], darker is larger."""
    n_t, n_s = matrix.shape
    width = label + cell * n_s + 20
    height = 30 + cell * n_t + 30
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">']
    for j in range(n_s):
        x = label + j * cell + cell / 2
        out.append(f'<text x="{x:.1f}" y="20" text-anchor="middle">{j}</text>')
    for i, name in enumerate(terms):
        y = 30 + i * cell
        out.append(f'<text x="{label - 6}" y="{y + cell / 2 + 4:.1f}" text-anchor="end">{name}</text>')
        for j in range(n_s):
            v = float(np.clip(matrix[i, j], 0.0, 1.0))
            shade = int(round(255 * (1.0 - v)))
            fill = f"rgb({shade},{shade},255)"
            x = label + j * cell
            out.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}" stroke="#888"/>')
            ink = "#fff" if v > 0.5 else "#000"
            out.append(f'<text x="{x + cell / 2:.1f}" y="{y + cell / 2 + 4:.1f}" text-anchor="middle" '
                       f'fill="{ink}" font-size="9">{v:.2f}</text>')
    out.append(f'<text x="{label + cell * n_s / 2:.1f}" y="{height - 8}" text-anchor="middle">stage</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def export_heatmap(run_dir, out_dir=None) -> dict:
    """Write heatmap.csv, heatmap_raw.csv and heatmap.svg for a run; returns the paths."""
    run_dir = Path(run_dir)
    out_dir = run_dir if out_dir is None else Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    history = load_history(run_dir)
    if not history["iterations"]:
        raise RunError("history has no completed iterations")
    wm = weight_matrix(incumbent_programs(run_dir, history))
    paths = {"csv": out_dir / "heatmap.csv", "raw": out_dir / "heatmap_raw.csv", "svg": out_dir / "heatmap.svg"}
    _csv_matrix(paths["csv"], wm.terms, wm.normalized)
    _csv_matrix(paths["raw"], wm.terms, wm.raw)
    paths["svg"].write_text(heatmap_svg(wm.terms, wm.normalized))
    return paths


# -- persistence -------------------------------------------------------------------

def load_history(run_dir) -> dict:
    path = Path(run_dir) / "history.json"
    if not path.exists():
        raise CorruptHistoryError(f"{path} not found")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptHistoryError(f"{path} is not valid JSON: {exc}") from None


def check_history(run_dir, history: dict) -> None:
    """Raise CorruptHistoryError naming the first record whose files are missing or inconsistent."""
    run_dir = Path(run_dir)
    for pos, rec in enumerate(history.get("iterations", [])):
        label = f"iteration record {pos}"
        if rec.get("index") != pos:
            raise CorruptHistoryError(f"{label}: index {rec.get('index')} breaks the contiguous sequence")
        needed = [rec["feedback_file"], rec["incumbent"]["program"], rec["incumbent"]["trajectory"]]
        needed += rec["next_programs"] + rec.get("transcripts", [])
        for p in rec["proposals"]:
            needed += [p["program"], p["trajectory"], p["verdict_file"]]
            frames = run_dir / p["frames"]
            if len(list(frames.glob("frame_*.png"))) != p["n_frames"]:
                raise CorruptHistoryError(f"{label}: frame set {p['frames']} is incomplete")
        for rel in needed:
            if not (run_dir / rel).exists():
                raise CorruptHistoryError(f"{label}: missing file {rel}")


@dataclass
class _Incumbent:
    program: RewardProgram
    trajectory: Trajectory
    frames: FrameSequence
    score: float
    where: tuple[int, int]
    program_path: str
    trajectory_path: str


class Runner:
    def __init__(self, config: RunConfig, run_dir: Path):
        self.config = config
        self.run_dir = run_dir
        self.seeds = config.seeds()
        self.task = load_task(config.task_id, self.seeds["sim"])
        self.desc = MotionDescription(self.task.spec.motion_description, config.task_id, self.seeds["sim"])
        self.steps = steps_for(self.task, config.duration_s)
        self.judge = make_judge(config, run_dir)
        self.synth = make_synth(config, run_dir)
        self.history: dict = {}
        self.timings: dict = {"iterations": []}
        self.incumbent: _Incumbent | None = None
        self.pending: list[tuple[str, RewardProgram, int]] = []  # (provenance, program, attempt)

    # rollouts
    def _rollouts(self, i: int, programs: list[RewardProgram]) -> list[Trajectory]:
        jobs = [(self.config.task_id, self.seeds["sim"], p.serialize(), dict(self.config.planner),
                 _derived_seed(self.seeds["planner"], i, _PLANNER, k), self.steps) for k, p in enumerate(programs)]
        if self.config.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=min(self.config.jobs, len(jobs))) as pool:
                return list(pool.map(evaluate_program, *zip(*jobs)))
        return [evaluate_program(*job) for job in jobs]

    def _load_traj(self, rel: str) -> Trajectory:
        return Trajectory.from_csv(self.run_dir / rel, self.task.s0, self.task.sim.control_dt)

    def _synthesize(self, i: int, feedback: Feedback, incumbent: RewardProgram, n: int, stage: int):
        progs = incumbent_programs(self.run_dir, self.history)
        ctx = SynthesisContext(self.desc, feedback, incumbent, weight_matrix(progs) if progs else None,
                               self.config.max_weight, stage)
        rng = np.random.default_rng([self.seeds["synth"], i, _SYNTH])
        return self.synth.propose(ctx, n, rng, self.task, scope=f"iter_{i:03d}/transcripts/synth")

    def iteration(self, i: int) -> None:
        cfg = self.config
        t_start = time.perf_counter()
        it_dir = self.run_dir / f"iter_{i:03d}"
        it_dir.mkdir(exist_ok=True)
        rel = lambda p: str(p.relative_to(self.run_dir))  # noqa: E731

        if i == 0:
            r0 = parse_program((self.run_dir / "initial.reward").read_text()).with_stage(0)
            pending = [("initial", r0, 0)]
            if cfg.samples > 1:
                variants = self._synthesize(0, EMPTY_FEEDBACK, r0, cfg.samples - 1, 0)
                pending += [(p.provenance, p.program, p.attempt) for p in variants]
        else:
            pending = self.pending
        programs = [p for _, p, _ in pending]

        t0 = time.perf_counter()
        trajs = self._rollouts(i, programs)
        t_roll = time.perf_counter() - t0

        proposals = []
        for k, ((prov, prog, attempt), traj) in enumerate(zip(pending, trajs)):
            prog_path = it_dir / f"p{k}.reward"
            prog_path.write_text(prog.serialize())
            csv_path = traj.to_csv(it_dir / f"p{k}.csv")
            frames = _render(self.task, traj, cfg.frame_rate)
            frame_dir = it_dir / f"frames_p{k}"
            frames.save(frame_dir)
            score = oracle_score(self.desc, traj)
            inc = self.incumbent
            verdict: Verdict = self.judge.compare(
                self.desc, traj, inc.trajectory if inc else None,
                frames=(frames, inc.frames) if inc else None, scope=f"iter_{i:03d}/transcripts/compare_p{k}")
            verdict_path = it_dir / f"verdict_p{k}.json"
            _write_json(verdict_path, {"challenger": [i, k], "incumbent": list(inc.where) if inc else None,
                                       **verdict.to_dict()})
            if verdict.challenger_wins:
                self.incumbent = _Incumbent(prog, traj, frames, score, (i, k), rel(prog_path), rel(csv_path))
            proposals.append({
                "k": k, "provenance": prov, "attempt": attempt, "program": rel(prog_path),
                "text": prog.serialize(), "trajectory": rel(csv_path), "steps": len(traj),
                "truncated": bool(traj.truncated), "frames": rel(frame_dir), "n_frames": len(frames),
                "oracle_score": score, "verdict": verdict.to_dict(), "verdict_file": rel(verdict_path),
            })

        inc = self.incumbent
        feedback = self.judge.critique(self.desc, inc.trajectory, inc.program, frames=inc.frames,
                                       scope=f"iter_{i:03d}/transcripts/feedback")
        fb_path = it_dir / "feedback.json"
        _write_json(fb_path, feedback.to_dict())

        record = {
            "index": i,
            "proposals": proposals,
            "incumbent": {"iteration": inc.where[0], "sample": inc.where[1], "program": inc.program_path,
                          "trajectory": inc.trajectory_path, "oracle_score": inc.score,
                          "text": inc.program.serialize()},
            "feedback": feedback.to_dict(),
            "feedback_file": rel(fb_path),
        }
        # the record has to be visible to the weight history used by synthesis
        self.history["iterations"].append(record)
        nxt = self._synthesize(i + 1, feedback, inc.program, cfg.samples, i + 1)
        record["next_programs"] = []
        for k, p in enumerate(nxt):
            path = it_dir / f"next_p{k}.reward"
            path.write_text(p.program.serialize())
            record["next_programs"].append(rel(path))
        record["next_provenance"] = [[p.provenance, p.attempt] for p in nxt]
        tdir = it_dir / "transcripts"
        record["transcripts"] = sorted(rel(p) for p in tdir.glob("*.json")) if tdir.exists() else []
        self.pending = [(p.provenance, p.program, p.attempt) for p in nxt]
        self.history["best_program"] = inc.program.serialize()
        self.history["best_score"] = inc.score
        self.history["best"] = {"iteration": inc.where[0], "sample": inc.where[1]}
        _write_json(self.run_dir / "history.json", self.history)
        self.timings["iterations"].append({"index": i, "seconds": time.perf_counter() - t_start,
                                           "rollout_seconds": t_roll})
        _write_json(self.run_dir / "timings.json", self.timings)

    def restore(self) -> None:
        """Rebuild incumbent and pending proposals from the persisted history."""
        recs = self.history["iterations"]
        if not recs:
            return
        last = recs[-1]
        inc = last["incumbent"]
        traj = self._load_traj(inc["trajectory"])
        self.incumbent = _Incumbent(
            parse_program((self.run_dir / inc["program"]).read_text()), traj, _render(self.task, traj, self.config.frame_rate),
            inc["oracle_score"], (inc["iteration"], inc["sample"]), inc["program"], inc["trajectory"])
        self.pending = [(prov, parse_program((self.run_dir / path).read_text()), attempt)
                        for path, (prov, attempt) in zip(last["next_programs"], last["next_provenance"])]

    def go(self, stop_after: int | None = None) -> dict:
        start = len(self.history["iterations"])
        end = self.config.iters if stop_after is None else min(self.config.iters, stop_after)
        self.history["status"] = "running"
        try:
            for i in range(start, end):
                self.iteration(i)
        except Exception as exc:
            # drop a half-finished record so the history stays consistent
            done = [r for r in self.history["iterations"] if "transcripts" in r]
            self.history["iterations"] = done
            self.history["status"] = "failed"
            self.history["error"] = f"{type(exc).__name__}: {exc}"
            _write_json(self.run_dir / "history.json", self.history)
            raise
        self.history["status"] = "complete" if len(self.history["iterations"]) == self.config.iters else "partial"
        self.history["error"] = None
        _write_json(self.run_dir / "history.json", self.history)
        if self.history["iterations"]:
            export_heatmap(self.run_dir)
        return self.history


def run(config: RunConfig, stop_after: int | None = None) -> dict:
    """Execute the loop into ``config.out_dir`` (which must be empty or absent)."""
    run_dir = Path(config.out_dir)
    if run_dir.exists() and any(run_dir.iterdir()):
        raise FileExistsError(f"{run_dir} is not empty; use resume to continue a run")
    run_dir.mkdir(parents=True, exist_ok=True)
    _resolve_models(config)
    text = Path(config.initial_program).read_text() if config.initial_program else default_program(config.task_id)
    program = parse_program(text)
    runner = Runner(config, run_dir)
    check = validate(program, runner.task, config.max_weight)
    if not check:
        raise RunError(f"initial program rejected: {check.reason}")
    (run_dir / "initial.reward").write_text(program.serialize())
    _write_json(run_dir / "config.json", config.to_dict())
    runner.history = {
        "format": HISTORY_FORMAT,
        "config": config.recorded(),
        "task": runner.task.spec.to_dict(),
        "description": runner.desc.to_dict(),
        "initial_program": program.serialize(),
        "status": "running",
        "error": None,
        "iterations": [],
        "best_program": None,
        "best_score": None,
        "best": None,
    }
    return runner.go(stop_after)


def resume(output_dir, stop_after: int | None = None, jobs: int | None = None) -> dict:
    """Continue a persisted run from its last completed iteration."""
    run_dir = Path(output_dir)
    try:
        config = RunConfig.from_dict(json.loads((run_dir / "config.json").read_text()))
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise CorruptHistoryError(f"cannot read {run_dir / 'config.json'}: {exc}") from None
    config.out_dir = str(run_dir)
    if jobs is not None:
        config.jobs = jobs
    history = load_history(run_dir)
    if history.get("format") != HISTORY_FORMAT:
        raise CorruptHistoryError(f"unsupported history format {history.get('format')!r}")
    check_history(run_dir, history)
    if len(history["iterations"]) >= config.iters and history.get("status") == "complete":
        return history
    runner = Runner(config, run_dir)
    runner.history = history
    timings = run_dir / "timings.json"
    if timings.exists():
        runner.timings = json.loads(timings.read_text())
        runner.timings["iterations"] = runner.timings["iterations"][: len(history["iterations"])]
    runner.restore()
    return runner.go(stop_after)


def incumbent_scores(history: dict) -> list[float]:
    return [rec["incumbent"]["oracle_score"] for rec in history["iterations"]]


def describe_run(history: dict) -> str:
    lines = []
    for rec in history["iterations"]:
        inc = rec["incumbent"]
        lines.append(f"iter {rec['index']:3d}  incumbent p{inc['sample']}@{inc['iteration']}  "
                     f"score {inc['oracle_score']:.4f}  success {rec['feedback']['task_success']}")
    return "\n".join(lines)

