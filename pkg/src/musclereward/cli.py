"""Command-line interface.

Exit codes: 0 success, 1 usage or missing input, 2 runtime failure, 3 endpoint transport failure.
Endpoint settings come only from environment variables (see ``musclereward.transport``).
"""
from __future__ import annotations

import argparse
import functools
import sys
from pathlib import Path

import numpy as np

from .controller import PlannerError, mpc_policy, task_planner
from .dynamics.muscles import SimulationError
from .dynamics.rollout import constant_policy, rollout
from .dynamics.trajectory import Trajectory
from .environments import TASK_IDS, load_task
from .judge import MotionDescription, diagnose, render_frames, task_target
from .loop import CorruptHistoryError, RunConfig, RunError, default_program, describe_run, export_heatmap, resume, run
from .reward.dsl import ProgramError
from .reward.features import RewardContext
from .reward.program import parse_program
from .transport import TransportError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_TRANSPORT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _DefaultsFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Appends ``(default: X)`` unless the help text already documents the default."""

    def _get_help_string(self, action):
        text = action.help or ""
        if action.required or "default" in text or text.endswith("]"):
            return text
        return super()._get_help_string(action)


_Formatter = functools.partial(_DefaultsFormatter, width=100)


def _planner_flags(p):
    g = p.add_argument_group("planner (unset flags use the task preset, then the built-in default)")
    g.add_argument("--horizon", type=int, default=None, help="look-ahead in control steps [10; walkers 20]")
    g.add_argument("--n-samples", type=int, default=None, help="candidate postures per replan [64]")
    g.add_argument("--noise-sigma", type=float, default=None, help="sampling spread in rad [0.15]")
    g.add_argument("--temperature", type=float, default=None, help="MPPI temperature [1.0]")
    g.add_argument("--instant-fraction", type=float, default=None,
                   help="share of candidates drawn around the current posture [0.25]")
    g.add_argument("--replan-interval", type=int, default=None, help="control steps between replans [5]")
    g.add_argument("--k-bar", type=float, default=None, help="global gain in N/m per rad [task preset]")


def _planner_overrides(args) -> dict:
    keys = ("horizon", "n_samples", "noise_sigma", "temperature", "instant_fraction", "replan_interval", "k_bar")
    return {k: getattr(args, k) for k in keys if getattr(args, k) is not None}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="musclereward", description="Muscle-driven planar bodies, MPC and iterative reward design.",
                     formatter_class=_Formatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="roll out zero or constant muscle commands", formatter_class=_Formatter)
    p.add_argument("--task", required=True, choices=TASK_IDS, help="task id")
    p.add_argument("--program", default=None, help="reward program logged per step (default: task default program)")
    p.add_argument("--controls", default=None, help="file with one constant command per muscle (default: all zero)")
    p.add_argument("--steps", type=int, default=None, help="control steps (default: task horizon)")
    p.add_argument("--seed", type=int, default=0, help="task instance seed")
    p.add_argument("--frame-rate", type=float, default=10.0, help="frames per simulated second")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("plan", help="run the MPC controller under a reward program", formatter_class=_Formatter)
    p.add_argument("--task", required=True, choices=TASK_IDS, help="task id")
    p.add_argument("--program", default=None, help="reward program file (default: task default program)")
    p.add_argument("--duration", type=float, default=None, help="simulated seconds (default: task horizon)")
    p.add_argument("--seed", type=int, default=0, help="task instance and planner seed")
    p.add_argument("--frame-rate", type=float, default=10.0, help="frames per simulated second")
    p.add_argument("--out", required=True, help="output directory")
    _planner_flags(p)

    p = sub.add_parser("learn", help="iterate planning, judging and reward synthesis", formatter_class=_Formatter)
    p.add_argument("--task", choices=TASK_IDS, default="walker_flat", help="task id")
    p.add_argument("--iters", type=int, default=8, help="iterations N")
    p.add_argument("--samples", type=int, default=4, help="programs evaluated per iteration")
    p.add_argument("--seed", type=int, default=0, help="base seed for every random stream")
    p.add_argument("--sim-seed", type=int, default=None, help="task instance seed (default: --seed)")
    p.add_argument("--planner-seed", type=int, default=None, help="planner seed (default: --seed)")
    p.add_argument("--synth-seed", type=int, default=None, help="synthesis seed (default: --seed)")
    p.add_argument("--judge", choices=("oracle", "endpoint"), default="oracle", help="judge implementation")
    p.add_argument("--synth", choices=("mock", "endpoint"), default="mock", help="synthesizer implementation")
    p.add_argument("--initial", default=None, help="initial reward program (default: task default program)")
    p.add_argument("--duration", type=float, default=None, help="simulated seconds per rollout (default: task horizon)")
    p.add_argument("--max-weight", type=float, default=10.0, help="upper bound on term weights")
    p.add_argument("--frame-rate", type=float, default=10.0, help="frames per simulated second")
    p.add_argument("--replay", default=None,
                   help="answer endpoint requests from this earlier run directory (default: live endpoint)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for rollouts")
    p.add_argument("--resume", action="store_true", help="continue the run already in --out")
    p.add_argument("--out", required=True, help="run directory")
    _planner_flags(p)

    p = sub.add_parser("export-heatmap", help="write weight heatmap CSV and SVG for a run", formatter_class=_Formatter)
    p.add_argument("run_dir", help="run directory")
    p.add_argument("--out", default=None, help="output directory (default: the run directory)")

    p = sub.add_parser("render", help="draw frames from a stored trajectory CSV", formatter_class=_Formatter)
    p.add_argument("trajectory", help="trajectory CSV")
    p.add_argument("--task", required=True, choices=TASK_IDS, help="task the trajectory belongs to")
    p.add_argument("--seed", type=int, default=0, help="task instance seed")
    p.add_argument("--rate", type=float, default=10.0, help="frames per simulated second")
    p.add_argument("--out", required=True, help="output directory for frame_XXX.png")

    sub.add_parser("tasks", help="list the task catalog", formatter_class=_Formatter)
    return parser


def _read(path: str) -> str:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"file not found: {path}")
    return p.read_text()


def _program(path, task_id):
    return parse_program(_read(path) if path else default_program(task_id))


def _steps(task, steps=None, duration=None) -> int:
    if steps is not None:
        if steps < 1:
            raise UsageError("--steps must be >= 1")
        return steps
    seconds = task.spec.horizon_s if duration is None else duration
    if not seconds > 0:
        raise UsageError("--duration must be positive")
    return max(1, int(round(seconds / task.sim.control_dt)))


def _write_outputs(out: Path, task, traj, rate) -> None:
    out.mkdir(parents=True, exist_ok=True)
    traj.to_csv(out / "trajectory.csv")
    render_frames(traj, task.morphology, task.terrain, rate, task_target(task)).save(out / "frames")


def cmd_simulate(args) -> int:
    task = load_task(args.task, args.seed)
    program = _program(args.program, args.task)
    if args.controls:
        text = _read(args.controls).replace(",", " ").split()
        u = np.array([float(x) for x in text])
        if u.shape != (task.morphology.n_u,):
            raise UsageError(f"--controls needs {task.morphology.n_u} values, got {len(u)}")
    else:
        u = np.zeros(task.morphology.n_u)
    traj = rollout(constant_policy(u), task.s0, _steps(task, args.steps), task.morphology, task.sim, program,
                   task.terrain, RewardContext.from_task(task))
    _write_outputs(Path(args.out), task, traj, args.frame_rate)
    print(f"{len(traj)} steps written to {Path(args.out) / 'trajectory.csv'}" + (" (truncated)" if traj.truncated else ""))
    return EXIT_OK


def cmd_plan(args) -> int:
    task = load_task(args.task, args.seed)
    program = _program(args.program, args.task)
    config = task_planner(task, **_planner_overrides(args))
    policy = mpc_policy(program, task, config, seed=args.seed)
    traj = rollout(policy, task.s0, _steps(task, duration=args.duration), task.morphology, task.sim, program,
                   task.terrain, RewardContext.from_task(task))
    if traj.truncated:
        raise SimulationError(f"rollout diverged after {len(traj)} steps")
    _write_outputs(Path(args.out), task, traj, args.frame_rate)
    d = diagnose(MotionDescription(task.spec.motion_description, args.task, args.seed), traj)
    if task.spec.is_manipulation:
        print(f"final position error {d.position_error:.4f} m, orientation error {d.orientation_error:.4f} rad")
    else:
        fall = "no fall" if d.fall_time is None else f"fell at {d.fall_time:.2f} s"
        print(f"forward distance {d.distance:.4f} m ({fall})")
    print(f"oracle score {d.score:.6f}")
    return EXIT_OK


def cmd_learn(args) -> int:
    out = Path(args.out)
    if args.resume:
        if not (out / "history.json").exists():
            raise UsageError(f"nothing to resume in {out}")
        history = resume(out, jobs=args.jobs)
    else:
        if out.exists() and any(out.iterdir()):
            raise UsageError(f"{out} is not empty; pass --resume to continue it")
        if args.initial:
            _read(args.initial)
        config = RunConfig(
            task_id=args.task, iters=args.iters, samples=args.samples, seed=args.seed, sim_seed=args.sim_seed,
            planner_seed=args.planner_seed, synth_seed=args.synth_seed, judge=args.judge, synth=args.synth,
            initial_program=args.initial, out_dir=str(out), duration_s=args.duration,
            planner=_planner_overrides(args), max_weight=args.max_weight, frame_rate=args.frame_rate,
            replay_dir=args.replay, jobs=args.jobs,
        )
        history = run(config)
    print(describe_run(history))
    best = history["iterations"][-1]["incumbent"]["program"]
    print(f"best program: {out / best}")
    return EXIT_OK


def cmd_export_heatmap(args) -> int:
    run_dir = Path(args.run_dir)
    if not (run_dir / "history.json").exists():
        raise UsageError(f"no history.json in {run_dir}")
    paths = export_heatmap(run_dir, args.out)
    for p in paths.values():
        print(p)
    return EXIT_OK


def cmd_render(args) -> int:
    _read(args.trajectory)
    task = load_task(args.task, args.seed)
    traj = Trajectory.from_csv(args.trajectory, task.s0, task.sim.control_dt)
    if len(traj) == 0:
        raise UsageError("trajectory has no rows")
    frames = render_frames(traj, task.morphology, task.terrain, args.rate, task_target(task))
    frames.save(args.out)
    print(f"{len(frames)} frames written to {args.out}")
    return EXIT_OK


def cmd_tasks(args) -> int:
    for tid in TASK_IDS:
        task = load_task(tid)
        print(f"{tid:16s} {task.spec.morphology:7s} {task.spec.terrain.kind:6s} {task.spec.horizon_s:4.1f} s  "
              f"{task.spec.motion_description}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "plan": cmd_plan,
    "learn": cmd_learn,
    "export-heatmap": cmd_export_heatmap,
    "render": cmd_render,
    "tasks": cmd_tasks,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, FileExistsError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TransportError as exc:
        print(f"endpoint error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except ProgramError as exc:
        print(f"reward program error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (PlannerError, SimulationError, RunError, CorruptHistoryError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
