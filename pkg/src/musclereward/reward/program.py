"""Linear reward programs ``r = sum_k w_k r_k`` over sandboxed term expressions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dsl import (
    BinOp,
    Call,
    DuplicateTermError,
    Feature,
    Neg,
    NegativeWeightError,
    Num,
    ProgramError,
    UnknownFeatureError,
    format_number,
    parse_expr,
    parse_terms,
    to_text,
    walk,
)
from .features import FEATURES, Frame, RewardContext


class RewardEvalError(ProgramError):
    def __init__(self, term: str, message: str):
        super().__init__(f"term {term!r}: {message}")
        self.term = term


@dataclass(frozen=True)
class RewardTerm:
    name: str
    expr: object

    @property
    def text(self) -> str:
        return to_text(self.expr)


@dataclass(frozen=True)
class RewardProgram:
    terms: tuple[RewardTerm, ...] = ()
    weights: tuple[float, ...] = ()
    stage_id: int = 0

    def __post_init__(self):
        if len(self.terms) != len(self.weights):
            raise ProgramError("one weight per term is required")
        seen = set()
        for term in self.terms:
            if term.name in seen:
                raise DuplicateTermError(f"duplicate term name {term.name!r}")
            seen.add(term.name)
        for term, w in zip(self.terms, self.weights):
            if not math.isfinite(w):
                raise ProgramError(f"term {term.name!r} has a non-finite weight")
            if w < 0:
                raise NegativeWeightError(f"term {term.name!r} has a negative weight")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.terms)

    def weight(self, name: str) -> float:
        return self.weights[self.names.index(name)]

    def term(self, name: str) -> RewardTerm:
        return self.terms[self.names.index(name)]

    def serialize(self) -> str:
        lines = [f"stage {self.stage_id}"]
        for term, w in zip(self.terms, self.weights):
            lines.append(f"term {term.name} {{ {term.text} }} @ {format_number(w)}")
        return "\n".join(lines) + "\n"

    def with_weights(self, weights) -> "RewardProgram":
        return RewardProgram(self.terms, tuple(float(w) for w in weights), self.stage_id)

    def with_stage(self, stage_id: int) -> "RewardProgram":
        return RewardProgram(self.terms, self.weights, stage_id)

    def scaled(self, c: float) -> "RewardProgram":
        return self.with_weights(w * c for w in self.weights)

    def describe(self) -> str:
        return "\n".join(f"- {t.name} (weight {format_number(w)}): {t.text}"
                         for t, w in zip(self.terms, self.weights)) or "(no terms)"


def check_features(node, term: str | None = None):
    for n in walk(node):
        if isinstance(n, Feature):
            if n.name not in FEATURES:
                raise UnknownFeatureError(n.name, term)
            indexed = FEATURES[n.name][0]
            if indexed and n.arg is None:
                raise ProgramError(f"feature {n.name!r} needs an index, e.g. {n.name}(0)")
            if not indexed and n.arg is not None:
                raise ProgramError(f"feature {n.name!r} takes no index")


def parse_program(text: str) -> RewardProgram:
    stage, parsed = parse_terms(text)
    names = set()
    for t in parsed:
        if t.name in names:
            raise DuplicateTermError(f"line {t.line}: duplicate term name {t.name!r}")
        names.add(t.name)
        check_features(t.expr, t.name)
    return RewardProgram(
        tuple(RewardTerm(t.name, t.expr) for t in parsed),
        tuple(t.weight for t in parsed),
        stage,
    )


def make_term(name: str, expr_text: str) -> RewardTerm:
    expr = parse_expr(expr_text)
    check_features(expr, name)
    return RewardTerm(name, expr)


# Default definitions for terms named after catalog features, used when
# feedback asks to add one. Penalties are written so a positive weight helps.
TERM_LIBRARY: dict[str, str] = {
    "forward_velocity": "forward_velocity",
    "forward_distance": "forward_distance",
    "height": "min(height, 1.0)",
    "balance": "-abs(balance)",
    "torso_uprightness": "torso_uprightness",
    "effort": "-effort",
    "control_smoothness": "-control_smoothness",
    "foot_clearance": "min(foot_clearance, 0.05)",
    "step_symmetry": "step_symmetry",
    "target_position_error": "-target_position_error",
    "target_orientation_error": "-target_orientation_error",
    "grasp_distance": "-grasp_distance",
}


def library_term(name: str) -> RewardTerm | None:
    """Library definition of the term called ``name``, or None."""
    if name in TERM_LIBRARY:
        return make_term(name, TERM_LIBRARY[name])
    return None


# -- evaluation ----------------------------------------------------------------

@dataclass
class EvalStats:
    guard_hits: int = 0


def _eval(node, frame: Frame, stats: EvalStats):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Feature):
        return frame.get(node.name, node.arg)
    if isinstance(node, Neg):
        return -_eval(node.operand, frame, stats)
    if isinstance(node, BinOp):
        a = _eval(node.left, frame, stats)
        b = _eval(node.right, frame, stats)
        op = node.op
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            b = np.asarray(b, dtype=float)
            zero = b == 0
            hits = int(np.count_nonzero(zero))
            if hits:
                stats.guard_hits += hits
                return np.where(zero, 0.0, a / np.where(zero, 1.0, b))
            return a / b
        if op == "<":
            return np.asarray(a < b, dtype=float)
        if op == "<=":
            return np.asarray(a <= b, dtype=float)
        if op == ">":
            return np.asarray(a > b, dtype=float)
        if op == ">=":
            return np.asarray(a >= b, dtype=float)
        if op == "==":
            return np.asarray(a == b, dtype=float)
        if op == "!=":
            return np.asarray(a != b, dtype=float)
    if isinstance(node, Call):
        args = [_eval(a, frame, stats) for a in node.args]
        fn = node.fn
        if fn == "abs":
            return np.abs(args[0])
        if fn == "exp":
            return np.exp(args[0])
        if fn == "tanh":
            return np.tanh(args[0])
        if fn == "min":
            out = args[0]
            for a in args[1:]:
                out = np.minimum(out, a)
            return out
        if fn == "max":
            out = args[0]
            for a in args[1:]:
                out = np.maximum(out, a)
            return out
        if fn == "clamp":
            return np.minimum(np.maximum(args[0], args[1]), args[2])
    raise TypeError(f"cannot evaluate {node!r}")


def eval_terms(program: RewardProgram, frame: Frame, stats: EvalStats | None = None, strict: bool = True):
    """Per-term values as a dict of arrays shaped like the frame batch."""
    stats = EvalStats() if stats is None else stats
    out = {}
    with np.errstate(all="ignore"):
        for term in program.terms:
            value = np.broadcast_to(np.asarray(_eval(term.expr, frame, stats), dtype=float), frame.zeros.shape)
            if strict and not np.all(np.isfinite(value)):
                raise RewardEvalError(term.name, "evaluated to a non-finite value")
            out[term.name] = value
    return out


def eval_step_reward(program: RewardProgram, state, controls, ctx: RewardContext, prev_u=None,
                     stats: EvalStats | None = None, strict: bool = True):
    """Return ``(total, per_term)`` with ``total = sum_k w_k r_k``."""
    frame = Frame(state, controls, ctx, prev_u)
    per_term = eval_terms(program, frame, stats, strict)
    total = np.zeros(frame.zeros.shape)
    for w, value in zip(program.weights, per_term.values()):
        total = total + w * value
    if not total.shape:
        total = float(total)
        per_term = {k: float(v) for k, v in per_term.items()}
    return total, per_term


@dataclass
class ProbeResult:
    ok: bool
    error: str | None = None
    term: str | None = None
    guard_hits: int = 0

    def __bool__(self) -> bool:
        return self.ok


PROBE_STATES = 10


def probe_states(task, n: int = PROBE_STATES, seed: int = 0):
    """The task's initial state followed by ``n`` seeded perturbations (batched)."""
    rng = np.random.default_rng(seed)
    s = task.s0.tile(n + 1)
    morph = task.morphology
    nq = morph.n_q
    scale = np.full(nq, 0.05)
    s.joints.q[1:] += rng.normal(0.0, 1.0, (n, nq)) * scale
    s.joints.qdot[1:] += rng.normal(0.0, 0.2, (n, nq))
    s.muscles.l[:] = morph.rest_lengths - s.q @ morph.moment_arms.T
    s.muscles.v[:] = -s.qdot @ morph.moment_arms.T
    u = np.zeros((n + 1, morph.n_u))
    u[1:] = rng.uniform(0.0, 1.0, (n, morph.n_u))
    prev = np.zeros_like(u)
    return s, u, prev


def probe_eval(program: RewardProgram, task) -> ProbeResult:
    """Evaluate on the initial and perturbed states; ok iff every term is finite."""
    ctx = RewardContext.from_task(task)
    for term in program.terms:
        for n in walk(term.expr):
            if isinstance(n, Feature) and n.arg is not None and not 0 <= n.arg < ctx.index_range(n.name):
                return ProbeResult(False, f"term {term.name!r}: index {n.arg} out of range for {n.name}", term.name)
    state, u, prev = probe_states(task)
    stats = EvalStats()
    try:
        eval_terms(program, Frame(state, u, ctx, prev), stats)
    except RewardEvalError as exc:
        return ProbeResult(False, str(exc), exc.term, stats.guard_hits)
    return ProbeResult(True, guard_hits=stats.guard_hits)


# -- weight history ------------------------------------------------------------

@dataclass
class WeightMatrix:
    terms: list[str]
    raw: np.ndarray  # (terms, stages)
    normalized: np.ndarray
    degenerate: list[int] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.raw.shape


def weight_matrix(history) -> WeightMatrix:
    """Relative term weights per stage; columns L1-normalised."""
    history = list(history)
    if not history:
        raise ValueError("weight history is empty")
    terms: list[str] = []
    for prog in history:
        for name in prog.names:
            if name not in terms:
                terms.append(name)
    raw = np.zeros((len(terms), len(history)))
    for j, prog in enumerate(history):
        for name, w in zip(prog.names, prog.weights):
            raw[terms.index(name), j] = w
    sums = raw.sum(axis=0)
    degenerate = [j for j, s in enumerate(sums) if s == 0]
    norm = np.divide(raw, sums, out=np.zeros_like(raw), where=sums != 0)
    return WeightMatrix(terms, raw, norm, degenerate)
