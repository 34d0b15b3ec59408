from .dsl import (
    DuplicateTermError,
    NegativeWeightError,
    ProgramError,
    RewardSyntaxError,
    UnknownFeatureError,
    parse_expr,
    to_text,
)
from .features import FEATURES, Frame, RewardContext, catalog_summary
from .program import (
    TERM_LIBRARY,
    EvalStats,
    ProbeResult,
    RewardEvalError,
    RewardProgram,
    RewardTerm,
    WeightMatrix,
    eval_step_reward,
    library_term,
    make_term,
    parse_program,
    probe_eval,
    weight_matrix,
)
