from .endpoint import EndpointJudge, JudgeError, load_prompt
from .feedback import (
    EMPTY_FEEDBACK,
    Feedback,
    MotionDescription,
    ParseError,
    Suggestion,
    Verdict,
    parse_feedback,
    parse_verdict,
)
from .oracle import Diagnostics, OracleJudge, compare, critique, diagnose, oracle_score, task_for
from .render import FRAME_RATE, MAX_FRAMES, FrameSequence, frame_count, read_ppm, render_frames, task_target
