"""Looped execution with input injection, and the truncated-window loss.

One loop iteration applies the full backbone M (positional embeddings
re-added every time): with input injection Y_0 = 0 and
Y_{t+1} = M(Y_t + P); the weight-tying variant starts from Y_0 = P and
iterates Y_{t+1} = M(Y_t). Training scores only the window of the last
T iterations; earlier ones run detached, so memory scales with T, not b.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import engine as en
from .engine import Tensor
from .model import ModelWeights, backbone_forward, embed_prompt, read_out
from .tasks import PromptBatch

INJECTIONS = ("input_injection", "weight_tying")
RAMPS = ("none", "linear")


@dataclass(frozen=True)
class LoopSchedule:
    b: int = 12
    T: int = 8
    ramp: str = "none"
    ramp_interval: int = 1000
    injection: str = "input_injection"

    def __post_init__(self):
        if self.b < 1:
            raise ValueError("b must be >= 1")
        if not (1 <= self.T <= self.b):
            raise ValueError(f"T must satisfy 1 <= T <= b, got T={self.T}, b={self.b}")
        if self.ramp not in RAMPS:
            raise ValueError(f"unknown ramp '{self.ramp}'")
        if self.ramp == "linear" and self.ramp_interval < 1:
            raise ValueError("ramp_interval must be >= 1")
        if self.injection not in INJECTIONS:
            raise ValueError(f"unknown injection '{self.injection}'")

    def to_dict(self) -> dict:
        return {"b": self.b, "T": self.T, "ramp": self.ramp,
                "ramp_interval": self.ramp_interval, "injection": self.injection}


@dataclass
class LoopState:
    Y: Tensor
    t: int


def schedule_step(schedule: LoopSchedule, training_step: int) -> int:
    """Current unroll depth b_cur; nondecreasing in the step count."""
    if training_step < 0:
        raise ValueError("training_step must be >= 0")
    if schedule.ramp == "none":
        return schedule.b
    return min(schedule.b, schedule.T + training_step // schedule.ramp_interval)


def window_start(b_cur: int, T: int) -> int:
    """First scored iteration; clamped to 1 so the zero state Y_0 is
    never scored."""
    return max(b_cur - T, 1)


def looped_forward(weights: ModelWeights, P_embed: Tensor, t: int,
                   injection: str = "input_injection",
                   capture_all: bool = False) -> Tensor | list[Tensor]:
    """Y_t after t loop iterations (or [Y_1..Y_t] with capture_all)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if injection not in INJECTIONS:
        raise ValueError(f"unknown injection '{injection}'")
    if injection == "input_injection":
        Y = en.zeros(P_embed.shape, dtype=P_embed.dtype)
    else:
        Y = P_embed
    states: list[Tensor] = []
    for _ in range(t):
        if injection == "input_injection":
            Y = backbone_forward(en.add(Y, P_embed), weights, add_positional=True)
        else:
            Y = backbone_forward(Y, weights, add_positional=True)
        if capture_all:
            states.append(Y)
    return states if capture_all else Y


def truncated_loss(weights: ModelWeights, batch: PromptBatch,
                   schedule: LoopSchedule, b_cur: int | None = None) -> Tensor:
    """Mean squared error over loop window x prompt prefixes x batch.

    Every iteration t in [b0, b_cur] is scored against all k+1 prefix
    targets; iterations before b0 run without gradient tracking.
    """
    if batch.batch_size == 0:
        raise ValueError("empty prompt batch")
    b_cur = schedule.b if b_cur is None else b_cur
    if b_cur < 1:
        raise ValueError("b_cur must be >= 1")
    b0 = window_start(b_cur, schedule.T)

    P = embed_prompt(batch.tokens, weights)
    targets = en.Tensor(batch.targets.astype(P.dtype))
    tying = schedule.injection == "weight_tying"

    # detached prefix: iterations 1 .. b0-1 (when b0 == 1 the start state
    # itself stays tracked, which matters for weight tying where Y_0 = P)
    if b0 == 1:
        Y = P if tying else en.zeros(P.shape, dtype=P.dtype)
    else:
        with en.no_grad():
            P_d = P.detach()
            Y = P_d if tying else en.zeros(P.shape, dtype=P.dtype)
            for _ in range(b0 - 1):
                Y = backbone_forward(Y if tying else en.add(Y, P_d), weights,
                                     add_positional=True)
        Y = Y.detach()

    term_sum: Tensor | None = None
    for _ in range(b0, b_cur + 1):
        Y = backbone_forward(Y if tying else en.add(Y, P), weights,
                             add_positional=True)
        preds = read_out(Y, weights)
        term = en.squared_error_mean(preds, targets)
        term_sum = term if term_sum is None else en.add(term_sum, term)
    n_terms = b_cur - b0 + 1
    return term_sum * (1.0 / n_terms)
