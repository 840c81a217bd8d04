"""Group-relative advantages and per-token gradient coefficients.

Outcome advantages baseline each rollout's binary reward against its own
group mean.  Hybrid advantages add the probed per-segment progress on top,
scaled by alpha, for reasoning tokens only; answer-span tokens keep the
pure outcome advantage.  The resulting per-token coefficients are frozen
(stop-gradient) weights for the policy's weighted log-prob gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .policy import Trajectory
from .progress import ProgressTrace
from .segmentation import SegmentedTrajectory

REINFORCE = "reinforce"
CLIPPED = "clipped"
OBJECTIVE_MODES = (REINFORCE, CLIPPED)

_ZERO_SUM_TOL = 1e-12


def outcome_advantages(
    rewards: np.ndarray, *, std_normalize: bool = False
) -> np.ndarray:
    """A^i = r^i - mean(r) over one group of binary rewards.

    No standard-deviation normalization by default; the normalized variant
    divides by the population std and is only a diagnostic (a degenerate
    group stays all-zero either way).
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise ValueError(f"need a group of >= 2 rewards, got shape {r.shape}")
    if not np.all((r == 0.0) | (r == 1.0)):
        raise ValueError("rewards must be binary 0/1")
    adv = r - r.mean()
    if std_normalize:
        std = float(r.std())
        if std > 0.0:
            adv = adv / std
    return adv


def _span_bounds(answer_span) -> tuple[int, int]:
    if isinstance(answer_span, range):
        if answer_span.step != 1:
            raise ValueError("answer_span range must have step 1")
        return answer_span.start, answer_span.stop
    start, stop = answer_span
    return int(start), int(stop)


def hybrid_advantages(
    a_i: float,
    deltas: np.ndarray,
    alpha: float,
    seg: SegmentedTrajectory,
    answer_span,
) -> np.ndarray:
    """Per-token coefficients A^i + alpha * dC_k, with A^i on the answer span.

    `seg` partitions the reasoning prefix (positions 1..T_r); `answer_span`
    is the 1-based half-open position range of the remaining tokens, which
    must start exactly at T_r + 1.  alpha = 0 reproduces the plain outcome
    coefficients bit for bit.
    """
    if alpha < 0.0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    d = np.asarray(deltas, dtype=np.float64)
    if d.ndim != 1 or d.size != seg.num_segments:
        raise ValueError(
            f"expected {seg.num_segments} deltas, got shape {d.shape}"
        )
    start, stop = _span_bounds(answer_span)
    t_reasoning = seg.trajectory.length
    if start <= t_reasoning:
        raise ValueError(
            f"answer span starting at {start} overlaps segments covering "
            f"[1, {t_reasoning}]"
        )
    if start != t_reasoning + 1:
        raise ValueError(
            f"gap between segments ending at {t_reasoning} and answer span "
            f"starting at {start}"
        )
    if stop < start:
        raise ValueError(f"answer span ({start}, {stop}) is negative")
    per_segment = a_i + alpha * d
    reasoning = per_segment[seg.token_segment_indices() - 1]
    answer = np.full(stop - start, float(a_i))
    return np.concatenate([reasoning, answer])


@dataclass(frozen=True)
class GroupBatch:
    """G rollouts of one prompt with rewards, advantages, and probe traces.

    `rollouts` are the full sampled trajectories; `trajectories` hold the
    segmented reasoning prefix of each rollout (None when the rollout
    emitted the answer delimiter first and has no reasoning tokens), with
    `progress` aligned the same way.  `per_token_advantages[i]` covers all
    T_i response tokens of rollout i.
    """

    prompt_ref: object
    rollouts: tuple[Trajectory, ...]
    trajectories: tuple[SegmentedTrajectory | None, ...]
    progress: tuple[ProgressTrace | None, ...]
    rewards: tuple[int, ...]
    outcome_advantages: np.ndarray
    alpha: float
    per_token_advantages: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        g = len(self.rollouts)
        if g < 2:
            raise ValueError(f"a group needs >= 2 rollouts, got {g}")
        for name in ("trajectories", "progress", "rewards",
                     "outcome_advantages", "per_token_advantages"):
            if len(getattr(self, name)) != g:
                raise ValueError(f"{name} length != group size {g}")
        if any(r not in (0, 1) for r in self.rewards):
            raise ValueError("rewards must be binary 0/1")
        if abs(float(np.sum(self.outcome_advantages))) > _ZERO_SUM_TOL:
            raise ValueError("outcome advantages do not sum to zero")
        if self.alpha < 0.0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        for i in range(g):
            t_i = self.rollouts[i].length
            if len(self.per_token_advantages[i]) != t_i:
                raise ValueError(
                    f"per-token advantages of rollout {i} do not cover "
                    f"all {t_i} tokens"
                )
            seg = self.trajectories[i]
            trace = self.progress[i]
            if (seg is None) != (trace is None):
                raise ValueError(
                    f"rollout {i}: segmentation and progress must be "
                    "present or absent together"
                )
            if seg is not None:
                if seg.trajectory.length > t_i:
                    raise ValueError(
                        f"rollout {i}: segmented prefix longer than response"
                    )
                if trace.num_segments != seg.num_segments:
                    raise ValueError(
                        f"rollout {i}: progress trace has "
                        f"{trace.num_segments} segments, "
                        f"segmentation has {seg.num_segments}"
                    )

    @property
    def group_size(self) -> int:
        return len(self.rollouts)


def clipped_surrogate_terms(
    ratios: np.ndarray, a_tilde: np.ndarray, eps_low: float, eps_high: float
) -> tuple[np.ndarray, np.ndarray]:
    """Per-token asymmetric-clip terms and their gradient coefficients.

    The surrogate term is min(rho * A~, clip(rho, 1-eps_low, 1+eps_high) * A~);
    its derivative with respect to the new log-prob is rho * A~ wherever the
    unclipped branch is active (ties included) and zero once the clip binds.
    """
    rho = np.asarray(ratios, dtype=np.float64)
    a = np.asarray(a_tilde, dtype=np.float64)
    unclipped = rho * a
    clipped = np.clip(rho, 1.0 - eps_low, 1.0 + eps_high) * a
    terms = np.minimum(unclipped, clipped)
    grad_coeffs = np.where(unclipped <= clipped, unclipped, 0.0)
    return terms, grad_coeffs


def policy_objective_coeffs(
    batch: GroupBatch,
    mode: str,
    eps_low: float = 0.2,
    eps_high: float = 0.27,
    old_logprobs: list[np.ndarray] | None = None,
    *,
    new_logprobs: list[np.ndarray] | None = None,
) -> tuple[list[np.ndarray], float]:
    """Per-token gradient coefficients and the surrogate objective value.

    Reinforce mode emits the frozen per-token advantages directly; summing
    coefficient * grad log pi over a segment's tokens then equals the
    segment-level product by linearity.  Clipped mode applies the
    asymmetric-clip surrogate to the ratio against `old_logprobs`.  The
    surrogate value carries the 1/G factor; the coefficients do not, so
    callers scale the summed gradient themselves.

    Log-probs default to the ones recorded at sampling time; pass
    `new_logprobs` after an off-policy re-scoring instead.
    """
    if mode not in OBJECTIVE_MODES:
        raise ValueError(
            f"unknown objective mode {mode!r}; expected one of {OBJECTIVE_MODES}"
        )
    if not 0.0 <= eps_low < 1.0:
        raise ValueError(f"eps_low must lie in [0, 1), got {eps_low}")
    if eps_high < 0.0:
        raise ValueError(f"eps_high must be >= 0, got {eps_high}")
    g = batch.group_size
    if new_logprobs is None:
        new_logprobs = [np.asarray(r.step_logprobs) for r in batch.rollouts]
    if len(new_logprobs) != g:
        raise ValueError("new_logprobs length != group size")

    if mode == REINFORCE:
        coeffs = [np.array(a, dtype=np.float64) for a in batch.per_token_advantages]
        total = 0.0
        for c, lp in zip(coeffs, new_logprobs):
            total += float(np.dot(c, lp))
        return coeffs, total / g

    if old_logprobs is None:
        raise ValueError(
            "clipped mode requires the log-probs recorded at sampling time"
        )
    if len(old_logprobs) != g:
        raise ValueError("old_logprobs length != group size")
    coeffs = []
    total = 0.0
    for i in range(g):
        ratio = np.exp(np.asarray(new_logprobs[i]) - np.asarray(old_logprobs[i]))
        terms, grad = clipped_surrogate_terms(
            ratio, batch.per_token_advantages[i], eps_low, eps_high
        )
        coeffs.append(grad)
        total += float(np.sum(terms))
    return coeffs, total / g
