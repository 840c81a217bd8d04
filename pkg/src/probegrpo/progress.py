"""Answer-probability probing along segment boundaries.

After each segment of a response, the policy's belief in the gold answer
is probed: the probability it would assign to the full answer span if the
answer delimiter were emitted right now.  The per-segment change in that
belief is the progress signal.  Probes are pure forward evaluations; they
consume no samples and contribute no gradient, so every quantity here is
a stop-gradient coefficient for the policy update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .policy import PolicyParams, sequence_logprob_batch
from .segmentation import SegmentedTrajectory
from .vocab import standard_vocab

_DEFAULT_DELIM_ID = standard_vocab().answer_delim_id


@dataclass(frozen=True)
class ProgressTrace:
    """Probed confidences C_0..C_M and their per-segment changes.

    deltas[k] is stored as the literal float difference
    c_values[k + 1] - c_values[k].  Confidences are snapped to the 2**-53
    grid on construction (see trace_from_log_confidences): differences and
    every contiguous partial sum of differences then stay on the grid
    inside [-1, 1], so each addition in the telescoping sum is exact and
    sum(deltas) == C_M - C_0 holds bitwise, in any summation order.
    """

    c_values: tuple[float, ...]
    deltas: tuple[float, ...]
    log_c_values: tuple[float, ...]

    def __post_init__(self) -> None:
        m = len(self.c_values) - 1
        if m < 1:
            raise ValueError("need at least C_0 and C_1")
        if len(self.deltas) != m:
            raise ValueError(
                f"expected {m} deltas for {m + 1} confidences, "
                f"got {len(self.deltas)}"
            )
        if len(self.log_c_values) != m + 1:
            raise ValueError("log_c_values must align with c_values")
        for c in self.c_values:
            if not 0.0 <= c <= 1.0:
                raise ValueError(f"confidence {c} outside [0, 1]")
        for k, d in enumerate(self.deltas):
            if d != self.c_values[k + 1] - self.c_values[k]:
                raise ValueError(
                    f"delta {k + 1} is not the stored confidence difference"
                )

    @property
    def num_segments(self) -> int:
        return len(self.deltas)


def _check_gold(gold_answer_ids: np.ndarray) -> np.ndarray:
    gold = np.asarray(gold_answer_ids, dtype=np.int64)
    if gold.ndim != 1 or gold.size == 0:
        raise ValueError("gold_answer_ids must be a non-empty 1-d id array")
    return gold


def probe_pairs(
    seg: SegmentedTrajectory,
    gold_answer_ids: np.ndarray,
    *,
    answer_delim_id: int = _DEFAULT_DELIM_ID,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """(context, continuation) scoring pairs for C_0..C_M of one trajectory.

    The context for C_k is prompt + first k segments + the answer delimiter;
    the delimiter itself only conditions the probe and is never scored.
    """
    gold = _check_gold(gold_answer_ids)
    traj = seg.trajectory
    prompt = np.asarray(traj.prompt_ids, dtype=np.int64)
    response = np.asarray(traj.response_ids, dtype=np.int64)
    delim = np.array([answer_delim_id], dtype=np.int64)
    pairs = []
    for boundary in seg.boundaries:
        context = np.concatenate([prompt, response[: boundary - 1], delim])
        pairs.append((context, gold))
    return pairs


def trace_from_log_confidences(log_cs: np.ndarray) -> ProgressTrace:
    """Build a ProgressTrace from log C_0..C_M probe results.

    exp() of the log probes lands on arbitrary doubles whose differences
    round, which would leave a ~1e-16 residue in the telescoping sum.
    Snapping each confidence to the nearest multiple of 2**-53 (error at
    most 2**-54, far below anything a probe resolves) makes every
    difference and partial sum exactly representable.
    """
    log_cs = np.asarray(log_cs, dtype=np.float64)
    if log_cs.ndim != 1 or log_cs.size < 2:
        raise ValueError("need log confidences for C_0 and at least C_1")
    cs = np.ldexp(np.rint(np.ldexp(np.exp(log_cs), 53)), -53)
    deltas = tuple(float(cs[k + 1] - cs[k]) for k in range(cs.size - 1))
    return ProgressTrace(
        tuple(float(c) for c in cs), deltas, tuple(float(x) for x in log_cs)
    )


def probe_confidence(
    params: PolicyParams,
    prompt_ids: np.ndarray,
    partial_response_ids: np.ndarray,
    gold_answer_ids: np.ndarray,
    *,
    answer_delim_id: int = _DEFAULT_DELIM_ID,
) -> float:
    """Probability of the gold answer after a partial response.

    Scores the gold answer ids autoregressively after
    prompt + partial response + answer delimiter.  Log-softmax scoring
    keeps every term <= 0, so the result lies in [0, 1].
    """
    gold = _check_gold(gold_answer_ids)
    prompt = np.asarray(prompt_ids, dtype=np.int64)
    partial = np.asarray(partial_response_ids, dtype=np.int64).reshape(-1)
    delim = np.array([answer_delim_id], dtype=np.int64)
    context = np.concatenate([prompt, partial, delim])
    (log_c,) = sequence_logprob_batch(params, [(context, gold)])
    return float(np.exp(log_c))


def compute_progress(
    params: PolicyParams,
    seg: SegmentedTrajectory,
    gold_answer_ids: np.ndarray,
    *,
    answer_delim_id: int = _DEFAULT_DELIM_ID,
) -> ProgressTrace:
    """Probe the gold-answer confidence at every segment boundary.

    C_0 conditions on the bare prompt, C_k on the prompt plus the first k
    segments; all M + 1 probes run as one batched scoring pass.
    """
    pairs = probe_pairs(seg, gold_answer_ids, answer_delim_id=answer_delim_id)
    log_cs = sequence_logprob_batch(params, pairs)
    return trace_from_log_confidences(log_cs)


def classify_steps(deltas: np.ndarray, dead_band: float = 0.0) -> np.ndarray:
    """Ternary labels from progress deltas: +1 rise, -1 fall, 0 abstain.

    A delta must clear the dead band strictly in either direction to get a
    label; anything inside it, including an exact zero, abstains.
    """
    if dead_band < 0.0:
        raise ValueError(f"dead_band must be >= 0, got {dead_band}")
    d = np.asarray(deltas, dtype=np.float64)
    labels = np.zeros(d.shape, dtype=np.int64)
    labels[d > dead_band] = 1
    labels[d < -dead_band] = -1
    return labels
