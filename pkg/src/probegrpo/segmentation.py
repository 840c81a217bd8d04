"""Entropy-based trajectory segmentation.

Splits a sampled response into contiguous segments so that each segment
carries a balanced share of the high-entropy decision points.  Positions
whose next-token entropy reaches the per-trajectory percentile threshold
are cutpoints; segment boundaries are placed so the cutpoints are divided
as evenly as possible.  A fixed equal-length partition is provided as the
ablation baseline.

All token positions and boundaries are 1-based.  A boundary vector
(t_1, ..., t_{M+1}) describes segments z_k = [t_k, t_{k+1} - 1], with
t_1 = 1 and t_{M+1} = T + 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .policy import Trajectory

ADAPTIVE = "adaptive_entropy"
FIXED = "fixed"
STRATEGIES = (ADAPTIVE, FIXED)


@dataclass(frozen=True)
class CutpointSet:
    """High-entropy positions of one trajectory plus the threshold used."""

    positions: tuple[int, ...]
    threshold_tau: float
    percentile_p: float

    def __post_init__(self) -> None:
        if not 0.0 < self.percentile_p < 1.0:
            raise ValueError(
                f"percentile_p must lie in (0, 1), got {self.percentile_p}"
            )
        pos = self.positions
        if any(p < 1 for p in pos):
            raise ValueError("cutpoint positions are 1-based, got a value < 1")
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise ValueError("cutpoint positions must be strictly increasing")

    @property
    def count(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class SegmentedTrajectory:
    """A trajectory together with its segment boundaries.

    boundaries = (t_1, ..., t_{M+1}) with t_1 = 1 and t_{M+1} = T + 1;
    segment k (1-based) covers token positions [t_k, t_{k+1} - 1].
    """

    trajectory: Trajectory
    boundaries: tuple[int, ...]
    strategy: str

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(
                f"unknown segmentation strategy {self.strategy!r}; "
                f"expected one of {STRATEGIES}"
            )
        b = self.boundaries
        if len(b) < 2:
            raise ValueError("boundaries need at least (1, T + 1)")
        if b[0] != 1:
            raise ValueError(f"first boundary must be 1, got {b[0]}")
        if b[-1] != self.trajectory.length + 1:
            raise ValueError(
                f"last boundary must be T + 1 = {self.trajectory.length + 1}, "
                f"got {b[-1]}"
            )
        if any(y <= x for x, y in zip(b, b[1:])):
            raise ValueError("boundaries must be strictly increasing")

    @property
    def num_segments(self) -> int:
        return len(self.boundaries) - 1

    def segment_slices(self) -> list[slice]:
        """0-based slices into the response array, one per segment."""
        b = self.boundaries
        return [slice(b[k] - 1, b[k + 1] - 1) for k in range(self.num_segments)]

    def segment_of_token(self, position: int) -> int:
        """1-based segment index owning the 1-based token position."""
        if not 1 <= position <= self.trajectory.length:
            raise ValueError(
                f"position {position} outside [1, {self.trajectory.length}]"
            )
        # boundaries are sorted; rightmost t_k <= position
        k = int(np.searchsorted(self.boundaries, position, side="right"))
        return k

    def token_segment_indices(self) -> np.ndarray:
        """1-based segment index for every response token, shape (T,)."""
        counts = np.diff(np.asarray(self.boundaries))
        return np.repeat(np.arange(1, self.num_segments + 1), counts)


def entropy_threshold(entropies: np.ndarray, percentile_p: float) -> float:
    """Per-trajectory threshold: the percentile_p quantile of the entropies."""
    if not 0.0 < percentile_p < 1.0:
        raise ValueError(f"percentile_p must lie in (0, 1), got {percentile_p}")
    e = np.asarray(entropies, dtype=np.float64)
    if e.ndim != 1 or e.size == 0:
        raise ValueError("entropies must be a non-empty 1-d array")
    return float(np.quantile(e, percentile_p))


def cutpoints_from_entropies(
    entropies: np.ndarray, percentile_p: float
) -> CutpointSet:
    """Positions t with e_t >= tau, tau the percentile_p quantile."""
    e = np.asarray(entropies, dtype=np.float64)
    tau = entropy_threshold(e, percentile_p)
    positions = tuple(int(t) for t in np.nonzero(e >= tau)[0] + 1)
    return CutpointSet(positions, tau, percentile_p)


def find_cutpoints(trajectory: Trajectory, percentile_p: float) -> CutpointSet:
    """Cutpoints of a trajectory from its recorded sampling entropies.

    Ties at the threshold count as cutpoints, so the set is never empty:
    the maximum entropy always reaches its own quantile.
    """
    if trajectory.length == 0:
        raise ValueError("cannot find cutpoints of an empty trajectory")
    return cutpoints_from_entropies(trajectory.entropies, percentile_p)


def _balanced_runs(n_items: int, n_runs: int) -> list[int]:
    """Split n_items into n_runs contiguous run lengths differing by <= 1."""
    base, rem = divmod(n_items, n_runs)
    return [base + 1 if k < rem else base for k in range(n_runs)]


def partition_adaptive(
    trajectory: Trajectory, cutpoints: CutpointSet, n_per_segment: int
) -> SegmentedTrajectory:
    """Partition so each segment holds a near-equal share of the cutpoints.

    M = max(1, |U| // n_per_segment) segments; the cutpoints are split into
    M contiguous runs whose sizes differ by at most one (earlier runs take
    the remainder), and each interior boundary sits just after the last
    cutpoint of its run.
    """
    if n_per_segment < 1:
        raise ValueError(f"n_per_segment must be >= 1, got {n_per_segment}")
    t_len = trajectory.length
    if t_len == 0:
        raise ValueError("cannot partition an empty trajectory")
    if cutpoints.positions and cutpoints.positions[-1] > t_len:
        raise ValueError(
            f"cutpoint {cutpoints.positions[-1]} beyond trajectory length {t_len}"
        )
    n_cut = cutpoints.count
    n_seg = max(1, n_cut // n_per_segment)
    boundaries = [1]
    if n_seg > 1:
        runs = _balanced_runs(n_cut, n_seg)
        last = 0
        for size in runs[:-1]:
            last += size
            # boundary just after the run's final cutpoint; distinct sorted
            # cutpoints keep these strictly increasing and <= T
            boundaries.append(cutpoints.positions[last - 1] + 1)
    boundaries.append(t_len + 1)
    return SegmentedTrajectory(trajectory, tuple(boundaries), ADAPTIVE)


def partition_fixed(
    trajectory: Trajectory, n_segments: int
) -> SegmentedTrajectory:
    """Equal-length partition into n_segments spans (ceil split).

    Boundary k sits at ceil(k * T / n) + 1; when T < n_segments every token
    gets its own segment, so no segment is ever empty.
    """
    if n_segments < 1:
        raise ValueError(f"n_segments must be >= 1, got {n_segments}")
    t_len = trajectory.length
    if t_len == 0:
        raise ValueError("cannot partition an empty trajectory")
    n_seg = min(n_segments, t_len)
    boundaries = tuple(
        math.ceil(k * t_len / n_seg) + 1 for k in range(n_seg + 1)
    )
    return SegmentedTrajectory(trajectory, boundaries, FIXED)
