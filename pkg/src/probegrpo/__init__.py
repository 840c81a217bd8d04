"""Group-relative policy optimization with belief-probe process credit.

Tiny autoregressive policies are trained with verifiable rewards on
synthetic reasoning tasks; responses are segmented at high-entropy tokens
and the policy's own answer probability is probed after each segment to
turn confidence changes into per-segment process credit.
"""

from .advantage import (
    GroupBatch,
    hybrid_advantages,
    outcome_advantages,
    policy_objective_coeffs,
)
from .policy import (
    PolicyParams,
    Trajectory,
    forward,
    init_params,
    load_params,
    response_logprobs_batch,
    sample_batch,
    sample_trajectory,
    save_params,
    sequence_logprob,
    sequence_logprob_batch,
    weighted_logprob_gradient,
    weighted_logprob_gradient_batch,
)
from .progress import (
    ProgressTrace,
    classify_steps,
    compute_progress,
    probe_confidence,
    probe_pairs,
    trace_from_log_confidences,
)
from .config import apply_overrides, load_config, save_config
from .errors import StateError
from .segmentation import (
    CutpointSet,
    SegmentedTrajectory,
    find_cutpoints,
    partition_adaptive,
    partition_fixed,
)
from .signal_eval import ClassificationReport, report_from_deltas, score_corpus
from .tasks import (
    LabeledStep,
    Problem,
    generate_labeled_corpus,
    generate_problem,
    verify,
)
from .trainer import (
    TaskSpec,
    TrainConfig,
    TrainMetrics,
    compare,
    debug_dump_group,
    run_summary,
    sweep,
    train,
)
from .vocab import Vocab, standard_vocab

__version__ = "0.1.0"

__all__ = [
    "ClassificationReport",
    "CutpointSet",
    "GroupBatch",
    "LabeledStep",
    "PolicyParams",
    "Problem",
    "ProgressTrace",
    "SegmentedTrajectory",
    "StateError",
    "TaskSpec",
    "TrainConfig",
    "TrainMetrics",
    "Trajectory",
    "Vocab",
    "apply_overrides",
    "classify_steps",
    "compare",
    "compute_progress",
    "debug_dump_group",
    "find_cutpoints",
    "forward",
    "generate_labeled_corpus",
    "generate_problem",
    "hybrid_advantages",
    "init_params",
    "load_config",
    "load_params",
    "outcome_advantages",
    "partition_adaptive",
    "partition_fixed",
    "policy_objective_coeffs",
    "probe_confidence",
    "probe_pairs",
    "report_from_deltas",
    "response_logprobs_batch",
    "run_summary",
    "sample_batch",
    "sample_trajectory",
    "save_config",
    "save_params",
    "score_corpus",
    "sequence_logprob",
    "sequence_logprob_batch",
    "standard_vocab",
    "sweep",
    "trace_from_log_confidences",
    "train",
    "verify",
    "weighted_logprob_gradient",
    "weighted_logprob_gradient_batch",
    "__version__",
]
