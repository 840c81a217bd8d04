"""Scoring the progress signal as a step-quality classifier.

A labeled corpus pairs reasoning steps with ground-truth +1/-1 quality
labels.  For each step we probe the policy's gold-answer confidence just
before and just after the step (teacher-forced on the gold prefix) and
classify the confidence change with classify_steps.  Precision, recall
and F1 per class summarize how well the confidence delta tracks step
quality.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .policy import PolicyParams, sequence_logprob_batch
from .progress import classify_steps
from .tasks import LabeledStep
from .vocab import standard_vocab

_DEFAULT_DELIM_ID = standard_vocab().answer_delim_id

_F1_TOL = 1e-12


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _rate(num: int, den: int) -> float:
    # 0/0 -> 0.0: an empty class scores zero rather than raising
    return num / den if den else 0.0


@dataclass(frozen=True)
class ClassificationReport:
    """Per-class precision/recall/F1 for the +1 and -1 step labels.

    Supports count the scored (non-abstained) items per true label;
    abstain_count is the number of steps whose delta fell inside the dead
    band and was excluded from the confusion matrix.  The four matrix
    cells are recoverable: tp = recall_pos * support_pos and so on.
    """

    precision_pos: float
    recall_pos: float
    f1_pos: float
    precision_neg: float
    recall_neg: float
    f1_neg: float
    support_pos: int
    support_neg: int
    abstain_count: int
    dead_band: float

    def __post_init__(self) -> None:
        rates = (
            self.precision_pos,
            self.recall_pos,
            self.f1_pos,
            self.precision_neg,
            self.recall_neg,
            self.f1_neg,
        )
        for value in rates:
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"classification rate {value} outside [0, 1]")
        if min(self.support_pos, self.support_neg, self.abstain_count) < 0:
            raise ValueError("counts must be non-negative")
        if self.dead_band < 0.0:
            raise ValueError(f"dead_band must be >= 0, got {self.dead_band}")
        if abs(self.f1_pos - _f1(self.precision_pos, self.recall_pos)) > _F1_TOL:
            raise ValueError("f1_pos is not the harmonic mean of its P and R")
        if abs(self.f1_neg - _f1(self.precision_neg, self.recall_neg)) > _F1_TOL:
            raise ValueError("f1_neg is not the harmonic mean of its P and R")

    def to_dict(self) -> dict:
        return {
            "precision_pos": self.precision_pos,
            "recall_pos": self.recall_pos,
            "f1_pos": self.f1_pos,
            "precision_neg": self.precision_neg,
            "recall_neg": self.recall_neg,
            "f1_neg": self.f1_neg,
            "support_pos": self.support_pos,
            "support_neg": self.support_neg,
            "abstain_count": self.abstain_count,
            "dead_band": self.dead_band,
        }


def report_from_deltas(
    deltas: np.ndarray, labels: np.ndarray, dead_band: float = 0.0
) -> ClassificationReport:
    """Classify confidence deltas and tally them against true labels.

    The confusion matrix covers scored items only: a delta inside the
    dead band abstains and drops out of both precision and recall.
    """
    d = np.asarray(deltas, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if d.shape != y.shape or d.ndim != 1 or d.size == 0:
        raise ValueError("deltas and labels must be matching non-empty 1-d arrays")
    if not np.all(np.isin(y, (-1, 1))):
        raise ValueError("labels must be +1 or -1")

    preds = classify_steps(d, dead_band)
    scored = preds != 0
    abstained = int(np.count_nonzero(~scored))
    p, t = preds[scored], y[scored]

    tp = int(np.count_nonzero((p == 1) & (t == 1)))
    fp = int(np.count_nonzero((p == 1) & (t == -1)))
    fn = int(np.count_nonzero((p == -1) & (t == 1)))
    tn = int(np.count_nonzero((p == -1) & (t == -1)))

    precision_pos = _rate(tp, tp + fp)
    recall_pos = _rate(tp, tp + fn)
    precision_neg = _rate(tn, tn + fn)
    recall_neg = _rate(tn, tn + fp)
    return ClassificationReport(
        precision_pos=precision_pos,
        recall_pos=recall_pos,
        f1_pos=_f1(precision_pos, recall_pos),
        precision_neg=precision_neg,
        recall_neg=recall_neg,
        f1_neg=_f1(precision_neg, recall_neg),
        support_pos=tp + fn,
        support_neg=tn + fp,
        abstain_count=abstained,
        dead_band=float(dead_band),
    )


def corpus_deltas(
    params: PolicyParams,
    corpus: list[LabeledStep],
    *,
    answer_delim_id: int = _DEFAULT_DELIM_ID,
) -> np.ndarray:
    """Confidence change of every corpus step under the given policy.

    Probes C(prefix + step) - C(prefix) with the gold answer, conditioning
    each probe on the answer delimiter; both probes of every step run in a
    single batched scoring pass.
    """
    if not corpus:
        raise ValueError("corpus must be non-empty")
    delim = np.array([answer_delim_id], dtype=np.int64)
    pairs = []
    for item in corpus:
        prompt = np.asarray(item.problem.prompt_ids, dtype=np.int64)
        prefix = np.asarray(item.prefix_ids, dtype=np.int64)
        step = np.asarray(item.step_ids, dtype=np.int64)
        gold = np.asarray(item.problem.gold_answer_ids, dtype=np.int64)
        before = np.concatenate([prompt, prefix, delim])
        after = np.concatenate([prompt, prefix, step, delim])
        pairs.append((before, gold))
        pairs.append((after, gold))
    cs = np.exp(sequence_logprob_batch(params, pairs))
    return cs[1::2] - cs[0::2]


def score_corpus(
    params: PolicyParams,
    corpus: list[LabeledStep],
    dead_band: float = 0.0,
    *,
    answer_delim_id: int = _DEFAULT_DELIM_ID,
) -> ClassificationReport:
    """Evaluate the progress signal against a labeled step corpus."""
    deltas = corpus_deltas(params, corpus, answer_delim_id=answer_delim_id)
    labels = np.array([item.label for item in corpus], dtype=np.int64)
    return report_from_deltas(deltas, labels, dead_band)
