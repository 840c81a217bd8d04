"""Group-relative training with probed process credit.

One step: draw a batch of fresh problems, sample a group of responses per
problem, verify each for a binary reward, split every response into a
reasoning prefix and an answer span, segment the reasoning at
high-entropy cutpoints, probe the gold-answer confidence at each segment
boundary under the pre-update parameters, fuse outcome and progress into
per-token coefficients, and apply one plain SGD ascent step.

The baseline method runs the same loop with segmentation and probing
disabled and pure outcome coefficients; with alpha = 0 the two paths
produce bit-identical parameter streams.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .advantage import (
    CLIPPED,
    OBJECTIVE_MODES,
    REINFORCE,
    GroupBatch,
    hybrid_advantages,
    outcome_advantages,
    policy_objective_coeffs,
)
from .errors import StateError
from .policy import (
    PolicyParams,
    Trajectory,
    init_params,
    response_logprobs_batch,
    sample_batch,
    save_params,
    sequence_logprob_batch,
    weighted_logprob_gradient_batch,
)
from .progress import probe_pairs, trace_from_log_confidences
from .segmentation import (
    ADAPTIVE,
    STRATEGIES,
    find_cutpoints,
    partition_adaptive,
    partition_fixed,
)
from .tasks import (
    MAX_DIFFICULTY,
    MIN_DIFFICULTY,
    TASK_KINDS,
    Problem,
    generate_problem,
    verify,
)
from .vocab import standard_vocab

GRPO_VPS = "grpo_vps"
GRPO = "grpo"
METHODS = (GRPO_VPS, GRPO)

_VOCAB = standard_vocab()

# warmup steps cap the gradient norm: occasional early batches sit on a
# loss cliff that otherwise throws the parameters past recovery
_WARMUP_CLIP = 0.5


@dataclass
class TaskSpec:
    """Which synthetic task family and difficulty to train on."""

    kind: str = "chain_add"
    difficulty: int = 3

    def validate(self) -> None:
        if self.kind not in TASK_KINDS:
            raise ValueError(
                f"task kind {self.kind!r} not one of {TASK_KINDS}"
            )
        if not MIN_DIFFICULTY <= self.difficulty <= MAX_DIFFICULTY:
            raise ValueError(
                f"difficulty must lie in [{MIN_DIFFICULTY}, {MAX_DIFFICULTY}], "
                f"got {self.difficulty}"
            )

    def to_dict(self) -> dict:
        return {"kind": self.kind, "difficulty": self.difficulty}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        spec = cls(**d)
        spec.validate()
        return spec


@dataclass
class TrainConfig:
    """Hyperparameters for one training run.

    Desk-scale defaults: G = 8 responses per problem, temperature 1.0,
    alpha = 1.2, percentile 0.95, n = 4 cutpoints per segment; batch 32
    problems and a 64-token response cap stand in for production-scale
    batching.  Model size and the SGD schedule are calibrated so the
    default task trains to high accuracy in a few hundred steps.
    """

    group_size: int = 8
    batch_size: int = 32
    mini_batch_size: int = 32
    learning_rate: float = 0.05
    temperature: float = 1.0
    max_response_len: int = 64
    alpha: float = 1.2
    percentile_p: float = 0.95
    n_per_segment: int = 4
    strategy: str = ADAPTIVE
    objective: str = REINFORCE
    eps_low: float = 0.2
    eps_high: float = 0.27
    total_steps: int = 600
    seed: int = 0
    reproducible: bool = True
    # method selects the full loop or the probe-free baseline
    method: str = GRPO_VPS
    fixed_segments: int = 6
    mini_epochs: int = 1
    momentum: float = 0.0
    std_normalize: bool = False
    checkpoint_every: int = 0
    embed_dim: int = 32
    hidden_dim: int = 96
    window: int = 24
    # supervised warm start standing in for a pretrained base model;
    # uniform-init policies cannot discover rationale-length responses
    # under binary rewards and collapse into degenerate attractors
    warmup_steps: int = 800
    warmup_lr: float = 3.0
    # fraction of warmup targets carrying one redundant restated step, so
    # the warm start retains verbosity for the reinforcement phase to trim;
    # off by default: restatement modes plus an unsegmented (single-chunk)
    # probe bonus can feed a padding loop that runs length to the cap
    warmup_redundancy: float = 0.0
    # fraction of warmup targets cut to j steps + answer, so the belief
    # probe's conditional is calibrated on partial reasoning; costs some
    # convergence speed in the reinforcement phase, so opt-in
    warmup_partial: float = 0.0
    # fraction of warmup targets whose final step mis-states one result
    # digit while the answer stays true, so the answer head re-derives
    # instead of copying the displayed value verbatim
    warmup_typo: float = 0.0

    def validate(self) -> None:
        if self.group_size < 2:
            raise ValueError(f"group_size must be >= 2, got {self.group_size}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.mini_batch_size < 1:
            raise ValueError(
                f"mini_batch_size must be >= 1, got {self.mini_batch_size}"
            )
        if self.batch_size % self.mini_batch_size != 0:
            raise ValueError(
                f"mini_batch_size {self.mini_batch_size} must divide "
                f"batch_size {self.batch_size}"
            )
        # zero is allowed so a no-op run still emits metrics
        if self.learning_rate < 0.0:
            raise ValueError(
                f"learning_rate must be >= 0, got {self.learning_rate}"
            )
        if self.temperature <= 0.0:
            raise ValueError(
                f"temperature must be > 0, got {self.temperature}"
            )
        if self.max_response_len < 1:
            raise ValueError(
                f"max_response_len must be >= 1, got {self.max_response_len}"
            )
        if self.alpha < 0.0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not 0.0 < self.percentile_p < 1.0:
            raise ValueError(
                f"percentile_p must lie in (0, 1), got {self.percentile_p}"
            )
        if self.n_per_segment < 1:
            raise ValueError(
                f"n_per_segment must be >= 1, got {self.n_per_segment}"
            )
        if self.strategy not in STRATEGIES:
            raise ValueError(
                f"strategy {self.strategy!r} not one of {STRATEGIES}"
            )
        if self.objective not in OBJECTIVE_MODES:
            raise ValueError(
                f"objective {self.objective!r} not one of {OBJECTIVE_MODES}"
            )
        if not 0.0 <= self.eps_low < 1.0:
            raise ValueError(f"eps_low must lie in [0, 1), got {self.eps_low}")
        if self.eps_high < 0.0:
            raise ValueError(f"eps_high must be >= 0, got {self.eps_high}")
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")
        if self.method not in METHODS:
            raise ValueError(f"method {self.method!r} not one of {METHODS}")
        if self.fixed_segments < 1:
            raise ValueError(
                f"fixed_segments must be >= 1, got {self.fixed_segments}"
            )
        if self.mini_epochs < 1:
            raise ValueError(f"mini_epochs must be >= 1, got {self.mini_epochs}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(
                f"momentum must lie in [0, 1), got {self.momentum}"
            )
        for name in ("embed_dim", "hidden_dim", "window"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.warmup_steps < 0:
            raise ValueError(
                f"warmup_steps must be >= 0, got {self.warmup_steps}"
            )
        if self.warmup_lr < 0.0:
            raise ValueError(f"warmup_lr must be >= 0, got {self.warmup_lr}")
        if not 0.0 <= self.warmup_redundancy < 1.0:
            raise ValueError(
                f"warmup_redundancy must lie in [0, 1), got {self.warmup_redundancy}"
            )
        if not 0.0 <= self.warmup_partial < 1.0:
            raise ValueError(
                f"warmup_partial must lie in [0, 1), got {self.warmup_partial}"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        config = cls(**d)
        config.validate()
        return config


@dataclass
class TrainMetrics:
    """Per-step diagnostics, one JSONL line each."""

    step: int
    mean_reward: float
    train_accuracy: float
    mean_response_len: float
    grad_norm: float
    mean_entropy: float
    mean_abs_delta_c: float
    wall_ms: float

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "mean_reward": self.mean_reward,
            "train_accuracy": self.train_accuracy,
            "mean_response_len": self.mean_response_len,
            "grad_norm": self.grad_norm,
            "mean_entropy": self.mean_entropy,
            "mean_abs_delta_c": self.mean_abs_delta_c,
            "wall_ms": self.wall_ms,
        }


def _problem_seeds(rng: np.random.Generator, count: int) -> np.ndarray:
    return rng.integers(0, 2**62, size=count)


def _split_response(response_ids: np.ndarray) -> int:
    """Length of the reasoning prefix: tokens before the last delimiter.

    A response without a delimiter is all reasoning; one that opens with
    the delimiter has no reasoning tokens.
    """
    hits = np.nonzero(response_ids == _VOCAB.answer_delim_id)[0]
    return int(hits[-1]) if hits.size else int(response_ids.size)


def _reasoning_view(rollout: Trajectory, t_reasoning: int) -> Trajectory:
    return Trajectory(
        prompt_ids=rollout.prompt_ids,
        response_ids=rollout.response_ids[:t_reasoning],
        step_logprobs=rollout.step_logprobs[:t_reasoning],
        entropies=rollout.entropies[:t_reasoning],
        terminated=False,
    )


def _segment_rollout(rollout: Trajectory, t_reasoning: int, config: TrainConfig):
    view = _reasoning_view(rollout, t_reasoning)
    if config.strategy == ADAPTIVE:
        cut = find_cutpoints(view, config.percentile_p)
        return partition_adaptive(view, cut, config.n_per_segment)
    return partition_fixed(view, config.fixed_segments)


def build_group_batches(
    params: PolicyParams,
    problems: list[Problem],
    rollout_groups: list[list[Trajectory]],
    config: TrainConfig,
) -> tuple[list[GroupBatch], int]:
    """Segment, probe, and fuse advantages for one step's rollouts.

    All probes across the whole batch run as a single scoring pass under
    the given (pre-update) parameters.  Returns the per-prompt batches and
    the number of probe rows scored, for work accounting.
    """
    use_probes = config.method == GRPO_VPS
    n_groups = len(problems)
    rewards = []
    reasoning_lens = []
    segs = []
    pair_buf = []
    pair_counts = []
    for i, problem in enumerate(problems):
        gold = np.asarray(problem.gold_answer_ids, dtype=np.int64)
        for rollout in rollout_groups[i]:
            rewards.append(verify(problem, rollout.response_ids))
            t_r = _split_response(rollout.response_ids)
            reasoning_lens.append(t_r)
            if use_probes and t_r > 0:
                seg = _segment_rollout(rollout, t_r, config)
                pairs = probe_pairs(seg, gold)
                segs.append(seg)
                pair_buf.extend(pairs)
                pair_counts.append(len(pairs))
            else:
                segs.append(None)
                pair_counts.append(0)

    probe_rows = sum(int(c[1].size) for c in pair_buf)
    log_cs = sequence_logprob_batch(params, pair_buf) if pair_buf else np.zeros(0)

    batches = []
    g = config.group_size
    flat = 0
    probe_at = 0
    for i, problem in enumerate(problems):
        group = rollout_groups[i]
        group_rewards = rewards[flat : flat + g]
        adv = outcome_advantages(
            group_rewards, std_normalize=config.std_normalize
        )
        group_segs = []
        group_traces = []
        group_coeffs = []
        for j, rollout in enumerate(group):
            t_total = rollout.length
            t_r = reasoning_lens[flat + j]
            seg = segs[flat + j]
            n_pairs = pair_counts[flat + j]
            a_i = float(adv[j])
            if seg is None:
                trace = None
                coeffs = np.full(t_total, a_i)
            else:
                trace = trace_from_log_confidences(
                    log_cs[probe_at : probe_at + n_pairs]
                )
                coeffs = hybrid_advantages(
                    a_i, trace.deltas, config.alpha, seg, (t_r + 1, t_total + 1)
                )
            probe_at += n_pairs
            group_segs.append(seg)
            group_traces.append(trace)
            group_coeffs.append(coeffs)
        batches.append(
            GroupBatch(
                prompt_ref=problem,
                rollouts=tuple(group),
                trajectories=tuple(group_segs),
                progress=tuple(group_traces),
                rewards=tuple(int(r) for r in group_rewards),
                outcome_advantages=adv,
                alpha=config.alpha,
                per_token_advantages=tuple(group_coeffs),
            )
        )
        flat += g
    return batches, probe_rows


def _apply_update(
    params: PolicyParams,
    batches: list[GroupBatch],
    velocity: np.ndarray,
    config: TrainConfig,
    step: int,
) -> tuple[np.ndarray, int]:
    """Gradient step(s) for one batch; returns (applied direction, grad rows).

    Reinforce mode takes one step over the whole batch.  Clipped mode
    replays the batch in mini-batches for the configured number of
    mini-epochs, re-scoring token log-probs under the updating parameters
    and clipping the ratio against the sampling-time log-probs.
    """
    applied = np.zeros_like(params.theta)
    grad_rows = 0

    def take_step(group_slice: list[GroupBatch], coeff_lists) -> None:
        nonlocal grad_rows
        items = []
        for batch, coeffs in zip(group_slice, coeff_lists):
            for rollout, c in zip(batch.rollouts, coeffs):
                items.append((rollout.prompt_ids, rollout.response_ids, c))
                grad_rows += rollout.length
        total = weighted_logprob_gradient_batch(params, items)
        if not np.isfinite(total).all():
            raise StateError(f"trainer: non-finite gradient at step {step}")
        grad = total / (len(group_slice) * config.group_size)
        np.multiply(velocity, config.momentum, out=velocity)
        np.add(velocity, grad, out=velocity)
        applied[:] += velocity
        params.theta += config.learning_rate * velocity

    if config.objective == REINFORCE:
        coeff_lists = [
            policy_objective_coeffs(b, REINFORCE)[0] for b in batches
        ]
        take_step(batches, coeff_lists)
        return applied, grad_rows

    old_lps = [
        [np.array(r.step_logprobs) for r in b.rollouts] for b in batches
    ]
    groups_per_mini = config.mini_batch_size
    for _ in range(config.mini_epochs):
        for lo in range(0, len(batches), groups_per_mini):
            chunk = batches[lo : lo + groups_per_mini]
            chunk_old = old_lps[lo : lo + groups_per_mini]
            coeff_lists = []
            for batch, old in zip(chunk, chunk_old):
                pairs = [
                    (r.prompt_ids, r.response_ids) for r in batch.rollouts
                ]
                new = response_logprobs_batch(params, pairs)
                grad_rows += sum(lp.size for lp in new)
                coeffs, _ = policy_objective_coeffs(
                    batch,
                    CLIPPED,
                    config.eps_low,
                    config.eps_high,
                    old,
                    new_logprobs=new,
                )
                coeff_lists.append(coeffs)
            take_step(chunk, coeff_lists)
    return applied, grad_rows


def _typo_step(step: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Perturb one digit of the step's stated result, leaving the rest."""
    eq = _VOCAB.id_of("=")
    digit_ids = [_VOCAB.digit_id(d) for d in range(10)]
    out = step.copy()
    span = np.flatnonzero(out == eq)
    if span.size == 0:
        return out
    lo = int(span[-1]) + 1
    hi = out.size - 1 if out[-1] == _VOCAB.id_of("#") else out.size
    if hi <= lo:
        return out
    pos = int(rng.integers(lo, hi))
    old = int(out[pos])
    if old not in digit_ids:
        # comparison result: the only false display is the other sign
        lt, gt = _VOCAB.id_of("<"), _VOCAB.id_of(">")
        out[pos] = gt if old == lt else lt
        return out
    choices = [d for d in digit_ids if d != old]
    out[pos] = choices[int(rng.integers(len(choices)))]
    return out


def _warmup_target(
    problem,
    redundancy: float,
    partial: float,
    typo: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Gold response, with occasional verbosity or miscalibration variants.

    A `redundancy` fraction of targets append a recheck of one earlier
    step after the chain completes: the reflective re-verification a
    verbose base model produces, leaving the reinforcement phase actual
    slack to trim.  The echoed step is always a stale one (never the
    final step) so the recheck moves an outdated accumulator next to the
    answer position; re-deriving the final step would leave the answer
    context unchanged and the detour undetectable.  A `partial` fraction
    keep only the first j steps and jump straight to the answer, which
    calibrates the conditional P(answer | partial reasoning) that belief
    probes read out; a model warmed only on complete rationales pins
    that conditional to the current accumulator and the probed
    confidence degenerates to a step function at the final segment.  A
    `typo` fraction mis-state one digit of the final step's result while
    keeping the true answer, so the answer head learns to re-derive from
    the operands instead of trusting the displayed result verbatim; a
    pure-copy answer head rates any displayed value as fully believable
    and the probe cannot tell a false step from a true one.
    """
    steps = [np.asarray(s, dtype=np.int64) for s in problem.gold_steps]
    tail = np.asarray(
        (_VOCAB.answer_delim_id,) + problem.gold_answer_ids, dtype=np.int64
    )
    if steps and partial > 0.0 and rng.random() < partial:
        j = int(rng.integers(len(steps)))
        return np.concatenate(steps[:j] + [tail]) if j else tail.copy()
    if steps and typo > 0.0 and rng.random() < typo:
        steps[-1] = _typo_step(steps[-1], rng)
    elif len(steps) > 1 and redundancy > 0.0 and rng.random() < redundancy:
        k = int(rng.integers(len(steps) - 1))
        steps.append(steps[k])
    return np.concatenate(steps + [tail])


def _warmup(
    params: PolicyParams,
    config: TrainConfig,
    task: TaskSpec,
    problem_rng: np.random.Generator,
) -> None:
    """Supervised steps on gold responses before any sampling.

    Stands in for the pretrained base model of the production setting:
    maximum likelihood on freshly drawn gold rationales, normalized per
    token, so the policy enters the sampling loop able to emit
    well-formed reasoning at all.
    """
    for k in range(config.warmup_steps):
        seeds = _problem_seeds(problem_rng, config.batch_size)
        items = []
        n_tokens = 0
        for s in seeds:
            problem = generate_problem(task.kind, task.difficulty, int(s))
            gold = _warmup_target(
                problem,
                config.warmup_redundancy,
                config.warmup_partial,
                problem_rng,
            )
            items.append(
                (
                    np.asarray(problem.prompt_ids, dtype=np.int64),
                    gold,
                    np.ones(gold.size),
                )
            )
            n_tokens += gold.size
        grad = weighted_logprob_gradient_batch(params, items) / n_tokens
        if not np.isfinite(grad).all():
            raise StateError(f"trainer: non-finite gradient in warmup step {k + 1}")
        norm = float(np.linalg.norm(grad))
        if norm > _WARMUP_CLIP:
            grad *= _WARMUP_CLIP / norm
        params.theta += config.warmup_lr * grad


def train(
    config: TrainConfig,
    task_spec: TaskSpec | None = None,
    *,
    checkpoint_out=None,
    metrics_path=None,
    on_step=None,
) -> tuple[PolicyParams, list[TrainMetrics]]:
    """Run the full training loop and return final params plus metrics.

    Probes always run under the parameters that generated the rollouts,
    before the update touches them.  With `reproducible` on, wall_ms
    reports the deterministic count of forward-evaluation rows (sampling,
    greedy eval, probes, and gradient passes) instead of elapsed time, so
    repeated runs write byte-identical metrics streams.
    """
    config.validate()
    task = task_spec if task_spec is not None else TaskSpec()
    task.validate()

    root = np.random.SeedSequence(config.seed)
    init_seed, sample_seed, problem_seed = (
        int(s) for s in root.generate_state(3, dtype=np.uint64)
    )
    params = init_params(
        _VOCAB.size,
        embed_dim=config.embed_dim,
        hidden_dim=config.hidden_dim,
        window=config.window,
        seed=init_seed,
    )
    sample_rng = np.random.default_rng(sample_seed)
    problem_rng = np.random.default_rng(problem_seed)
    velocity = np.zeros_like(params.theta)
    _warmup(params, config, task, problem_rng)

    checkpoint_extra = {"config": config.to_dict(), "task": task.to_dict()}
    metrics_file = open(metrics_path, "w") if metrics_path is not None else None
    metrics: list[TrainMetrics] = []
    try:
        for step in range(1, config.total_steps + 1):
            t0 = time.perf_counter()
            seeds = _problem_seeds(problem_rng, config.batch_size)
            problems = [
                generate_problem(task.kind, task.difficulty, int(s))
                for s in seeds
            ]
            prompts = [
                np.asarray(p.prompt_ids, dtype=np.int64)
                for p in problems
                for _ in range(config.group_size)
            ]
            rollouts = sample_batch(
                params,
                prompts,
                temperature=config.temperature,
                max_len=config.max_response_len,
                rng=sample_rng,
            )
            rollout_groups = [
                rollouts[i * config.group_size : (i + 1) * config.group_size]
                for i in range(config.batch_size)
            ]
            greedy = sample_batch(
                params,
                [np.asarray(p.prompt_ids, dtype=np.int64) for p in problems],
                temperature=config.temperature,
                max_len=config.max_response_len,
                greedy=True,
            )

            batches, probe_rows = build_group_batches(
                params, problems, rollout_groups, config
            )
            applied, grad_rows = _apply_update(
                params, batches, velocity, config, step
            )
            if not np.isfinite(params.theta).all():
                raise StateError(
                    f"trainer: non-finite parameters after step {step}"
                )

            response_lens = np.array([r.length for r in rollouts])
            all_entropies = np.concatenate([r.entropies for r in rollouts])
            all_deltas = [
                abs(d)
                for b in batches
                for tr in b.progress
                if tr is not None
                for d in tr.deltas
            ]
            n_correct = sum(
                verify(p, g.response_ids) for p, g in zip(problems, greedy)
            )
            if config.reproducible:
                work = (
                    int(response_lens.sum())
                    + sum(g.length for g in greedy)
                    + probe_rows
                    + grad_rows
                )
                wall_ms = float(work)
            else:
                wall_ms = (time.perf_counter() - t0) * 1e3
            rewards_flat = [r for b in batches for r in b.rewards]
            m = TrainMetrics(
                step=step,
                mean_reward=float(np.mean(rewards_flat)),
                train_accuracy=n_correct / config.batch_size,
                mean_response_len=float(response_lens.mean()),
                grad_norm=float(np.linalg.norm(applied)),
                mean_entropy=float(all_entropies.mean()),
                mean_abs_delta_c=(
                    float(np.mean(all_deltas)) if all_deltas else 0.0
                ),
                wall_ms=wall_ms,
            )
            metrics.append(m)
            if metrics_file is not None:
                metrics_file.write(json.dumps(m.to_dict()) + "\n")
                metrics_file.flush()
            if on_step is not None:
                on_step(m)
            if (
                checkpoint_out is not None
                and config.checkpoint_every > 0
                and step % config.checkpoint_every == 0
            ):
                save_params(
                    checkpoint_out,
                    params,
                    seed=config.seed,
                    extra={**checkpoint_extra, "step": step},
                )
    finally:
        if metrics_file is not None:
            metrics_file.close()

    if checkpoint_out is not None:
        save_params(
            checkpoint_out,
            params,
            seed=config.seed,
            extra={**checkpoint_extra, "step": config.total_steps},
        )
    return params, metrics


# ---------------------------------------------------------------------------
# paired comparison and sweeps
# ---------------------------------------------------------------------------


def _steps_to_threshold(metrics: list[TrainMetrics], threshold: float) -> float:
    for m in metrics:
        if m.train_accuracy >= threshold:
            return float(m.step)
    return math.inf


def run_summary(metrics: list[TrainMetrics], threshold: float) -> dict:
    """Scalar summary of one run: convergence speed and end-of-run state."""
    tail = max(1, len(metrics) // 10)
    window = metrics[-tail:]
    grad_norms = np.array([m.grad_norm for m in metrics])
    return {
        "steps_to_threshold": _steps_to_threshold(metrics, threshold),
        "final_accuracy": float(
            np.mean([m.train_accuracy for m in window])
        ),
        "final_response_len": float(
            np.mean([m.mean_response_len for m in window])
        ),
        "grad_norm_var": float(grad_norms.var()),
    }


def _paired_diff(a: float, b: float) -> float:
    # identical runs must difference to exactly zero, even at +inf
    return 0.0 if a == b else a - b


def _run_arm(
    config: TrainConfig,
    task: TaskSpec,
    seeds: list[int],
    threshold: float,
    metrics_dir,
    label: str,
) -> dict:
    per_seed = []
    for seed in seeds:
        run_config = replace(config, seed=seed)
        metrics_path = None
        if metrics_dir is not None:
            metrics_path = f"{metrics_dir}/{label}_seed{seed}.jsonl"
        _, metrics = train(run_config, task, metrics_path=metrics_path)
        per_seed.append(run_summary(metrics, threshold))
    summary = {"config": config.to_dict(), "per_seed": per_seed}
    for key in per_seed[0]:
        summary[f"median_{key}"] = float(
            np.median([s[key] for s in per_seed])
        )
    return summary


def compare(
    config_a: TrainConfig,
    config_b: TrainConfig,
    n_seeds: int,
    metrics_out=None,
    *,
    task_spec: TaskSpec | None = None,
    threshold: float = 0.9,
) -> dict:
    """Paired A/B over shared seeds and identical problem streams.

    Problem generation depends only on (seed, step, slot), so arms with
    equal batch shapes see the same problems at every step of a paired
    run.  Differences are a - b per seed; +inf (never reached threshold)
    pairs difference to 0 when equal.
    """
    if n_seeds < 3:
        raise ValueError(f"n_seeds must be >= 3, got {n_seeds}")
    task = task_spec if task_spec is not None else TaskSpec()
    seeds = [config_a.seed + k for k in range(n_seeds)]
    arm_a = _run_arm(config_a, task, seeds, threshold, metrics_out, "arm_a")
    arm_b = _run_arm(config_b, task, seeds, threshold, metrics_out, "arm_b")
    paired = {
        key: [
            _paired_diff(sa[key], sb[key])
            for sa, sb in zip(arm_a["per_seed"], arm_b["per_seed"])
        ]
        for key in arm_a["per_seed"][0]
    }
    return {
        "task": task.to_dict(),
        "threshold": threshold,
        "seeds": seeds,
        "arm_a": arm_a,
        "arm_b": arm_b,
        "paired_differences": paired,
    }


def sweep(
    base_config: TrainConfig,
    param: str,
    values,
    n_seeds: int,
    metrics_out=None,
    *,
    task_spec: TaskSpec | None = None,
    threshold: float = 0.9,
) -> list[dict]:
    """One summary row per grid value of a single config field."""
    if not values:
        raise ValueError("sweep needs at least one value")
    if param not in {f.name for f in fields(TrainConfig)}:
        raise ValueError(f"unknown sweep parameter {param!r}")
    task = task_spec if task_spec is not None else TaskSpec()
    rows = []
    for value in values:
        config = replace(base_config, **{param: value})
        config.validate()
        label = f"{param}_{value}"
        arm = _run_arm(config, task, [base_config.seed + k for k in range(n_seeds)],
                       threshold, metrics_out, label)
        rows.append({param: value, **arm})
    return rows


# ---------------------------------------------------------------------------
# debug dumps
# ---------------------------------------------------------------------------


def debug_dump_group(
    params: PolicyParams,
    config: TrainConfig,
    task_spec: TaskSpec,
    *,
    problem_seed: int = 0,
    rng_seed: int = 0,
) -> list[dict]:
    """Sample one group and expose its per-rollout training view.

    Each record carries the decoded tokens, reward, segment boundaries,
    probed confidences and deltas, and the per-token coefficients the
    update would use.
    """
    problem = generate_problem(task_spec.kind, task_spec.difficulty, problem_seed)
    prompts = [
        np.asarray(problem.prompt_ids, dtype=np.int64)
        for _ in range(config.group_size)
    ]
    rollouts = sample_batch(
        params,
        prompts,
        temperature=config.temperature,
        max_len=config.max_response_len,
        rng=np.random.default_rng(rng_seed),
    )
    batches, _ = build_group_batches(params, [problem], [rollouts], config)
    batch = batches[0]
    records = []
    for j, rollout in enumerate(batch.rollouts):
        seg = batch.trajectories[j]
        trace = batch.progress[j]
        records.append(
            {
                "problem_id": problem.problem_id,
                "prompt": problem.prompt_text(),
                "tokens": [_VOCAB.tokens[t] for t in rollout.response_ids],
                "reward": batch.rewards[j],
                "boundaries": list(seg.boundaries) if seg is not None else [],
                "c_values": list(trace.c_values) if trace is not None else [],
                "deltas": list(trace.deltas) if trace is not None else [],
                "per_token_advantages": [
                    float(c) for c in batch.per_token_advantages[j]
                ],
            }
        )
    return records
