"""Training loop: determinism, method equivalences, artifacts, summaries."""

import json
import math

import numpy as np
import pytest

from probegrpo import (
    GroupBatch,
    StateError,
    TaskSpec,
    TrainConfig,
    TrainMetrics,
    compare,
    debug_dump_group,
    generate_problem,
    load_params,
    outcome_advantages,
    run_summary,
    sample_batch,
    sweep,
    train,
    verify,
)
from probegrpo.trainer import _apply_update, _split_response, _warmup_target
from probegrpo.vocab import standard_vocab

VOCAB = standard_vocab()


def _tiny(**overrides) -> TrainConfig:
    """A config small enough that a full run takes well under a second."""
    base = dict(
        group_size=2,
        batch_size=2,
        mini_batch_size=2,
        max_response_len=10,
        total_steps=3,
        warmup_steps=4,
        embed_dim=4,
        hidden_dim=8,
        window=6,
        seed=11,
    )
    base.update(overrides)
    return TrainConfig(**base)


_TASK = TaskSpec(kind="chain_add", difficulty=2)


# -- config and task validation --------------------------------------------


def test_config_validate_rejects_bad_values():
    bad = [
        dict(group_size=1),
        dict(batch_size=0),
        dict(mini_batch_size=0),
        dict(learning_rate=-0.1),
        dict(temperature=0.0),
        dict(max_response_len=0),
        dict(alpha=-0.5),
        dict(percentile_p=0.0),
        dict(percentile_p=1.0),
        dict(n_per_segment=0),
        dict(strategy="spiral"),
        dict(objective="ppo2"),
        dict(eps_low=-0.1),
        dict(total_steps=0),
        dict(method="dpo"),
        dict(fixed_segments=0),
        dict(mini_epochs=0),
        dict(momentum=1.0),
        dict(embed_dim=0),
        dict(hidden_dim=0),
        dict(window=0),
        dict(warmup_steps=-1),
        dict(warmup_lr=-1.0),
        dict(warmup_redundancy=1.0),
        dict(warmup_redundancy=-0.1),
        dict(warmup_partial=1.0),
        dict(warmup_partial=-0.1),
    ]
    for kw in bad:
        with pytest.raises(ValueError):
            _tiny(**kw).validate()


def test_config_mini_batch_must_divide_batch():
    with pytest.raises(ValueError):
        _tiny(batch_size=4, mini_batch_size=3).validate()


def test_config_dict_round_trip():
    config = _tiny(alpha=0.7, objective="clipped")
    again = TrainConfig.from_dict(config.to_dict())
    assert again == config


def test_config_from_dict_rejects_unknown_key():
    d = _tiny().to_dict()
    d["beta"] = 1.0
    with pytest.raises(ValueError, match="beta"):
        TrainConfig.from_dict(d)


def test_task_spec_round_trip_and_validation():
    task = TaskSpec(kind="modular_chain", difficulty=4)
    assert TaskSpec.from_dict(task.to_dict()) == task
    with pytest.raises(ValueError):
        TaskSpec(kind="sudoku", difficulty=3).validate()
    with pytest.raises(ValueError):
        TaskSpec(kind="chain_add", difficulty=0).validate()


# -- response splitting -----------------------------------------------------


def test_split_response_no_delimiter_is_all_reasoning():
    ids = np.array([5, 6, 7, 8], dtype=np.int64)
    assert _split_response(ids) == 4


def test_split_response_uses_last_delimiter():
    d = VOCAB.answer_delim_id
    ids = np.array([5, d, 6, 7, d, 8, 9], dtype=np.int64)
    assert _split_response(ids) == 4


def test_split_response_delimiter_first():
    d = VOCAB.answer_delim_id
    ids = np.array([d, 8, 9], dtype=np.int64)
    assert _split_response(ids) == 0


# -- warmup -----------------------------------------------------------------


def test_warmup_target_zero_redundancy_is_gold():
    problem = generate_problem("chain_add", 3, 5)
    rng = np.random.default_rng(0)
    out = _warmup_target(problem, 0.0, 0.0, rng)
    assert np.array_equal(out, np.asarray(problem.gold_response_ids()))


def test_warmup_target_redundant_echo_is_stale_tail_recheck_and_correct():
    problem = generate_problem("chain_add", 3, 5)
    gold = np.asarray(problem.gold_response_ids())
    steps = [np.asarray(s, dtype=np.int64) for s in problem.gold_steps]
    tail = np.asarray(
        (VOCAB.answer_delim_id,) + problem.gold_answer_ids, dtype=np.int64
    )
    # redundancy just under 1 makes the echo near-certain per draw
    hit = 0
    echoed = set()
    for trial in range(50):
        rng = np.random.default_rng(trial)
        out = _warmup_target(problem, 0.999, 0.0, rng)
        if out.size == gold.size:
            continue
        hit += 1
        # the verbose rationale must be gold plus one earlier step
        # re-verified after the chain completes, and it still verifies;
        # the final step is never the one echoed
        forms = [
            np.concatenate(steps + [steps[k], tail])
            for k in range(len(steps) - 1)
        ]
        matches = [k for k, f in enumerate(forms) if np.array_equal(out, f)]
        assert matches
        echoed.add(matches[0])
        assert verify(problem, out) == 1
    assert hit >= 45
    assert echoed == set(range(len(steps) - 1))


def test_warmup_target_partial_keeps_prefix_plus_answer():
    problem = generate_problem("chain_add", 3, 5)
    steps = [np.asarray(s, dtype=np.int64) for s in problem.gold_steps]
    tail = np.asarray(
        (VOCAB.answer_delim_id,) + problem.gold_answer_ids, dtype=np.int64
    )
    seen_lengths = set()
    for trial in range(60):
        rng = np.random.default_rng(1000 + trial)
        out = _warmup_target(problem, 0.0, 0.999, rng)
        forms = [
            np.concatenate(steps[:j] + [tail]) if j else tail
            for j in range(len(steps))
        ]
        matches = [j for j, f in enumerate(forms) if np.array_equal(out, f)]
        assert matches, "partial target must be j gold steps + answer"
        seen_lengths.add(matches[0])
    # every truncation point occurs, including the bare answer
    assert seen_lengths == set(range(len(steps)))


def test_warmup_changes_params_and_is_deterministic():
    cfg_none = _tiny(warmup_steps=0, total_steps=1, learning_rate=0.0)
    cfg_some = _tiny(warmup_steps=4, total_steps=1, learning_rate=0.0)
    p_none, _ = train(cfg_none, _TASK)
    p_a, _ = train(cfg_some, _TASK)
    p_b, _ = train(cfg_some, _TASK)
    assert not np.array_equal(p_none.theta, p_a.theta)
    assert np.array_equal(p_a.theta, p_b.theta)


# -- core loop invariants ---------------------------------------------------


def test_zero_learning_rate_never_moves_params():
    short = _tiny(learning_rate=0.0, total_steps=1)
    long = _tiny(learning_rate=0.0, total_steps=5)
    p_short, _ = train(short, _TASK)
    p_long, _ = train(long, _TASK)
    assert np.array_equal(p_short.theta, p_long.theta)


def test_same_config_trains_identically():
    config = _tiny(total_steps=4)
    p_a, m_a = train(config, _TASK)
    p_b, m_b = train(config, _TASK)
    assert np.array_equal(p_a.theta, p_b.theta)
    assert [m.to_dict() for m in m_a] == [m.to_dict() for m in m_b]


def test_alpha_zero_matches_plain_grpo_bitwise():
    vps = _tiny(alpha=0.0, method="grpo_vps", total_steps=4)
    plain = _tiny(alpha=0.0, method="grpo", total_steps=4)
    p_vps, m_vps = train(vps, _TASK)
    p_plain, m_plain = train(plain, _TASK)
    assert np.array_equal(p_vps.theta, p_plain.theta)
    for a, b in zip(m_vps, m_plain):
        assert a.mean_reward == b.mean_reward
        assert a.train_accuracy == b.train_accuracy
        assert a.grad_norm == b.grad_norm
        # plain arm never probes, so its delta-c channel reads zero
        assert b.mean_abs_delta_c == 0.0


def test_metrics_counts_are_exact_sample_fractions():
    config = _tiny(total_steps=3)
    _, metrics = train(config, _TASK)
    assert len(metrics) == config.total_steps
    n_rollouts = config.batch_size * config.group_size
    for m in metrics:
        assert m.step >= 1
        # reward mean over B*G binary outcomes is an exact small fraction
        assert float(m.mean_reward * n_rollouts).is_integer()
        assert 0.0 <= m.train_accuracy <= 1.0
        assert m.mean_response_len > 0.0
        assert m.grad_norm >= 0.0
        assert m.wall_ms >= 0


def test_clipped_objective_runs_and_differs_from_reinforce():
    rf = _tiny(total_steps=3)
    cl = _tiny(total_steps=3, objective="clipped", mini_epochs=2)
    p_rf, _ = train(rf, _TASK)
    p_cl, _ = train(cl, _TASK)
    assert p_cl.theta.shape == p_rf.theta.shape
    assert not np.array_equal(p_rf.theta, p_cl.theta)


def test_fixed_strategy_runs():
    config = _tiny(strategy="fixed", fixed_segments=3, total_steps=2)
    params, metrics = train(config, _TASK)
    assert len(metrics) == 2
    assert np.isfinite(params.theta).all()


# -- artifacts --------------------------------------------------------------


def test_metrics_file_and_checkpoint_round_trip(tmp_path):
    config = _tiny(total_steps=3)
    metrics_path = tmp_path / "metrics.jsonl"
    ckpt_path = tmp_path / "checkpoint.bin"
    params, metrics = train(
        config, _TASK, metrics_path=str(metrics_path), checkpoint_out=str(ckpt_path)
    )
    lines = metrics_path.read_text().splitlines()
    assert len(lines) == config.total_steps
    for line, m in zip(lines, metrics):
        assert json.loads(line) == m.to_dict()
    loaded, header = load_params(str(ckpt_path))
    assert np.array_equal(loaded.theta, params.theta)
    assert header["extra"]["step"] == config.total_steps
    assert TrainConfig.from_dict(header["extra"]["config"]) == config
    assert TaskSpec.from_dict(header["extra"]["task"]) == _TASK


def test_checkpoint_every_writes_during_run(tmp_path):
    config = _tiny(total_steps=2, checkpoint_every=1)
    ckpt_path = tmp_path / "checkpoint.bin"
    seen = []

    def on_step(m):
        if ckpt_path.exists():
            seen.append(load_params(str(ckpt_path))[1]["extra"]["step"])

    train(config, _TASK, checkpoint_out=str(ckpt_path), on_step=on_step)
    assert seen and seen[0] == 1


def test_reproducible_runs_write_identical_metrics_bytes(tmp_path):
    config = _tiny(total_steps=3, reproducible=True)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    train(config, _TASK, metrics_path=str(a))
    train(config, _TASK, metrics_path=str(b))
    assert a.read_bytes() == b.read_bytes()


# -- summaries, compare, sweep ---------------------------------------------


def _fake_metrics(accs, lens=None, grads=None):
    lens = lens if lens is not None else [10.0] * len(accs)
    grads = grads if grads is not None else [1.0] * len(accs)
    return [
        TrainMetrics(
            step=i + 1,
            mean_reward=a,
            train_accuracy=a,
            mean_response_len=l,
            grad_norm=g,
            mean_entropy=0.5,
            mean_abs_delta_c=0.1,
            wall_ms=1,
        )
        for i, (a, l, g) in enumerate(zip(accs, lens, grads))
    ]


def test_run_summary_threshold_and_tail():
    accs = [0.1] * 6 + [0.95] + [0.2] * 13
    lens = [float(i) for i in range(20)]
    grads = [1.0, 3.0] * 10
    summary = run_summary(_fake_metrics(accs, lens, grads), 0.9)
    assert summary["steps_to_threshold"] == 7.0
    # tail = last 2 of 20
    assert summary["final_accuracy"] == pytest.approx(0.2)
    assert summary["final_response_len"] == pytest.approx((18.0 + 19.0) / 2)
    assert summary["grad_norm_var"] == pytest.approx(1.0)


def test_run_summary_never_reaching_threshold_is_inf():
    summary = run_summary(_fake_metrics([0.1, 0.2, 0.3]), 0.9)
    assert summary["steps_to_threshold"] == math.inf


def test_compare_with_self_zeroes_paired_differences(tmp_path):
    config = _tiny(total_steps=2)
    result = compare(
        config, config, 3, metrics_out=str(tmp_path), task_spec=_TASK
    )
    assert result["seeds"] == [config.seed, config.seed + 1, config.seed + 2]
    for diff in result["paired_differences"]["steps_to_threshold"]:
        assert diff == 0.0
    for diff in result["paired_differences"]["final_response_len"]:
        assert diff == 0.0
    # per-seed metrics files land under the requested directory
    assert (tmp_path / f"arm_a_seed{config.seed}.jsonl").exists()
    assert (tmp_path / f"arm_b_seed{config.seed}.jsonl").exists()


def test_compare_needs_three_seeds():
    config = _tiny(total_steps=1)
    with pytest.raises(ValueError, match="3"):
        compare(config, config, 2)


def test_sweep_row_per_value():
    config = _tiny(total_steps=2)
    rows = sweep(config, "alpha", [0.0, 1.2], 3, task_spec=_TASK)
    assert [r["alpha"] for r in rows] == [0.0, 1.2]
    for row in rows:
        assert len(row["per_seed"]) == 3
        assert "median_steps_to_threshold" in row


def test_sweep_rejects_unknown_param_and_empty_grid():
    config = _tiny(total_steps=1)
    with pytest.raises(ValueError, match="gamma"):
        sweep(config, "gamma", [1.0], 3)
    with pytest.raises(ValueError):
        sweep(config, "alpha", [], 3)


# -- debug dump and failure paths ------------------------------------------


def test_debug_dump_group_exposes_training_view():
    config = _tiny()
    params, _ = train(_tiny(total_steps=1), _TASK)
    records = debug_dump_group(params, config, _TASK, problem_seed=3, rng_seed=7)
    assert len(records) == config.group_size
    for rec in records:
        assert rec["reward"] in (0, 1)
        assert len(rec["per_token_advantages"]) == len(rec["tokens"])
        if rec["boundaries"]:
            assert rec["boundaries"][0] == 1
        if rec["c_values"]:
            assert len(rec["deltas"]) == len(rec["c_values"]) - 1


def test_apply_update_rejects_non_finite_coefficients():
    config = _tiny()
    params, _ = train(_tiny(total_steps=1), _TASK)
    problem = generate_problem("chain_add", 2, 0)
    prompts = [np.asarray(problem.prompt_ids, dtype=np.int64)] * 2
    rollouts = sample_batch(
        params, prompts, temperature=1.0, max_len=8, rng=np.random.default_rng(0)
    )
    rewards = (1, 0)
    adv = outcome_advantages(rewards)
    coeffs = []
    for j, r in enumerate(rollouts):
        c = np.full(r.length, float(adv[j]))
        coeffs.append(c)
    coeffs[0][0] = math.inf
    batch = GroupBatch(
        prompt_ref=problem,
        rollouts=tuple(rollouts),
        trajectories=(None, None),
        progress=(None, None),
        rewards=rewards,
        outcome_advantages=adv,
        alpha=0.0,
        per_token_advantages=tuple(coeffs),
    )
    with np.errstate(invalid="ignore"), pytest.raises(StateError, match="trainer"):
        _apply_update(
            params, [batch], np.zeros_like(params.theta), config, step=1
        )
