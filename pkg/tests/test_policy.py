import math

import numpy as np
import pytest

from probegrpo.errors import StateError
from probegrpo.policy import (
    PolicyParams,
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

V = 20  # standard vocab size


def _params(seed=0, embed=3, hidden=4, window=3):
    return init_params(V, embed_dim=embed, hidden_dim=hidden, window=window, seed=seed)


def _zero_params(embed=3, hidden=4, window=3):
    p = init_params(V, embed_dim=embed, hidden_dim=hidden, window=window, seed=0)
    p.theta[:] = 0.0
    return p


def _view(p, name, shape):
    a, b = p.layout[name]
    return p.theta[a:b].reshape(shape)


def _manual_forward(p: PolicyParams, context) -> np.ndarray:
    """Independent scalar-loop forward pass returning next-token probs."""
    emb = _view(p, "embedding", (p.vocab_size, p.embed_dim))
    mixer = _view(p, "mixer", (p.window, p.embed_dim))
    hidden_w = _view(p, "hidden_w", (p.hidden_dim, p.embed_dim))
    hidden_b = _view(p, "hidden_b", (p.hidden_dim,))
    out_w = _view(p, "out_w", (p.vocab_size, p.hidden_dim))
    out_b = _view(p, "out_b", (p.vocab_size,))

    f = np.zeros(p.embed_dim)
    for offset in range(p.window):  # offset 0 is the newest context token
        pos = len(context) - 1 - offset
        if pos < 0:
            continue
        for d in range(p.embed_dim):
            f[d] += mixer[offset, d] * emb[context[pos], d]
    h = np.tanh(hidden_w @ f + hidden_b)
    logits = out_w @ h + out_b
    exp = np.exp(logits - logits.max())
    return exp / exp.sum()


def test_zero_parameters_give_uniform_distribution():
    dist = forward(_zero_params(), [0, 5, 9])
    assert np.allclose(dist.probs, 1.0 / V, rtol=1e-15)
    assert np.all(dist.logprobs == dist.logprobs[0])  # logits all tie exactly


def test_forward_matches_manual_loop_oracle():
    p = _params(seed=1)
    # deterministic non-random theta so the oracle covers every slot
    p.theta[:] = np.linspace(-1.0, 1.0, p.theta.size)
    for context in ([4], [0, 7], [3, 1, 4, 1, 5, 9, 2, 6]):
        got = forward(p, context).probs
        want = _manual_forward(p, context)
        assert np.allclose(got, want, rtol=1e-12)
        assert got.shape == (V,)
        assert abs(got.sum() - 1.0) < 1e-12


def test_only_window_tokens_matter():
    p = _params(window=4)
    tail = [7, 8, 9, 3]
    a = forward(p, [5, 2] + tail)
    b = forward(p, [6, 6, 6, 1] + tail)
    assert np.array_equal(a.logprobs, b.logprobs)
    c = forward(p, [5, 2, 9] + tail[1:])  # change inside the window
    assert not np.array_equal(a.logprobs, c.logprobs)


def test_forward_input_validation():
    p = _params()
    with pytest.raises(ValueError, match="non-empty"):
        forward(p, [])
    with pytest.raises(ValueError, match="outside vocab"):
        forward(p, [0, V])
    with pytest.raises(ValueError, match="outside vocab"):
        forward(p, [-1])


def test_greedy_sampling_matches_argmax():
    p = _params(seed=2)
    prompt = np.array([0, 4, 5], dtype=np.int64)
    (traj,) = sample_batch(p, [prompt], max_len=10, greedy=True)
    context = list(prompt)
    for tok in traj.response_ids:
        dist = forward(p, context)
        assert tok == int(np.argmax(dist.logprobs))
        context.append(int(tok))
    again = sample_batch(p, [prompt], max_len=10, greedy=True)[0]
    assert np.array_equal(traj.response_ids, again.response_ids)


def test_sampling_is_seed_deterministic():
    p = _params(seed=3)
    prompt = np.array([0, 6, 7], dtype=np.int64)
    a = sample_trajectory(p, prompt, rng_seed=11, max_len=16)
    b = sample_trajectory(p, prompt, rng_seed=11, max_len=16)
    assert np.array_equal(a.response_ids, b.response_ids)
    assert np.array_equal(a.step_logprobs, b.step_logprobs)
    c = sample_trajectory(p, prompt, rng_seed=12, max_len=16)
    assert not np.array_equal(a.response_ids, c.response_ids) or a.length != c.length


def test_row_streams_do_not_interfere():
    # row 0 must sample the same tokens no matter what its neighbors do,
    # because every row consumes exactly one uniform draw per step
    p = _params(seed=4)
    pa = np.array([0, 3, 4], dtype=np.int64)
    pb = np.array([0, 9, 9, 9], dtype=np.int64)
    pc = np.array([0, 5], dtype=np.int64)
    rng1 = np.random.default_rng(7)
    rng2 = np.random.default_rng(7)
    first = sample_batch(p, [pa, pb], max_len=12, rng=rng1)[0]
    second = sample_batch(p, [pa, pc], max_len=12, rng=rng2)[0]
    assert np.array_equal(first.response_ids, second.response_ids)


def test_sampling_frequencies_match_forward_probs():
    p = _params(seed=5)
    prompt = np.array([0, 8, 2], dtype=np.int64)
    probs = forward(p, prompt).probs
    n = 4000
    rolls = sample_batch(
        p, [prompt] * n, max_len=1, rng=np.random.default_rng(13)
    )
    counts = np.bincount([r.response_ids[0] for r in rolls], minlength=V)
    freq = counts / n
    sigma = np.sqrt(probs * (1 - probs) / n)
    assert np.all(np.abs(freq - probs) < 4 * sigma + 1e-9)


def test_temperature_changes_sampling_not_recorded_logprobs():
    p = _params(seed=6)
    prompt = np.array([0, 4], dtype=np.int64)
    temp = 1.7
    traj = sample_trajectory(p, prompt, temperature=temp, rng_seed=3, max_len=12)
    context = list(prompt)
    for t, tok in enumerate(traj.response_ids):
        dist = forward(p, context)
        # recorded log-prob is temperature-1 regardless of sampling temp
        assert traj.step_logprobs[t] == pytest.approx(dist.logprobs[tok], rel=1e-12)
        # recorded entropy is of the tempered distribution
        tempered = dist.probs ** (1.0 / temp)
        tempered /= tempered.sum()
        expected_h = -float(np.sum(tempered * np.log(tempered)))
        assert traj.entropies[t] == pytest.approx(expected_h, rel=1e-10)
        context.append(int(tok))


def test_truncation_and_termination_flags():
    p = _params(seed=7)
    prompt = np.array([0, 5, 5], dtype=np.int64)
    short = sample_trajectory(p, prompt, rng_seed=1, max_len=2)
    assert short.length <= 2
    if short.length == 2 and short.response_ids[-1] != 1:
        assert not short.terminated
    done = sample_trajectory(p, prompt, rng_seed=1, max_len=200)
    if done.response_ids[-1] == 1:
        assert done.terminated


def test_sampling_argument_errors():
    p = _params()
    prompt = np.array([0], dtype=np.int64)
    with pytest.raises(ValueError, match="temperature"):
        sample_batch(p, [prompt], temperature=0.0, rng=np.random.default_rng(0))
    with pytest.raises(ValueError, match="max_len"):
        sample_batch(p, [prompt], max_len=0, rng=np.random.default_rng(0))
    with pytest.raises(ValueError, match="rng"):
        sample_batch(p, [prompt])
    assert sample_batch(p, [], rng=np.random.default_rng(0)) == []


def test_sequence_logprob_sums_step_records():
    p = _params(seed=8)
    prompt = np.array([0, 3, 9], dtype=np.int64)
    traj = sample_trajectory(p, prompt, temperature=1.3, rng_seed=5, max_len=20)
    assert traj.length > 0
    total = sequence_logprob(p, prompt, traj.response_ids)
    assert total == pytest.approx(float(traj.step_logprobs.sum()), rel=1e-12)


def test_batched_scoring_matches_singles():
    p = _params(seed=9)
    rng = np.random.default_rng(17)
    pairs = []
    for _ in range(12):
        ctx = rng.integers(0, V, size=rng.integers(1, 10))
        cont = rng.integers(0, V, size=rng.integers(1, 8))
        pairs.append((ctx, cont))
    batched = sequence_logprob_batch(p, pairs)
    singles = [sequence_logprob(p, c, t) for c, t in pairs]
    assert np.allclose(batched, singles, rtol=1e-12)
    per_token = response_logprobs_batch(p, pairs)
    for lp_vec, (ctx, cont), total in zip(per_token, pairs, batched):
        assert lp_vec.shape == (len(cont),)
        assert float(lp_vec.sum()) == pytest.approx(float(total), rel=1e-12)
        # each entry is the conditional log-prob at its own prefix
        for t in range(len(cont)):
            prefix = np.concatenate([ctx, cont[:t]])
            assert lp_vec[t] == pytest.approx(
                forward(p, prefix).logprobs[cont[t]], rel=1e-12
            )


def test_scoring_input_validation():
    p = _params()
    with pytest.raises(ValueError, match="non-empty"):
        sequence_logprob(p, [0, 1], [])
    with pytest.raises(ValueError, match="outside vocab"):
        sequence_logprob(p, [0], [V])


def test_gradient_is_linear_in_coefficients():
    p = _params(seed=10)
    prompt = np.array([0, 2, 7], dtype=np.int64)
    resp = np.array([4, 5, 1], dtype=np.int64)
    rng = np.random.default_rng(23)
    c1 = rng.normal(size=3)
    c2 = rng.normal(size=3)
    g1 = weighted_logprob_gradient(p, prompt, resp, c1)
    g2 = weighted_logprob_gradient(p, prompt, resp, c2)
    g12 = weighted_logprob_gradient(p, prompt, resp, c1 + c2)
    assert np.allclose(g1 + g2, g12, rtol=1e-11, atol=1e-13)
    zero = weighted_logprob_gradient(p, prompt, resp, np.zeros(3))
    assert np.all(zero == 0.0)


def test_gradient_batch_sums_singles():
    p = _params(seed=11)
    rng = np.random.default_rng(29)
    items = []
    for _ in range(6):
        prompt = rng.integers(0, V, size=rng.integers(1, 6))
        resp = rng.integers(0, V, size=rng.integers(1, 9))
        items.append((prompt, resp, rng.normal(size=resp.size)))
    batched = weighted_logprob_gradient_batch(p, items)
    summed = np.zeros_like(p.theta)
    for prompt, resp, coeffs in items:
        summed += weighted_logprob_gradient(p, prompt, resp, coeffs)
    assert np.allclose(batched, summed, rtol=1e-11, atol=1e-13)
    # empty responses contribute nothing
    empty = weighted_logprob_gradient_batch(
        p, [(np.array([0]), np.array([], dtype=np.int64), np.array([]))]
    )
    assert np.all(empty == 0.0)


def test_gradient_against_finite_differences():
    p = _params(seed=12)
    prompt = np.array([0, 6, 3], dtype=np.int64)
    resp = np.array([2, 8, 4, 1], dtype=np.int64)
    rng = np.random.default_rng(31)
    coeffs = rng.normal(size=resp.size)
    analytic = weighted_logprob_gradient(p, prompt, resp, coeffs)

    def objective(theta):
        q = PolicyParams(
            theta=theta,
            layout=dict(p.layout),
            vocab_size=p.vocab_size,
            embed_dim=p.embed_dim,
            hidden_dim=p.hidden_dim,
            window=p.window,
        )
        return float(
            np.dot(coeffs, response_logprobs_batch(q, [(prompt, resp)])[0])
        )

    h = 1e-5
    fd = np.zeros_like(p.theta)
    for j in range(p.theta.size):
        up = p.theta.copy()
        up[j] += h
        down = p.theta.copy()
        down[j] -= h
        fd[j] = (objective(up) - objective(down)) / (2 * h)
    num = np.linalg.norm(analytic - fd)
    den = max(np.linalg.norm(analytic), np.linalg.norm(fd), 1e-12)
    assert num / den < 1e-7


def test_gradient_coefficient_shape_errors():
    p = _params()
    with pytest.raises(ValueError, match="align one-to-one"):
        weighted_logprob_gradient(p, [0], [4, 5], [1.0])
    with pytest.raises(ValueError, match="non-empty"):
        weighted_logprob_gradient(p, [0], [], [])


def test_non_finite_parameters_are_rejected():
    p = _params()
    p.theta[3] = math.nan
    with pytest.raises(StateError, match="non-finite"):
        forward(p, [0, 1])
    with pytest.raises(StateError):
        sample_batch(p, [np.array([0])], rng=np.random.default_rng(0))
    with pytest.raises(StateError):
        sequence_logprob(p, [0], [1])
    with pytest.raises(StateError):
        weighted_logprob_gradient(p, [0], [1], [1.0])


def test_init_params_reproducible_and_checked():
    a = init_params(V, embed_dim=4, hidden_dim=5, window=3, seed=42)
    b = init_params(V, embed_dim=4, hidden_dim=5, window=3, seed=42)
    assert np.array_equal(a.theta, b.theta)
    c = init_params(V, embed_dim=4, hidden_dim=5, window=3, seed=43)
    assert not np.array_equal(a.theta, c.theta)
    mixer = _view(a, "mixer", (3, 4))
    assert abs(float(mixer.mean()) - 1.0 / 3) < 0.2
    assert np.all(_view(a, "hidden_b", (5,)) == 0.0)
    assert np.all(_view(a, "out_b", (V,)) == 0.0)
    with pytest.raises(ValueError, match="vocab_size"):
        init_params(1)
    with pytest.raises(ValueError, match="positive"):
        init_params(V, embed_dim=0)


def test_params_layout_validation():
    p = _params()
    with pytest.raises(ValueError, match="partition"):
        PolicyParams(
            theta=np.zeros(10),
            layout={"embedding": (0, 4), "rest": (5, 10)},
            vocab_size=2,
            embed_dim=2,
            hidden_dim=2,
            window=2,
        )
    with pytest.raises(ValueError, match="flat 1-d"):
        PolicyParams(
            theta=np.zeros((2, 2)),
            layout=dict(p.layout),
            vocab_size=V,
            embed_dim=3,
            hidden_dim=4,
            window=3,
        )


def test_checkpoint_round_trip(tmp_path):
    p = _params(seed=13)
    path = tmp_path / "p.bin"
    save_params(path, p, seed=13, extra={"note": "unit"})
    loaded, header = load_params(path)
    assert np.array_equal(loaded.theta, p.theta)
    assert loaded.layout == p.layout
    assert (loaded.vocab_size, loaded.embed_dim, loaded.hidden_dim, loaded.window) == (
        p.vocab_size,
        p.embed_dim,
        p.hidden_dim,
        p.window,
    )
    assert header["seed"] == 13
    assert header["extra"] == {"note": "unit"}


def test_checkpoint_corruption_detected(tmp_path):
    p = _params()
    good = tmp_path / "good.bin"
    save_params(good, p)
    bad_magic = tmp_path / "bad_magic.bin"
    bad_magic.write_bytes(b"NOTACKPT" + good.read_bytes()[8:])
    with pytest.raises(ValueError, match="not a policy checkpoint"):
        load_params(bad_magic)
    truncated = tmp_path / "trunc.bin"
    truncated.write_bytes(good.read_bytes()[:-16])
    with pytest.raises(ValueError, match="expected"):
        load_params(truncated)
    stub = tmp_path / "stub.bin"
    stub.write_bytes(b"PRGRPOPK" + b"\x01")
    with pytest.raises(ValueError, match="truncated"):
        load_params(stub)


def test_params_copy_is_independent():
    p = _params(seed=14)
    q = p.copy()
    q.theta[0] += 1.0
    assert p.theta[0] != q.theta[0]
