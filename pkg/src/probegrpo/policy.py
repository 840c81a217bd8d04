"""Tiny windowed autoregressive policy with a hand-written backward pass.

The next-token distribution is computed from a fixed-size window over the
most recent context tokens: embed the window, combine the embeddings with
learned per-offset weights (initialized near a plain window average), push
the result through one tanh layer and project to logits. All parameters
live in one flat float64 vector carved up by a named layout, which keeps
the optimizer, the finite-difference checks and the checkpoint format
trivial.

Gradients are derived by hand rather than through an autodiff framework.
The batched helpers (`sample_batch`, `sequence_logprob_batch`,
`weighted_logprob_gradient_batch`) are the hot paths used by training;
the single-sequence functions are thin wrappers over the same kernels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import StateError

_CKPT_MAGIC = b"PRGRPOPK"

# Standard vocab puts eos at index 1; sample_trajectory defaults to it.
_DEFAULT_EOS_ID = 1


# ---------------------------------------------------------------------------
# parameter container
# ---------------------------------------------------------------------------


def _build_layout(vocab_size: int, embed_dim: int, hidden_dim: int, window: int):
    sizes = (
        ("embedding", vocab_size * embed_dim),
        ("mixer", window * embed_dim),
        ("hidden_w", hidden_dim * embed_dim),
        ("hidden_b", hidden_dim),
        ("out_w", vocab_size * hidden_dim),
        ("out_b", vocab_size),
    )
    layout: dict[str, tuple[int, int]] = {}
    offset = 0
    for name, size in sizes:
        layout[name] = (offset, offset + size)
        offset += size
    return layout, offset


@dataclass
class PolicyParams:
    """Flat parameter vector plus the named layout that carves it up."""

    theta: np.ndarray
    layout: dict[str, tuple[int, int]]
    vocab_size: int
    embed_dim: int
    hidden_dim: int
    window: int

    def __post_init__(self) -> None:
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.ndim != 1:
            raise ValueError("theta must be a flat 1-d vector")
        spans = sorted(self.layout.values())
        cursor = 0
        for start, stop in spans:
            if start != cursor or stop < start:
                raise ValueError("layout slices must partition theta exactly")
            cursor = stop
        if cursor != self.theta.size:
            raise ValueError(
                f"layout covers {cursor} entries but theta has {self.theta.size}"
            )

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            theta=self.theta.copy(),
            layout=dict(self.layout),
            vocab_size=self.vocab_size,
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
            window=self.window,
        )


def init_params(
    vocab_size: int,
    *,
    embed_dim: int = 16,
    hidden_dim: int = 32,
    window: int = 8,
    seed: int = 0,
    embed_scale: float = 0.5,
    mixer_scale: float = 0.1,
) -> PolicyParams:
    """Seeded random init with per-slot scales.

    Embeddings start at O(1) scale so tokens are distinguishable from step
    one; the mixer gets a +1/window offset on top of its noise so the
    window combination starts near an ordinary context average; the two
    dense maps use fan-in scaling and zero biases, which leaves the output
    distribution close to uniform without flattening the gradients.
    """
    if vocab_size < 2:
        raise ValueError("vocab_size must be at least 2")
    if min(embed_dim, hidden_dim, window) < 1:
        raise ValueError("embed_dim, hidden_dim and window must be positive")
    layout, total = _build_layout(vocab_size, embed_dim, hidden_dim, window)
    rng = np.random.default_rng(seed)
    params = PolicyParams(
        theta=np.zeros(total),
        layout=layout,
        vocab_size=vocab_size,
        embed_dim=embed_dim,
        hidden_dim=hidden_dim,
        window=window,
    )
    v = _views(params)
    v.embedding[:] = rng.normal(0.0, embed_scale, v.embedding.shape)
    v.mixer[:] = rng.normal(0.0, mixer_scale, v.mixer.shape) + 1.0 / window
    v.hidden_w[:] = rng.normal(
        0.0, math.sqrt(2.0 / embed_dim), v.hidden_w.shape
    )
    v.out_w[:] = rng.normal(
        0.0, math.sqrt(1.0 / hidden_dim), v.out_w.shape
    )
    return params


class _Views:
    """Reshaped zero-copy views into the flat theta vector."""

    __slots__ = ("embedding", "mixer", "hidden_w", "hidden_b", "out_w", "out_b")

    def __init__(self, p: PolicyParams):
        t = p.theta

        def seg(name, shape):
            a, b = p.layout[name]
            return t[a:b].reshape(shape)

        self.embedding = seg("embedding", (p.vocab_size, p.embed_dim))
        self.mixer = seg("mixer", (p.window, p.embed_dim))
        self.hidden_w = seg("hidden_w", (p.hidden_dim, p.embed_dim))
        self.hidden_b = seg("hidden_b", (p.hidden_dim,))
        self.out_w = seg("out_w", (p.vocab_size, p.hidden_dim))
        self.out_b = seg("out_b", (p.vocab_size,))


def _views(p: PolicyParams) -> _Views:
    return _Views(p)


# ---------------------------------------------------------------------------
# forward kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepDistribution:
    """Next-token distribution, kept in both prob and logprob form."""

    probs: np.ndarray
    logprobs: np.ndarray


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _entropy(probs: np.ndarray, logprobs: np.ndarray, vocab_size: int) -> np.ndarray:
    h = -(probs * logprobs).sum(axis=-1)
    # clip guards fp wobble at the exact ends of [0, ln V]
    return np.clip(h, 0.0, np.log(vocab_size))


def _context_windows(seq: np.ndarray, start: int, stop: int, window: int) -> np.ndarray:
    """Window of the last `window` ids preceding each position in [start, stop).

    Column j holds the id at offset j back from the position (newest first);
    absent slots are -1.
    """
    arr = np.asarray(seq, dtype=np.int64)
    padded = np.concatenate([np.full(window, -1, dtype=np.int64), arr])
    view = np.lib.stride_tricks.sliding_window_view(padded, window)
    return view[start:stop, ::-1]


def _forward_windows(p: PolicyParams, win: np.ndarray):
    """Batched forward over window rows. Returns (Eg, f, h, logits)."""
    v = _views(p)
    ids = np.maximum(win, 0)
    mask = (win >= 0).astype(np.float64)
    Eg = v.embedding[ids] * mask[:, :, None]
    f = np.einsum("nwd,wd->nd", Eg, v.mixer)
    h = np.tanh(f @ v.hidden_w.T + v.hidden_b)
    logits = h @ v.out_w.T + v.out_b
    return Eg, f, h, logits


def _check_context(p: PolicyParams, context_ids) -> np.ndarray:
    arr = np.asarray(context_ids, dtype=np.int64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("context must be a non-empty token id sequence")
    if arr.min() < 0 or arr.max() >= p.vocab_size:
        raise ValueError(f"token id outside vocab of size {p.vocab_size}")
    return arr


def _check_finite(p: PolicyParams) -> None:
    if not np.isfinite(p.theta).all():
        raise StateError("policy parameters contain non-finite values")


def forward(params: PolicyParams, context_ids) -> StepDistribution:
    """Next-token distribution given the full context (only the last
    `window` tokens can influence it)."""
    _check_finite(params)
    arr = _check_context(params, context_ids)
    win = _context_windows(arr, arr.size, arr.size + 1, params.window)
    _, _, _, logits = _forward_windows(params, win)
    logprobs = _log_softmax(logits)[0]
    return StepDistribution(probs=np.exp(logprobs), logprobs=logprobs)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """One sampled response with per-token bookkeeping.

    step_logprobs holds log pi(token | context) at temperature 1 (what the
    gradient estimator needs); entropies are of the temperature-adjusted
    distribution the token was actually drawn from.
    """

    prompt_ids: np.ndarray
    response_ids: np.ndarray
    step_logprobs: np.ndarray
    entropies: np.ndarray
    terminated: bool

    @property
    def length(self) -> int:
        return int(self.response_ids.size)


def sample_batch(
    params: PolicyParams,
    prompts,
    *,
    temperature: float = 1.0,
    max_len: int = 64,
    rng: np.random.Generator | None = None,
    eos_id: int = _DEFAULT_EOS_ID,
    greedy: bool = False,
) -> list[Trajectory]:
    """Sample one response per prompt, advancing all rows in lockstep.

    One uniform draw per prompt row is consumed at every emission step
    (finished rows included), so the rng stream depends only on the number
    of steps taken and never on which rows finished first.
    """
    _check_finite(params)
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    if greedy:
        rng = None
    elif rng is None:
        raise ValueError("sampling needs an rng (or greedy=True)")
    prompts = [_check_context(params, p) for p in prompts]
    n = len(prompts)
    if n == 0:
        return []

    w = params.window
    buf = np.full((n, w), -1, dtype=np.int64)
    for i, prompt in enumerate(prompts):
        tail = prompt[-w:]
        buf[i, : tail.size] = tail[::-1]

    ids: list[list[int]] = [[] for _ in range(n)]
    lps: list[list[float]] = [[] for _ in range(n)]
    ents: list[list[float]] = [[] for _ in range(n)]
    alive = np.ones(n, dtype=bool)

    for _ in range(max_len):
        if not alive.any():
            break
        idx = np.nonzero(alive)[0]
        _, _, _, logits = _forward_windows(params, buf[idx])
        lp1 = _log_softmax(logits)
        if temperature == 1.0:
            lps_samp = lp1
        else:
            lps_samp = _log_softmax(logits / temperature)
        ps = np.exp(lps_samp)
        if greedy:
            tok = np.argmax(logits, axis=1)
        else:
            u = rng.random(n)
            cdf = np.cumsum(ps, axis=1)
            tok = (cdf < u[idx, None]).sum(axis=1)
            np.minimum(tok, params.vocab_size - 1, out=tok)
        ent = _entropy(ps, lps_samp, params.vocab_size)
        rows = np.arange(idx.size)
        chosen_lp = lp1[rows, tok]
        for r, i in enumerate(idx):
            ids[i].append(int(tok[r]))
            lps[i].append(float(chosen_lp[r]))
            ents[i].append(float(ent[r]))
        buf[idx, 1:] = buf[idx, :-1]
        buf[idx, 0] = tok
        alive[idx] = tok != eos_id

    out = []
    for i, prompt in enumerate(prompts):
        resp = np.asarray(ids[i], dtype=np.int64)
        out.append(
            Trajectory(
                prompt_ids=prompt,
                response_ids=resp,
                step_logprobs=np.asarray(lps[i], dtype=np.float64),
                entropies=np.asarray(ents[i], dtype=np.float64),
                terminated=bool(resp.size > 0 and resp[-1] == eos_id),
            )
        )
    return out


def sample_trajectory(
    params: PolicyParams,
    prompt_ids,
    *,
    temperature: float = 1.0,
    max_len: int = 64,
    rng_seed: int = 0,
    eos_id: int = _DEFAULT_EOS_ID,
) -> Trajectory:
    """Sample a single response; identical arguments give identical output."""
    rng = np.random.default_rng(rng_seed)
    return sample_batch(
        params,
        [prompt_ids],
        temperature=temperature,
        max_len=max_len,
        rng=rng,
        eos_id=eos_id,
    )[0]


# ---------------------------------------------------------------------------
# sequence scoring
# ---------------------------------------------------------------------------


def _score_pairs(params: PolicyParams, pairs) -> tuple[np.ndarray, list[int]]:
    """Per-token log-probs of every continuation position, concatenated.

    Returns the flat per-token array plus each pair's continuation length;
    all positions across all pairs go through one batched forward.
    """
    _check_finite(params)
    win_rows = []
    targets = []
    lengths = []
    for ctx, cont in pairs:
        ctx = _check_context(params, ctx)
        cont = np.asarray(cont, dtype=np.int64)
        if cont.size == 0:
            raise ValueError("continuation must be non-empty")
        if cont.min() < 0 or cont.max() >= params.vocab_size:
            raise ValueError(f"token id outside vocab of size {params.vocab_size}")
        seq = np.concatenate([ctx, cont])
        win_rows.append(_context_windows(seq, ctx.size, seq.size, params.window))
        targets.append(cont)
        lengths.append(cont.size)
    if not win_rows:
        return np.zeros(0, dtype=np.float64), lengths
    win = np.concatenate(win_rows, axis=0)
    tgt = np.concatenate(targets)
    _, _, _, logits = _forward_windows(params, win)
    lp = _log_softmax(logits)
    return lp[np.arange(tgt.size), tgt], lengths


def sequence_logprob_batch(params: PolicyParams, pairs) -> np.ndarray:
    """Summed log-probability of each (context, continuation) pair.

    Per-pair sums accumulate in position order within each pair.
    """
    per_token, lengths = _score_pairs(params, pairs)
    owner = np.repeat(np.arange(len(lengths)), lengths)
    return np.bincount(owner, weights=per_token, minlength=len(lengths))


def response_logprobs_batch(params: PolicyParams, pairs) -> list[np.ndarray]:
    """Per-token log-probs of each (context, continuation) pair."""
    per_token, lengths = _score_pairs(params, pairs)
    bounds = np.cumsum(lengths)[:-1]
    return np.split(per_token, bounds)


def sequence_logprob(params: PolicyParams, context_ids, continuation_ids) -> float:
    """Log pi(continuation | context), summed over continuation tokens."""
    return float(sequence_logprob_batch(params, [(context_ids, continuation_ids)])[0])


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


def _grad_windows(
    p: PolicyParams, win: np.ndarray, targets: np.ndarray, coeffs: np.ndarray
) -> np.ndarray:
    """Gradient of sum_t coeffs[t] * log softmax(logits_t)[targets[t]]."""
    v = _views(p)
    Eg, f, h, logits = _forward_windows(p, win)
    lp = _log_softmax(logits)
    probs = np.exp(lp)
    n = win.shape[0]

    dlogits = -probs * coeffs[:, None]
    dlogits[np.arange(n), targets] += coeffs

    grad = np.zeros_like(p.theta)
    gv = _Views(
        PolicyParams(
            theta=grad,
            layout=dict(p.layout),
            vocab_size=p.vocab_size,
            embed_dim=p.embed_dim,
            hidden_dim=p.hidden_dim,
            window=p.window,
        )
    )

    gv.out_b += dlogits.sum(axis=0)
    gv.out_w += dlogits.T @ h
    dh = dlogits @ v.out_w
    dpre = dh * (1.0 - h * h)
    gv.hidden_b += dpre.sum(axis=0)
    gv.hidden_w += dpre.T @ f
    df = dpre @ v.hidden_w
    gv.mixer += np.einsum("nd,nwd->wd", df, Eg)

    contrib = df[:, None, :] * v.mixer[None, :, :]
    ids = win.reshape(-1)
    flat = contrib.reshape(-1, p.embed_dim)
    valid = ids >= 0
    idv = ids[valid]
    cv = flat[valid]
    dE = gv.embedding
    for d in range(p.embed_dim):
        dE[:, d] += np.bincount(idv, weights=cv[:, d], minlength=p.vocab_size)
    return grad


def weighted_logprob_gradient(
    params: PolicyParams, prompt_ids, response_ids, coefficients
) -> np.ndarray:
    """Analytic gradient of sum_t c_t * log pi(response_t | prompt, response_<t).

    Coefficients are treated as constants (no gradient flows into them).
    """
    _check_finite(params)
    prompt = _check_context(params, prompt_ids)
    resp = np.asarray(response_ids, dtype=np.int64)
    coeffs = np.asarray(coefficients, dtype=np.float64)
    if resp.ndim != 1 or resp.size == 0:
        raise ValueError("response must be a non-empty token id sequence")
    if resp.min() < 0 or resp.max() >= params.vocab_size:
        raise ValueError(f"token id outside vocab of size {params.vocab_size}")
    if coeffs.shape != resp.shape:
        raise ValueError("coefficients must align one-to-one with response tokens")
    seq = np.concatenate([prompt, resp])
    win = _context_windows(seq, prompt.size, seq.size, params.window)
    return _grad_windows(params, win, resp, coeffs)


def weighted_logprob_gradient_batch(params: PolicyParams, items) -> np.ndarray:
    """Summed analytic gradient over (prompt, response, coefficients) items.

    The caller applies any 1/(batch * group) scaling.
    """
    _check_finite(params)
    win_rows = []
    tgt_rows = []
    coeff_rows = []
    for prompt, resp, coeffs in items:
        prompt = _check_context(params, prompt)
        resp = np.asarray(resp, dtype=np.int64)
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if resp.size == 0:
            continue
        if coeffs.shape != resp.shape:
            raise ValueError("coefficients must align one-to-one with response tokens")
        seq = np.concatenate([prompt, resp])
        win_rows.append(_context_windows(seq, prompt.size, seq.size, params.window))
        tgt_rows.append(resp)
        coeff_rows.append(coeffs)
    if not win_rows:
        return np.zeros_like(params.theta)
    win = np.concatenate(win_rows, axis=0)
    tgt = np.concatenate(tgt_rows)
    coeffs = np.concatenate(coeff_rows)
    return _grad_windows(params, win, tgt, coeffs)


# ---------------------------------------------------------------------------
# checkpoint io
# ---------------------------------------------------------------------------


def save_params(path, params: PolicyParams, *, seed: int | None = None, extra: dict | None = None) -> None:
    """Write header (vocab size, layout, seed) plus the raw little-endian
    float64 theta. Round-trips exactly."""
    header = {
        "format": 1,
        "vocab_size": params.vocab_size,
        "embed_dim": params.embed_dim,
        "hidden_dim": params.hidden_dim,
        "window": params.window,
        "layout": [[name, a, b] for name, (a, b) in params.layout.items()],
        "seed": seed,
        "theta_len": int(params.theta.size),
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        fh.write(np.ascontiguousarray(params.theta, dtype="<f8").tobytes())


def load_params(path) -> tuple[PolicyParams, dict]:
    """Read a checkpoint written by save_params. Returns (params, header)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a policy checkpoint")
        raw_len = fh.read(8)
        if len(raw_len) != 8:
            raise ValueError(f"{path}: truncated checkpoint header")
        blob = fh.read(int.from_bytes(raw_len, "little"))
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValueError(f"{path}: corrupt checkpoint header") from exc
        body = fh.read()
    theta = np.frombuffer(body, dtype="<f8").astype(np.float64)
    if theta.size != header.get("theta_len"):
        raise ValueError(
            f"{path}: expected {header.get('theta_len')} parameters, found {theta.size}"
        )
    layout = {name: (int(a), int(b)) for name, a, b in header["layout"]}
    params = PolicyParams(
        theta=theta,
        layout=layout,
        vocab_size=int(header["vocab_size"]),
        embed_dim=int(header["embed_dim"]),
        hidden_dim=int(header["hidden_dim"]),
        window=int(header["window"]),
    )
    return params, header
