"""Transformer building blocks with explicit reverse-mode gradients.

Every array op works on a trailing ``(l, d)`` token layout and accepts
arbitrary leading batch dimensions. Backward functions take the upstream
gradient plus whatever the matching forward returned as its cache.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    ez = np.exp(z)
    return ez / np.sum(ez, axis=axis, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# --- RMSNorm ---------------------------------------------------------------


def rmsnorm(x: np.ndarray, gain: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Scale each row to unit root-mean-square, then multiply by ``gain``."""
    r = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    return x * r * gain


def rmsnorm_backward(dy: np.ndarray, x: np.ndarray, gain: np.ndarray, eps: float = 1e-5):
    r = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    u = dy * gain
    dx = r * u - x * r**3 * np.mean(u * x, axis=-1, keepdims=True)
    dgain = (dy * x * r).reshape(-1, x.shape[-1]).sum(axis=0)
    return dx, dgain


# --- rotary position embedding ----------------------------------------------


def rope_angles(positions: np.ndarray, head_dim: int, base: float = 10000.0):
    if head_dim % 2:
        raise ValueError(f"head_dim must be even, got {head_dim}")
    inv_freq = base ** (-np.arange(0, head_dim, 2, dtype=np.float64) / head_dim)
    angles = np.asarray(positions, dtype=np.float64)[:, None] * inv_freq[None, :]
    return np.cos(angles), np.sin(angles)


def _rotate(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    # x: (..., l, H, hd); cos/sin: (l, hd/2)
    c = cos[:, None, :]
    s = sin[:, None, :]
    x1 = x[..., 0::2]
    x2 = x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = x1 * c - x2 * s
    out[..., 1::2] = x1 * s + x2 * c
    return out


def rope_apply(x: np.ndarray, positions, base: float = 10000.0) -> np.ndarray:
    """Rotate consecutive channel pairs of ``x`` (..., l, n_heads, head_dim) by position."""
    positions = np.asarray(positions)
    if positions.size > 1 and np.any(np.diff(positions) <= 0):
        raise ValueError("positions must be strictly increasing")
    cos, sin = rope_angles(positions, x.shape[-1], base)
    return _rotate(x, cos, sin)


def rope_backward(dy: np.ndarray, positions, base: float = 10000.0) -> np.ndarray:
    # the transpose of a rotation is the rotation by the negated angle
    cos, sin = rope_angles(np.asarray(positions), dy.shape[-1], base)
    return _rotate(dy, cos, -sin)


# --- causal self-attention --------------------------------------------------


def attention_forward(x, wq, wk, wv, wo, n_heads, positions=None, base=10000.0, context_len=None):
    """Causal multi-head attention with rotary embeddings.

    Returns ``(y, cache)``; ``cache`` feeds :func:`attention_backward`.
    """
    *lead, l, d = x.shape
    if context_len is not None and l > context_len:
        raise ValueError(f"sequence length {l} exceeds context length {context_len}")
    hd = d // n_heads
    if positions is None:
        positions = np.arange(l)
    q = rope_apply((x @ wq).reshape(*lead, l, n_heads, hd), positions, base)
    k = rope_apply((x @ wk).reshape(*lead, l, n_heads, hd), positions, base)
    v = (x @ wv).reshape(*lead, l, n_heads, hd)
    # (..., H, l, hd)
    qh, kh, vh = (np.swapaxes(t, -3, -2) for t in (q, k, v))
    scores = qh @ np.swapaxes(kh, -1, -2) / math.sqrt(hd)
    causal = np.tril(np.ones((l, l), dtype=bool))
    scores = np.where(causal, scores, -np.inf)
    p = softmax(scores)
    o = np.swapaxes(p @ vh, -3, -2).reshape(*lead, l, d)
    y = o @ wo
    cache = (x, qh, kh, vh, p, o, positions, n_heads, base)
    return y, cache


def attention_backward(dy, cache, wq, wk, wv, wo):
    x, qh, kh, vh, p, o, positions, n_heads, base = cache
    *lead, l, d = x.shape
    hd = d // n_heads
    dwo = o.reshape(-1, d).T @ dy.reshape(-1, d)
    do = np.swapaxes((dy @ wo.T).reshape(*lead, l, n_heads, hd), -3, -2)
    dp = do @ np.swapaxes(vh, -1, -2)
    dvh = np.swapaxes(p, -1, -2) @ do
    ds = p * (dp - np.sum(dp * p, axis=-1, keepdims=True)) / math.sqrt(hd)
    dqh = ds @ kh
    dkh = np.swapaxes(ds, -1, -2) @ qh
    dq = rope_backward(np.swapaxes(dqh, -3, -2), positions, base).reshape(*lead, l, d)
    dk = rope_backward(np.swapaxes(dkh, -3, -2), positions, base).reshape(*lead, l, d)
    dv = np.swapaxes(dvh, -3, -2).reshape(*lead, l, d)
    xf = x.reshape(-1, d)
    dwq = xf.T @ dq.reshape(-1, d)
    dwk = xf.T @ dk.reshape(-1, d)
    dwv = xf.T @ dv.reshape(-1, d)
    dx = dq @ wq.T + dk @ wk.T + dv @ wv.T
    return dx, dwq, dwk, dwv, dwo


# --- routing ----------------------------------------------------------------


def expert_capacity(n_tokens: int, k: int, n_experts: int, capacity_factor: float) -> int:
    """Most tokens one expert may process for a sequence: ceil(c*l*k/e)."""
    # round first so 1.0*8*2/4 style products never land a hair above an integer
    return math.ceil(round(capacity_factor * n_tokens * k / n_experts, 9))


@dataclass
class RouterDecision:
    gate_logits: np.ndarray  # (..., l, e)
    selected: np.ndarray  # (..., l, k) expert indices, best first
    combine_weights: np.ndarray  # (..., l, k) softmax over the selected logits
    dropped: np.ndarray  # (..., l, k) True where capacity overflowed
    capacity: int

    @property
    def num_experts(self) -> int:
        return self.gate_logits.shape[-1]

    @property
    def k(self) -> int:
        return self.selected.shape[-1]


def route_logits(logits: np.ndarray, k: int, capacity_factor: float = 1.0) -> RouterDecision:
    *lead, l, e = logits.shape
    k = min(k, e)
    # stable sort on the negated logits keeps the lower expert index first on ties
    selected = np.argsort(-logits, axis=-1, kind="stable")[..., :k]
    weights = softmax(np.take_along_axis(logits, selected, axis=-1))
    cap = expert_capacity(l, k, e, capacity_factor)
    onehot = selected[..., None] == np.arange(e)
    flat = onehot.reshape(*lead, l * k, e)
    # assignments are served in token-position order; slot order breaks nothing
    # because one token never picks the same expert twice
    arrival = np.sum(np.cumsum(flat, axis=-2) * flat, axis=-1).reshape(*lead, l, k)
    return RouterDecision(logits, selected, weights, arrival > cap, cap)


def route(h: np.ndarray, w_gate: np.ndarray, k: int, capacity_factor: float = 1.0) -> RouterDecision:
    """Top-k gating of tokens ``h`` (..., l, d) with gate weights ``w_gate`` (d, e)."""
    return route_logits(h @ w_gate, k, capacity_factor)


def combine_backward(dweights: np.ndarray, decision: RouterDecision) -> np.ndarray:
    """Map gradients on combine weights back onto the full gate-logit tensor."""
    w = decision.combine_weights
    dsel = w * (dweights - np.sum(w * dweights, axis=-1, keepdims=True))
    dlogits = np.zeros_like(decision.gate_logits)
    np.put_along_axis(dlogits, decision.selected, dsel, axis=-1)
    return dlogits


# --- load-balancing loss ----------------------------------------------------


def _balance_terms(decision: RouterDecision):
    *lead, l, e = decision.gate_logits.shape
    k = decision.k
    counts = np.sum(decision.selected[..., None] == np.arange(e), axis=(-3, -2))
    frac = counts / (l * k)
    probs = softmax(decision.gate_logits)
    return frac, probs


def aux_loss(decision: RouterDecision) -> float:
    """``e * sum_j f_j * P_j`` averaged over any leading batch dimensions.

    ``f_j`` is the share of (pre-drop) assignments going to expert j and
    ``P_j`` the mean full-softmax gate probability of expert j.
    """
    e = decision.num_experts
    frac, probs = _balance_terms(decision)
    per_seq = e * np.sum(frac * np.mean(probs, axis=-2), axis=-1)
    return float(np.mean(per_seq))


def aux_loss_backward(decision: RouterDecision, scale: float = 1.0) -> np.ndarray:
    """Gradient of ``scale * aux_loss`` w.r.t. the gate logits (assignments held fixed)."""
    *lead, l, e = decision.gate_logits.shape
    n_seq = int(np.prod(lead)) if lead else 1
    frac, probs = _balance_terms(decision)
    dprobs = (scale * e / (n_seq * l)) * frac[..., None, :]
    return probs * (dprobs - np.sum(probs * dprobs, axis=-1, keepdims=True))


# --- expert feed-forward ----------------------------------------------------


def swiglu(x: np.ndarray, w1: np.ndarray, w3: np.ndarray, w2: np.ndarray) -> np.ndarray:
    a = x @ w1
    return (a * sigmoid(a) * (x @ w3)) @ w2


def moe_forward(x: np.ndarray, decision: RouterDecision, w1: np.ndarray, w3: np.ndarray, w2: np.ndarray):
    """Sparse dispatch of tokens to their kept experts.

    ``w1``/``w3`` are (e, d, hidden), ``w2`` is (e, hidden, d). Returns
    ``(y, cache)``; a token whose selections were all dropped gets zeros.
    """
    d = x.shape[-1]
    e, k = decision.num_experts, decision.k
    xf = x.reshape(-1, d)
    sel = decision.selected.reshape(-1, k)
    cw = decision.combine_weights.reshape(-1, k)
    kept = ~decision.dropped.reshape(-1, k)
    y = np.zeros_like(xf)
    parts = []
    for j in range(e):
        rows, slots = np.nonzero((sel == j) & kept)
        if rows.size == 0:
            parts.append(None)
            continue
        xs = xf[rows]
        a = xs @ w1[j]
        b = xs @ w3[j]
        s = sigmoid(a)
        hidden = a * s * b
        out = hidden @ w2[j]
        y[rows] += cw[rows, slots, None] * out
        parts.append((rows, slots, xs, a, b, s, hidden, out))
    return y.reshape(x.shape), (x.shape, cw, parts)


def moe_backward(dy: np.ndarray, cache, w1: np.ndarray, w3: np.ndarray, w2: np.ndarray):
    """Returns ``(dx, dcombine_weights, dw1, dw3, dw2)``."""
    shape, cw, parts = cache
    d = shape[-1]
    dyf = dy.reshape(-1, d)
    dx = np.zeros_like(dyf)
    dcw = np.zeros_like(cw)
    dw1, dw3, dw2 = np.zeros_like(w1), np.zeros_like(w3), np.zeros_like(w2)
    for j, part in enumerate(parts):
        if part is None:
            continue
        rows, slots, xs, a, b, s, hidden, out = part
        dout = dyf[rows]
        dcw[rows, slots] = np.sum(dout * out, axis=-1)
        g = dout * cw[rows, slots, None]
        dw2[j] = hidden.T @ g
        dh = g @ w2[j].T
        db = dh * a * s
        da = dh * b * s * (1.0 + a * (1.0 - s))
        dw1[j] = xs.T @ da
        dw3[j] = xs.T @ db
        dx[rows] += da @ w1[j].T + db @ w3[j].T
    lead = shape[:-1]
    return dx.reshape(shape), dcw.reshape(*lead, -1), dw1, dw3, dw2


# --- output loss ------------------------------------------------------------


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> float:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    logz = np.log(np.sum(np.exp(z), axis=-1))
    picked = np.take_along_axis(z, targets[..., None], axis=-1)[..., 0]
    return float(np.mean(logz - picked))


def cross_entropy_backward(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    g = softmax(logits)
    np.put_along_axis(g, targets[..., None], np.take_along_axis(g, targets[..., None], -1) - 1.0, -1)
    return g / targets.size
