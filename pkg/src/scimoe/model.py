"""Decoder-only transformer whose feed-forward blocks are top-k routed experts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .config import ModelConfig


@dataclass
class ForwardOutput:
    logits: np.ndarray
    lm_loss: float | None
    aux_loss: float
    gate_logits: list[np.ndarray]
    decisions: list[ops.RouterDecision]
    aux_loss_factor: float
    targets: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def loss(self) -> float:
        """Training objective: lm_loss + aux_loss_factor * aux_loss."""
        if self.lm_loss is None:
            raise ValueError("forward pass was run without targets")
        return self.lm_loss + self.aux_loss_factor * self.aux_loss


def layer_names(i: int) -> list[str]:
    return [f"layers.{i}.{n}" for n in ("attn_norm", "wq", "wk", "wv", "wo", "ffn_norm", "gate", "w1", "w3", "w2")]


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Scaled-normal init; residual output projections shrink by 1/sqrt(2N)."""
    rng = np.random.default_rng(seed)
    d, h, e, v = config.dim, config.ffn_hidden_dim, config.num_experts, config.vocab_size
    std = config.init_std
    out_std = std / math.sqrt(2 * config.n_layers)
    params = {"tok_emb": rng.normal(0.0, std, (v, d))}
    for i in range(config.n_layers):
        p = f"layers.{i}."
        params[p + "attn_norm"] = np.ones(d)
        params[p + "wq"] = rng.normal(0.0, std, (d, d))
        params[p + "wk"] = rng.normal(0.0, std, (d, d))
        params[p + "wv"] = rng.normal(0.0, std, (d, d))
        params[p + "wo"] = rng.normal(0.0, out_std, (d, d))
        params[p + "ffn_norm"] = np.ones(d)
        params[p + "gate"] = rng.normal(0.0, std, (d, e))
        params[p + "w1"] = rng.normal(0.0, std, (e, d, h))
        params[p + "w3"] = rng.normal(0.0, std, (e, d, h))
        params[p + "w2"] = rng.normal(0.0, out_std, (e, h, d))
    params["final_norm"] = np.ones(d)
    params["lm_head"] = rng.normal(0.0, std, (d, v))
    return params


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, h, e, v = config.dim, config.ffn_hidden_dim, config.num_experts, config.vocab_size
    shapes = {"tok_emb": (v, d)}
    for i in range(config.n_layers):
        p = f"layers.{i}."
        shapes.update({
            p + "attn_norm": (d,), p + "wq": (d, d), p + "wk": (d, d), p + "wv": (d, d), p + "wo": (d, d),
            p + "ffn_norm": (d,), p + "gate": (d, e),
            p + "w1": (e, d, h), p + "w3": (e, d, h), p + "w2": (e, h, d),
        })
    shapes["final_norm"] = (d,)
    shapes["lm_head"] = (d, v)
    return shapes


class MoETransformer:
    """Weights plus forward/backward for the routed-expert decoder.

    Token input is ``(l,)`` or ``(batch, l)`` integer ids. Computation runs in
    float64; routing capacity is enforced per sequence.
    """

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None, seed: int = 0):
        self.config = config
        if params is None:
            params = init_params(config, seed)
        expected = param_shapes(config)
        if set(params) != set(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise ValueError(f"parameter set mismatch: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            if tuple(params[name].shape) != shape:
                raise ValueError(f"{name} has shape {params[name].shape}, expected {shape}")
        # keep the canonical ordering for checkpoints and gradient norms
        self.params = {name: np.asarray(params[name], dtype=np.float64) for name in expected}

    def forward(self, ids, targets=None, compute_loss: bool = True) -> ForwardOutput:
        """Run the model.

        With ``compute_loss`` and no explicit ``targets``, the loss is next-token
        cross-entropy over ``ids[..., 1:]``.
        """
        cfg = self.config
        P = self.params
        ids = np.asarray(ids, dtype=np.int64)
        l = ids.shape[-1]
        if l > cfg.context_len:
            raise ValueError(f"sequence length {l} exceeds context length {cfg.context_len}")
        if l < 1:
            raise ValueError("empty sequence")
        if ids.min() < 0 or ids.max() >= cfg.vocab_size:
            raise ValueError("token id out of range for this model")
        positions = np.arange(l)

        x = P["tok_emb"][ids]
        layers = []
        gate_logits = []
        decisions = []
        for i in range(cfg.n_layers):
            p = f"layers.{i}."
            a_in = ops.rmsnorm(x, P[p + "attn_norm"], cfg.norm_eps)
            att, att_cache = ops.attention_forward(
                a_in, P[p + "wq"], P[p + "wk"], P[p + "wv"], P[p + "wo"], cfg.n_heads, positions, cfg.rope_base
            )
            x_mid = x + att
            m_in = ops.rmsnorm(x_mid, P[p + "ffn_norm"], cfg.norm_eps)
            decision = ops.route(m_in, P[p + "gate"], cfg.topk_experts, cfg.capacity_factor)
            moe_out, moe_cache = ops.moe_forward(m_in, decision, P[p + "w1"], P[p + "w3"], P[p + "w2"])
            layers.append((x, att_cache, x_mid, m_in, moe_cache))
            gate_logits.append(decision.gate_logits)
            decisions.append(decision)
            x = x_mid + moe_out

        xf = ops.rmsnorm(x, P["final_norm"], cfg.norm_eps)
        logits = xf @ P["lm_head"]
        aux = float(np.mean([ops.aux_loss(dec) for dec in decisions]))

        lm_loss = None
        if compute_loss:
            if targets is None:
                if l < 2:
                    raise ValueError("need at least 2 tokens to compute a next-token loss")
                targets = ids[..., 1:]
            targets = np.asarray(targets, dtype=np.int64)
            lm_loss = ops.cross_entropy(logits[..., : targets.shape[-1], :], targets)
        cache = {"layers": layers, "x_final": x, "xf": xf, "ids": ids}
        return ForwardOutput(logits, lm_loss, aux, gate_logits, decisions, cfg.aux_loss_factor, targets, cache)

    def backward(self, out: ForwardOutput) -> dict[str, np.ndarray]:
        """Exact gradients of ``out.loss`` w.r.t. every parameter.

        Top-k selection and capacity drops are held fixed; gradients reach the
        gate through the combine-weight softmax and the balance loss.
        """
        if out.targets is None:
            raise ValueError("backward needs a forward pass with targets")
        cfg = self.config
        P = self.params
        c = out._cache
        grads = {name: np.zeros_like(v) for name, v in P.items()}

        n_t = out.targets.shape[-1]
        dlogits = np.zeros_like(out.logits)
        dlogits[..., :n_t, :] = ops.cross_entropy_backward(out.logits[..., :n_t, :], out.targets)
        d = cfg.dim
        grads["lm_head"] = c["xf"].reshape(-1, d).T @ dlogits.reshape(-1, cfg.vocab_size)
        dxf = dlogits @ P["lm_head"].T
        dx, grads["final_norm"] = ops.rmsnorm_backward(dxf, c["x_final"], P["final_norm"], cfg.norm_eps)

        aux_scale = cfg.aux_loss_factor / cfg.n_layers
        for i in reversed(range(cfg.n_layers)):
            p = f"layers.{i}."
            x_in, att_cache, x_mid, m_in, moe_cache = c["layers"][i]
            decision = out.decisions[i]
            # MoE branch
            dm_in, dcw, grads[p + "w1"], grads[p + "w3"], grads[p + "w2"] = ops.moe_backward(
                dx, moe_cache, P[p + "w1"], P[p + "w3"], P[p + "w2"]
            )
            dgl = ops.combine_backward(dcw, decision)
            if aux_scale:
                dgl = dgl + ops.aux_loss_backward(decision, aux_scale)
            grads[p + "gate"] = m_in.reshape(-1, d).T @ dgl.reshape(-1, cfg.num_experts)
            dm_in = dm_in + dgl @ P[p + "gate"].T
            dmid, grads[p + "ffn_norm"] = ops.rmsnorm_backward(dm_in, x_mid, P[p + "ffn_norm"], cfg.norm_eps)
            dx = dx + dmid
            # attention branch
            da_out, grads[p + "wq"], grads[p + "wk"], grads[p + "wv"], grads[p + "wo"] = ops.attention_backward(
                dx, att_cache, P[p + "wq"], P[p + "wk"], P[p + "wv"], P[p + "wo"]
            )
            dxi, grads[p + "attn_norm"] = ops.rmsnorm_backward(da_out, x_in, P[p + "attn_norm"], cfg.norm_eps)
            dx = dx + dxi

        np.add.at(grads["tok_emb"], c["ids"].reshape(-1), dx.reshape(-1, d))
        return grads

    def loss_and_grads(self, ids, targets=None):
        out = self.forward(ids, targets)
        return out, self.backward(out)

    def generate(self, prompt_ids, max_tokens: int) -> list[int]:
        """Greedy argmax continuation; returns prompt plus new tokens."""
        ids = list(prompt_ids)
        if len(ids) + max_tokens > self.config.context_len:
            raise ValueError(
                f"prompt ({len(ids)}) plus {max_tokens} new tokens exceeds context length {self.config.context_len}"
            )
        if not ids and max_tokens:
            raise ValueError("greedy decoding needs a non-empty prompt")
        for _ in range(max_tokens):
            out = self.forward(np.array(ids), compute_loss=False)
            ids.append(int(np.argmax(out.logits[-1])))
        return ids
