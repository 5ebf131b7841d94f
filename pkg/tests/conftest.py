import numpy as np
import pytest

from scimoe.config import ModelConfig, preset
from scimoe.model import MoETransformer
from scimoe.tokenizer import base_vocabulary


@pytest.fixture(scope="session")
def base_vocab():
    return base_vocabulary()


@pytest.fixture
def small_config():
    """The d=16, N=2, e=4, k=2 configuration used for exhaustive gradient checks."""
    return ModelConfig(
        dim=16, n_layers=2, head_dim=4, ffn_hidden_dim=24, n_heads=4, n_kv_heads=4,
        context_len=16, vocab_size=32, num_experts=4, topk_experts=2,
    )


@pytest.fixture
def tiny_config(base_vocab):
    return preset("tiny").with_(vocab_size=base_vocab.size)


def min_topk_margin(model: MoETransformer, ids) -> float:
    """Smallest gap between the k-th and (k+1)-th gate logit over all tokens and layers."""
    out = model.forward(ids)
    k = model.config.topk_experts
    gaps = []
    for g in out.gate_logits:
        s = -np.sort(-g, axis=-1)
        if k < s.shape[-1]:
            gaps.append(np.min(s[..., k - 1] - s[..., k]))
        gaps.append(np.min(np.abs(np.diff(s[..., :k], axis=-1))) if k > 1 else np.inf)
    return float(min(gaps))


def tie_free_point(config, length, batch=1, margin=5e-3, scale=0.3, max_tries=200):
    """Search seeds for weights and tokens whose routing is far from any top-k tie."""
    for seed in range(max_tries):
        model = MoETransformer(config.with_(init_std=scale), seed=seed)
        ids = np.random.default_rng(seed).integers(0, config.vocab_size, (batch, length))
        if min_topk_margin(model, ids) > margin:
            return model, ids
    raise RuntimeError("no tie-free point found")


def finite_difference_check(model, ids, step=1e-4, per_tensor=None, seed=0):
    """Max relative error between analytic and central-difference gradients, per tensor.

    ``per_tensor=None`` checks every entry; otherwise that many entries per
    tensor (always including the largest analytic gradient).
    """
    out, grads = model.loss_and_grads(ids)
    ref_decisions = [(d.selected.copy(), d.dropped.copy()) for d in out.decisions]
    rng = np.random.default_rng(seed)
    worst = {}
    for name, p in model.params.items():
        g = grads[name]
        if per_tensor is None or p.size <= per_tensor:
            idxs = list(np.ndindex(p.shape))
        else:
            flat = rng.choice(p.size, per_tensor - 1, replace=False).tolist()
            flat.append(int(np.argmax(np.abs(g))))
            idxs = [np.unravel_index(i, p.shape) for i in flat]
        err = 0.0
        for idx in idxs:
            old = p[idx]
            p[idx] = old + step
            up = model.forward(ids)
            p[idx] = old - step
            dn = model.forward(ids)
            p[idx] = old
            for o in (up, dn):
                for (sel, drop), d in zip(ref_decisions, o.decisions):
                    assert np.array_equal(sel, d.selected) and np.array_equal(drop, d.dropped), "routing flipped"
            num = (up.loss - dn.loss) / (2 * step)
            a = g[idx]
            err = max(err, abs(a - num) / max(abs(a), abs(num), 1e-8))
        worst[name] = err
    return worst
