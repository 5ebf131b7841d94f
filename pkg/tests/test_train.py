import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scimoe import synth
from scimoe.model import MoETransformer
from scimoe.tokenizer import encode
from scimoe.train import (
    OptimizerState,
    StepRecord,
    TrainConfig,
    adamw_step,
    clip_grad_norm,
    cosine_lr,
    global_norm,
    make_windows,
    read_history,
    train,
    write_history,
)

# --- schedule -------------------------------------------------------------------


def test_cosine_endpoints():
    cfg = TrainConfig(lr_init=3e-4, total_steps=1000)
    assert cosine_lr(0, cfg) == 3e-4
    assert cosine_lr(1000, cfg) == 0.1 * 3e-4
    assert cosine_lr(500, cfg) == pytest.approx(1.65e-4, rel=1e-12)


def test_cosine_with_warmup():
    cfg = TrainConfig(lr_init=1e-3, total_steps=100, warmup_steps=10)
    assert cosine_lr(0, cfg) == 0.0
    assert cosine_lr(5, cfg) == pytest.approx(5e-4)
    assert cosine_lr(10, cfg) == 1e-3
    assert cosine_lr(100, cfg) == 0.1 * 1e-3


def test_cosine_monotone_after_warmup():
    cfg = TrainConfig(lr_init=2e-3, total_steps=300, warmup_steps=20)
    lrs = [cosine_lr(s, cfg) for s in range(20, 301)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_cosine_out_of_range():
    cfg = TrainConfig(total_steps=10)
    for bad in (-1, 11):
        with pytest.raises(ValueError):
            cosine_lr(bad, cfg)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(total_steps=10, warmup_steps=10)
    with pytest.raises(ValueError):
        TrainConfig(beta2=1.0)
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"learning_rate": 1.0})


# --- clipping -------------------------------------------------------------------


def test_clip_leaves_small_gradients():
    g = {"a": np.array([0.3, 0.4])}
    out, norm = clip_grad_norm(g, 1.0)
    assert norm == pytest.approx(0.5) and np.array_equal(out["a"], g["a"])


def test_clip_scales_large_gradients():
    g = {"a": np.array([[2.4]]), "b": np.array([3.2])}
    out, norm = clip_grad_norm(g, 1.0)
    assert norm == pytest.approx(4.0)
    assert 1.0 - 1e-15 <= global_norm(out) <= 1.0
    np.testing.assert_allclose(out["b"], [0.8])


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
def test_clip_property(seed, scale):
    rng = np.random.default_rng(seed)
    g = {f"t{i}": rng.normal(0, scale, rng.integers(1, 5, 2)) for i in range(3)}
    out, norm = clip_grad_norm(g, 1.0)
    assert global_norm(out) <= 1.0
    if norm <= 1.0:
        assert all(np.array_equal(out[k], g[k]) for k in g)


def test_non_finite_gradient_names_tensor():
    with pytest.raises(FloatingPointError, match="layers.0.w1"):
        clip_grad_norm({"ok": np.ones(2), "layers.0.w1": np.array([np.nan])}, 1.0)


# --- AdamW ----------------------------------------------------------------------


def test_zero_gradient_is_pure_decay():
    cfg = TrainConfig(weight_decay=0.1)
    w = np.random.default_rng(0).normal(size=(3, 4))
    gain = np.ones(4)
    params = {"w": w.copy(), "gain": gain.copy()}
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    adamw_step(params, grads, OptimizerState.zeros_like(params), 1e-3, cfg)
    assert np.array_equal(params["w"], w * (1.0 - 1e-3 * 0.1))
    assert np.array_equal(params["gain"], gain)


def test_no_decay_zero_gradient_is_identity():
    cfg = TrainConfig(weight_decay=0.0)
    w = np.random.default_rng(1).normal(size=(2, 2))
    params = {"w": w.copy()}
    adamw_step(params, {"w": np.zeros((2, 2))}, OptimizerState.zeros_like(params), 1e-2, cfg)
    assert np.array_equal(params["w"], w)


def test_adamw_scalar_hand_computation():
    cfg = TrainConfig(weight_decay=0.1, beta1=0.9, beta2=0.95, eps=1e-8)
    theta, m, v = 0.7, 0.0, 0.0
    params = {"w": np.array([[theta]])}
    state = OptimizerState.zeros_like(params)
    for t, (g, lr) in enumerate([(0.5, 1e-2), (-0.2, 5e-3), (1.3, 2e-3)], start=1):
        m = 0.9 * m + 0.1 * g
        v = 0.95 * v + 0.05 * g * g
        mh = m / (1 - 0.9**t)
        vh = v / (1 - 0.95**t)
        theta = theta * (1 - lr * 0.1) - lr * mh / (math.sqrt(vh) + 1e-8)
        adamw_step(params, {"w": np.array([[g]])}, state, lr, cfg)
        assert abs(params["w"][0, 0] - theta) <= 1e-12
    assert state.t == 3


def test_adamw_constant_gradient_step_size():
    cfg = TrainConfig(weight_decay=0.0)
    params = {"w": np.zeros((1, 1))}
    state = OptimizerState.zeros_like(params)
    prev = 0.0
    for _ in range(50):
        adamw_step(params, {"w": np.array([[3.0]])}, state, 1e-3, cfg)
        step = prev - params["w"][0, 0]
        prev = params["w"][0, 0]
        assert step == pytest.approx(1e-3, rel=1e-6)


# --- training loop --------------------------------------------------------------


def _pattern_tokens(vocab, n_pairs=4000):
    return encode(synth.pattern_text(n_pairs), vocab)


def test_make_windows_drops_remainder():
    w = make_windows(list(range(10)), 4)
    assert w.tolist() == [[0, 1, 2, 3], [4, 5, 6, 7]]


def test_zero_lr_leaves_weights(tiny_config, base_vocab):
    model = MoETransformer(tiny_config, seed=0)
    before = {k: v.copy() for k, v in model.params.items()}
    res = train(model, _pattern_tokens(base_vocab), TrainConfig(lr_init=0.0, total_steps=5, weight_decay=0.1))
    assert all(np.array_equal(before[k], model.params[k]) for k in before)
    assert len(res.history) == 5 and all(r.lr == 0.0 for r in res.history)


def test_zero_steps(tiny_config, base_vocab):
    model = MoETransformer(tiny_config, seed=0)
    before = {k: v.copy() for k, v in model.params.items()}
    res = train(model, _pattern_tokens(base_vocab), TrainConfig(total_steps=0))
    assert res.history == [] and not res.exhausted
    assert all(np.array_equal(before[k], model.params[k]) for k in before)


def test_loss_falls_on_pattern(tiny_config, base_vocab):
    model = MoETransformer(tiny_config, seed=0)
    res = train(model, _pattern_tokens(base_vocab), TrainConfig(lr_init=3e-3, total_steps=60))
    lm = np.array([r.lm_loss for r in res.history])
    assert abs(lm[0] - math.log(tiny_config.vocab_size)) < 0.3
    smooth = np.convolve(lm, np.ones(10) / 10, mode="valid")
    assert smooth[-1] < smooth[0] - 2.0
    assert all(r.grad_norm > 0 for r in res.history)


def test_training_is_deterministic(tiny_config, base_vocab):
    tokens = _pattern_tokens(base_vocab)
    runs = []
    for _ in range(2):
        model = MoETransformer(tiny_config, seed=3)
        res = train(model, tokens, TrainConfig(lr_init=3e-3, total_steps=8, seed=3))
        runs.append((res.history, model.params))
    assert runs[0][0] == runs[1][0]
    assert all(np.array_equal(runs[0][1][k], runs[1][1][k]) for k in runs[0][1])


def test_exhaustion_stops_cleanly(tiny_config, base_vocab, caplog):
    tokens = _pattern_tokens(base_vocab, n_pairs=300)  # 600 tokens -> 9 windows of 64 -> 2 batches
    model = MoETransformer(tiny_config, seed=0)
    res = train(model, tokens, TrainConfig(total_steps=10))
    assert res.exhausted and res.steps == 2
    assert "exhausted" in caplog.text


def test_history_round_trip(tmp_path):
    hist = [StepRecord(0, 3e-4, 6.1234567890123, 1.01, 2.5), StepRecord(1, 2.9e-4, 5.0, 1.0, 0.1 + 0.2)]
    write_history(tmp_path / "h.tsv", hist)
    assert read_history(tmp_path / "h.tsv") == hist
    assert (tmp_path / "h.tsv").read_text().splitlines()[0] == "step\tlr\tlm_loss\taux_loss\tgrad_norm"
