"""AdamW training loop with cosine decay, clipping and the balance-loss term."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import MoETransformer

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr_init: float = 3e-4
    total_steps: int = 1000
    warmup_steps: int = 0
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.1
    clip_norm: float = 1.0
    batch_tokens: int = 256
    seq_len: int | None = None  # None -> model context length
    final_lr_ratio: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.lr_init < 0:
            raise ValueError("lr_init must be >= 0")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0")
        if self.total_steps < 0 or self.warmup_steps < 0:
            raise ValueError("step counts must be non-negative")
        if self.total_steps and self.warmup_steps >= self.total_steps:
            raise ValueError("warmup_steps must be smaller than total_steps")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)


def cosine_lr(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to ``lr_init``, then cosine decay to ``final_lr_ratio * lr_init``."""
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    lr_final = cfg.final_lr_ratio * cfg.lr_init
    if step < cfg.warmup_steps:
        return cfg.lr_init * step / cfg.warmup_steps
    span = cfg.total_steps - cfg.warmup_steps
    progress = (step - cfg.warmup_steps) / span if span else 1.0
    # convex combination: exact at both ends of the decay
    c = 0.5 * (1.0 + math.cos(math.pi * progress))
    return c * cfg.lr_init + (1.0 - c) * lr_final


def global_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for name, g in grads.items():
        sq = float(np.sum(g * g))
        if not math.isfinite(sq):
            raise FloatingPointError(f"non-finite gradient in {name}")
        total += sq
    return math.sqrt(total)


def clip_grad_norm(grads: dict[str, np.ndarray], clip_norm: float):
    """Scale all gradients jointly so their global L2 norm is at most ``clip_norm``.

    Returns ``(grads, pre_clip_norm)``; the input dict is left untouched.
    """
    if clip_norm <= 0:
        raise ValueError("clip_norm must be > 0")
    norm = global_norm(grads)
    if norm <= clip_norm:
        return dict(grads), norm
    scale = clip_norm / norm
    clipped = {name: g * scale for name, g in grads.items()}
    # rounding can leave the result an ulp above the bound; step the scale down
    while global_norm(clipped) > clip_norm:
        scale = np.nextafter(scale, 0.0)
        clipped = {name: g * scale for name, g in grads.items()}
    return clipped, norm


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "OptimizerState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def decays(name: str, value: np.ndarray) -> bool:
    # matrices only: norm gains are left alone
    return value.ndim >= 2


def adamw_step(params, grads, state: OptimizerState, lr: float, cfg: TrainConfig):
    """One AdamW update, in place on ``params`` and ``state``.

    Decay is decoupled: ``theta *= 1 - lr * wd`` before the moment-based step.
    """
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name, theta in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        if not np.all(np.isfinite(update)):
            raise FloatingPointError(f"non-finite update for {name}")
        if cfg.weight_decay and decays(name, theta):
            theta *= 1.0 - lr * cfg.weight_decay
        theta -= update
    return params, state


@dataclass
class StepRecord:
    step: int
    lr: float
    lm_loss: float
    aux_loss: float
    grad_norm: float


@dataclass
class TrainResult:
    history: list[StepRecord] = field(default_factory=list)
    exhausted: bool = False

    @property
    def steps(self) -> int:
        return len(self.history)


def make_windows(tokens: Sequence[int], seq_len: int) -> np.ndarray:
    """Non-overlapping fixed-length windows; the remainder is dropped."""
    arr = np.asarray(tokens, dtype=np.int64)
    n = len(arr) // seq_len
    return arr[: n * seq_len].reshape(n, seq_len)


def train(model: MoETransformer, tokens: Sequence[int], cfg: TrainConfig, state: OptimizerState | None = None) -> TrainResult:
    """Run ``cfg.total_steps`` optimizer steps over windows of ``tokens``.

    Windows are visited once, in a seed-determined order. Running out of
    windows ends training early with ``exhausted=True``.
    """
    seq_len = cfg.seq_len or model.config.context_len
    if seq_len < 2 or seq_len > model.config.context_len:
        raise ValueError(f"seq_len {seq_len} must lie in [2, {model.config.context_len}]")
    windows = make_windows(tokens, seq_len)
    order = np.random.default_rng(cfg.seed).permutation(len(windows))
    batch = max(1, cfg.batch_tokens // seq_len)
    state = state or OptimizerState.zeros_like(model.params)
    result = TrainResult()
    for step in range(cfg.total_steps):
        lo = step * batch
        if lo + batch > len(windows):
            log.warning("token stream exhausted after %d of %d steps", step, cfg.total_steps)
            result.exhausted = True
            break
        ids = windows[order[lo: lo + batch]]
        out, grads = model.loss_and_grads(ids)
        grads, norm = clip_grad_norm(grads, cfg.clip_norm)
        lr = cosine_lr(step, cfg)
        adamw_step(model.params, grads, state, lr, cfg)
        result.history.append(StepRecord(step, lr, out.lm_loss, out.aux_loss, norm))
        if step % 50 == 0 or step == cfg.total_steps - 1:
            log.info("step %d lr %.3g lm %.4f aux %.4f |g| %.3f", step, lr, out.lm_loss, out.aux_loss, norm)
    return result


HISTORY_HEADER = ("step", "lr", "lm_loss", "aux_loss", "grad_norm")


def write_history(path: str | Path, history: list[StepRecord]) -> None:
    lines = ["\t".join(HISTORY_HEADER)]
    for r in history:
        lines.append(f"{r.step}\t{r.lr!r}\t{r.lm_loss!r}\t{r.aux_loss!r}\t{r.grad_norm!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_history(path: str | Path) -> list[StepRecord]:
    rows = Path(path).read_text().splitlines()[1:]
    out = []
    for row in rows:
        step, lr, lm, aux, gn = row.split("\t")
        out.append(StepRecord(int(step), float(lr), float(lm), float(aux), float(gn)))
    return out
