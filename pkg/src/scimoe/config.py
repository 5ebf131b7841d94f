"""Model hyperparameters and named presets."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    dim: int
    n_layers: int
    head_dim: int
    ffn_hidden_dim: int
    n_heads: int
    n_kv_heads: int
    context_len: int
    vocab_size: int
    num_experts: int
    topk_experts: int
    aux_loss_factor: float = 0.02
    capacity_factor: float = 1.0
    rope_base: float = 10000.0
    norm_eps: float = 1e-5
    init_std: float = 0.02

    def __post_init__(self):
        if self.head_dim * self.n_heads != self.dim:
            raise ConfigError(f"head_dim*n_heads = {self.head_dim * self.n_heads} != dim = {self.dim}")
        if self.n_kv_heads != self.n_heads:
            raise ConfigError("grouped-query attention is not supported (n_kv_heads must equal n_heads)")
        if self.head_dim % 2:
            raise ConfigError(f"head_dim must be even for rotary embeddings, got {self.head_dim}")
        if not 1 <= self.topk_experts <= self.num_experts:
            raise ConfigError("need 1 <= topk_experts <= num_experts")
        if self.aux_loss_factor < 0:
            raise ConfigError("aux_loss_factor must be >= 0")
        if self.capacity_factor <= 0:
            raise ConfigError("capacity_factor must be > 0")
        if self.norm_eps <= 0:
            raise ConfigError("norm_eps must be > 0")
        for name in ("dim", "n_layers", "ffn_hidden_dim", "context_len", "vocab_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)

    def param_count(self, active: bool = False) -> int:
        """Parameter count; ``active=True`` counts only the top-k experts per layer."""
        d, h, e = self.dim, self.ffn_hidden_dim, self.num_experts
        experts = self.topk_experts if active else e
        per_layer = 4 * d * d + 2 * d + d * e + experts * 3 * d * h
        return self.n_layers * per_layer + 2 * self.vocab_size * d + d


PRESETS = {
    "tiny": ModelConfig(
        dim=32, n_layers=2, head_dim=8, ffn_hidden_dim=64, n_heads=4, n_kv_heads=4,
        context_len=64, vocab_size=512, num_experts=4, topk_experts=2,
    ),
    "table1": ModelConfig(
        dim=3200, n_layers=26, head_dim=100, ffn_hidden_dim=8640, n_heads=32, n_kv_heads=32,
        context_len=8192, vocab_size=32192, num_experts=8, topk_experts=2,
    ),
}


def preset(name: str) -> ModelConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
