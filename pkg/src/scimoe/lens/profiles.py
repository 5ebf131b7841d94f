"""Per-document expert-choice profiles built from cached gate logits."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..model import MoETransformer
from ..ops import softmax
from ..tokenizer import Vocabulary, encode

log = logging.getLogger(__name__)


@dataclass
class ExpertChoiceProfile:
    per_layer: list[np.ndarray]
    label: str | None = None

    @property
    def vector(self) -> np.ndarray:
        """Layer profiles concatenated in layer order (length n_layers * n_experts)."""
        return np.concatenate(self.per_layer)


def _column_sums(g: np.ndarray) -> np.ndarray:
    # exactly rounded sums, so the result cannot depend on token order
    return np.array([math.fsum(col) for col in g.T])


def expert_profile(gate_logits: Sequence[np.ndarray], label: str | None = None, normalize: bool = False) -> ExpertChoiceProfile:
    """Softmax of token-summed gate logits for each layer.

    ``normalize=True`` divides the summed logits by the token count first,
    which keeps the softmax temperature independent of document length.
    """
    if len(gate_logits) == 0:
        raise ValueError("no layers given")
    e = None
    per_layer = []
    for i, g in enumerate(gate_logits):
        g = np.asarray(g, dtype=np.float64)
        if g.ndim != 2 or g.shape[0] < 1:
            raise ValueError(f"layer {i}: expected (tokens, experts) logits, got shape {g.shape}")
        if e is None:
            e = g.shape[1]
        elif g.shape[1] != e:
            raise ValueError(f"layer {i} has {g.shape[1]} experts, layer 0 has {e}")
        summed = _column_sums(g)
        if normalize:
            summed = summed / g.shape[0]
        per_layer.append(softmax(summed))
    return ExpertChoiceProfile(per_layer, label)


def collect_profiles(
    model: MoETransformer,
    vocab: Vocabulary,
    documents: Iterable[tuple[str, str]],
    normalize: bool = False,
) -> tuple[list[ExpertChoiceProfile], int]:
    """Profile each ``(label, text)`` document; returns ``(profiles, n_skipped)``.

    Documents longer than the context are truncated; empty ones are skipped.
    """
    profiles = []
    skipped = 0
    ctx = model.config.context_len
    for label, text in documents:
        ids = encode(text, vocab)
        if not ids:
            skipped += 1
            continue
        out = model.forward(np.array(ids[:ctx]), compute_loss=False)
        profiles.append(expert_profile(out.gate_logits, label, normalize))
    if skipped:
        log.warning("skipped %d empty documents", skipped)
    return profiles, skipped


def profile_matrix(profiles: Sequence[ExpertChoiceProfile]) -> np.ndarray:
    return np.stack([p.vector for p in profiles]) if profiles else np.zeros((0, 0))


def write_table(path: str | Path, labels: Sequence[str], rows: np.ndarray, columns: Sequence[str]) -> None:
    """Tab-separated table: a header, then ``label`` followed by the row values."""
    lines = ["\t".join(["label", *columns])]
    for label, row in zip(labels, rows):
        if "\t" in label or "\n" in label:
            raise ValueError(f"label {label!r} contains a delimiter")
        lines.append("\t".join([label, *(repr(float(x)) for x in row)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_table(path: str | Path) -> tuple[list[str], np.ndarray, list[str]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    columns = lines[0].split("\t")[1:]
    labels, rows = [], []
    for line in lines[1:]:
        label, *vals = line.split("\t")
        labels.append(label)
        rows.append([float(v) for v in vals])
    return labels, np.array(rows, dtype=np.float64).reshape(len(rows), len(columns)), columns


def profile_columns(n_layers: int, n_experts: int) -> list[str]:
    return [f"L{i}E{j}" for i in range(n_layers) for j in range(n_experts)]


def write_profiles(path: str | Path, profiles: Sequence[ExpertChoiceProfile]) -> None:
    if not profiles:
        write_table(path, [], np.zeros((0, 0)), [])
        return
    n_layers = len(profiles[0].per_layer)
    n_experts = len(profiles[0].per_layer[0])
    write_table(path, [p.label or "" for p in profiles], profile_matrix(profiles), profile_columns(n_layers, n_experts))
