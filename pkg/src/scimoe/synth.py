"""Seeded synthetic corpora for smoke tests and the expert-choice harness."""

from __future__ import annotations

import random
from pathlib import Path

from .tokenizer import AMINO_ACIDS, END_MOL, END_PROT, START_MOL, START_PROT

PROSE_DOMAINS = {
    "math": "theorem lemma proof integral matrix eigenvalue manifold topology prime group ring "
    "algebra derivative limit series convergence function bound inequality vector norm".split(),
    "chemistry": "reaction catalyst solvent bond molecule oxidation reduction acid base ion "
    "synthesis yield compound polymer enthalpy equilibrium electron orbital ligand salt".split(),
    "biology": "cell protein gene enzyme membrane tissue organism mutation receptor pathway "
    "species evolution neuron genome ribosome mitochondria antibody virus bacteria DNA".split(),
    "physics": "energy momentum particle field quantum wave force mass velocity photon "
    "relativity entropy spin lattice gravity charge magnetic oscillation plasma laser".split(),
}
FUNCTION_WORDS = "the of a and in is we that to for with this by on are as".split()

_CHAIN_ATOMS = ["C", "C", "C", "C", "N", "O", "O", "S", "F", "Cl", "Br"]
_RINGS = ["c1ccccc1", "C1CCCCC1", "c1ccncc1", "C1CCOC1", "c1ccc2ccccc2c1"]
_STANDARD_AMINO = AMINO_ACIDS[:20]


def pattern_text(n_pairs: int = 70000) -> str:
    """The two-symbol repeating corpus ``abab...``."""
    return "ab" * n_pairs


def prose_document(domain: str, rng: random.Random, n_sentences: int = 4) -> str:
    words = PROSE_DOMAINS[domain]
    sentences = []
    for _ in range(n_sentences):
        n = rng.randint(6, 11)
        toks = [rng.choice(words) if rng.random() < 0.6 else rng.choice(FUNCTION_WORDS) for _ in range(n)]
        sentences.append(" ".join(toks).capitalize() + ".")
    return " ".join(sentences)


def smiles(rng: random.Random, max_atoms: int = 14) -> str:
    parts = []
    n = rng.randint(3, max_atoms)
    for i in range(n):
        r = rng.random()
        if r < 0.12:
            parts.append(rng.choice(_RINGS))
        elif r < 0.25 and parts:
            parts.append("(" + "".join(rng.choice(_CHAIN_ATOMS) for _ in range(rng.randint(1, 3))) + ")")
        else:
            if parts and rng.random() < 0.15:
                parts.append(rng.choice("=#"))
            parts.append(rng.choice(_CHAIN_ATOMS))
    return "".join(parts).rstrip("=#")


def protein(rng: random.Random, lo: int = 20, hi: int = 50) -> str:
    return "".join(rng.choice(_STANDARD_AMINO) for _ in range(rng.randint(lo, hi)))


def molecule_document(rng: random.Random) -> str:
    return START_MOL + smiles(rng) + END_MOL


def protein_document(rng: random.Random) -> str:
    return START_PROT + protein(rng) + END_PROT


DOMAIN_LABELS = ("math", "chemistry", "biology", "physics", "molecule", "protein")


def document(label: str, rng: random.Random) -> str:
    if label == "molecule":
        return molecule_document(rng)
    if label == "protein":
        return protein_document(rng)
    return prose_document(label, rng)


def labeled_documents(labels=DOMAIN_LABELS, per_label: int = 100, seed: int = 0) -> list[tuple[str, str]]:
    rng = random.Random(seed)
    return [(label, document(label, rng)) for label in labels for _ in range(per_label)]


def mixed_text(labels=DOMAIN_LABELS, n_docs: int = 2000, seed: int = 0) -> str:
    """Newline-joined documents with labels drawn uniformly at random."""
    rng = random.Random(seed)
    return "\n".join(document(rng.choice(labels), rng) for _ in range(n_docs)) + "\n"


def write_labeled_corpus(root: str | Path, labels=DOMAIN_LABELS, per_label: int = 100, seed: int = 0) -> Path:
    """One subdirectory per label, one text file per document."""
    root = Path(root)
    counters: dict[str, int] = {}
    for label, text in labeled_documents(labels, per_label, seed):
        i = counters.get(label, 0)
        counters[label] = i + 1
        (root / label).mkdir(parents=True, exist_ok=True)
        (root / label / f"{i:04d}.txt").write_text(text + "\n", encoding="utf-8")
    return root
