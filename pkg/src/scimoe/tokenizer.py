"""Entity-aware scientific tokenizer.

General prose is handled by byte-level BPE. Molecules (SMILES) and protein
sequences are wrapped in identifier tokens and encoded one atom / residue per
token, using reserved ids that no BPE merge can ever produce.

Documents carry entities as inline markup::

    glycine is [START_MOL]C(C(=O)O)N[END_MOL]

so ``decode(encode(doc)) == doc`` for every well-formed document.
"""

from __future__ import annotations

import heapq
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

START_MOL = "[START_MOL]"
END_MOL = "[END_MOL]"
START_PROT = "[START_PROT]"
END_PROT = "[END_PROT]"
SPECIAL_TOKENS = (START_MOL, END_MOL, START_PROT, END_PROT)

# fmt: off
ELEMENTS = (
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S",
    "Cl", "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga",
    "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd",
    "Ag", "Cd", "In", "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm",
    "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os",
    "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa",
    "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg",
    "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
)
# fmt: on
AROMATIC_ATOMS = ("b", "c", "n", "o", "p", "s", "se", "as", "te")
# atoms SMILES allows outside square brackets
ORGANIC_SUBSET = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I", "b", "c", "n", "o", "p", "s")
SMILES_SYMBOLS = tuple("()[]=#$:/\\.+-@%*0123456789")
AMINO_ACIDS = tuple("ACDEFGHIKLMNPQRSTVWY") + tuple("UOBZX")

# namespace prefixes keep entity tokens apart from prose tokens with the same surface
MOL_PREFIX = "⟨mol⟩"
PROT_PREFIX = "⟨prot⟩"

VOCAB_FORMAT = "scimoe-vocab"
VOCAB_VERSION = 1

_PRETOKEN = re.compile(r"\s?\w+|\s?[^\s\w]+|\s+(?!\S)|\s+")
_MARKUP = re.compile("|".join(re.escape(s) for s in SPECIAL_TOKENS))


class TokenizerError(ValueError):
    pass


@lru_cache(maxsize=None)
def _byte_alphabet() -> tuple[str, ...]:
    """Printable, reversible one-character name for each byte value."""
    keep = list(range(ord("!"), ord("~") + 1)) + list(range(0xA1, 0xAD)) + list(range(0xAE, 0x100))
    names = {}
    extra = 0
    for b in range(256):
        if b in keep:
            names[b] = chr(b)
        else:
            names[b] = chr(256 + extra)
            extra += 1
    return tuple(names[b] for b in range(256))


def bytes_to_key(raw: bytes) -> str:
    alphabet = _byte_alphabet()
    return "".join(alphabet[b] for b in raw)


@lru_cache(maxsize=None)
def _byte_lookup() -> dict[str, int]:
    return {c: b for b, c in enumerate(_byte_alphabet())}


def key_to_bytes(key: str) -> bytes:
    lookup = _byte_lookup()
    return bytes(lookup[c] for c in key)


@dataclass(frozen=True)
class EntitySpan:
    kind: str  # "molecule" or "protein"
    text: str
    start: int
    end: int

    def __post_init__(self):
        if self.kind not in ("molecule", "protein"):
            raise TokenizerError(f"unknown entity kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class Vocabulary:
    """Immutable token table: byte tokens, BPE merges, then reserved entity tokens."""

    token_to_id: dict[str, int]
    merges: tuple[tuple[str, str], ...]
    special_tokens: tuple[str, ...] = SPECIAL_TOKENS
    atom_tokens: tuple[str, ...] = ELEMENTS + AROMATIC_ATOMS
    molecule_symbols: tuple[str, ...] = SMILES_SYMBOLS
    amino_tokens: tuple[str, ...] = AMINO_ACIDS
    _id_to_key: list[str] = field(init=False, repr=False)
    _ranks: dict[tuple[int, int], tuple[int, int]] = field(init=False, repr=False)
    _cache: dict[str, tuple[int, ...]] = field(init=False, repr=False)

    def __post_init__(self):
        ids = sorted(self.token_to_id.values())
        if ids != list(range(len(ids))):
            raise TokenizerError("token ids must be dense integers starting at 0")
        id_to_key = [""] * len(ids)
        for key, i in self.token_to_id.items():
            id_to_key[i] = key
        ranks = {}
        for rank, (a, b) in enumerate(self.merges):
            pair = (self.token_to_id[a], self.token_to_id[b])
            ranks[pair] = (rank, self.token_to_id[a + b])
        object.__setattr__(self, "_id_to_key", id_to_key)
        object.__setattr__(self, "_ranks", ranks)
        object.__setattr__(self, "_cache", {})

    @property
    def size(self) -> int:
        return len(self.token_to_id)

    def __len__(self) -> int:
        return self.size

    def key(self, token_id: int) -> str:
        return self._id_to_key[token_id]

    def mol_id(self, unit: str) -> int:
        """Id of an atom or SMILES symbol token."""
        return self.token_to_id[MOL_PREFIX + unit]

    def amino_id(self, letter: str) -> int:
        return self.token_to_id[PROT_PREFIX + letter]

    def is_reserved(self, token_id: int) -> bool:
        return not self._is_prose(self._id_to_key[token_id])

    def _is_prose(self, key: str) -> bool:
        return not (key in self.special_tokens or key.startswith((MOL_PREFIX, PROT_PREFIX)))

    def surface(self, token_id: int) -> str:
        """Text a single token renders to (prose tokens decoded leniently)."""
        key = self._id_to_key[token_id]
        if key in self.special_tokens:
            return key
        if key.startswith(MOL_PREFIX):
            return key[len(MOL_PREFIX):]
        if key.startswith(PROT_PREFIX):
            return key[len(PROT_PREFIX):]
        return key_to_bytes(key).decode("utf-8", errors="replace")

    def encode_word(self, word: str) -> tuple[int, ...]:
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        ids = list(word.encode("utf-8"))
        while len(ids) > 1:
            best = None
            for pair in zip(ids, ids[1:]):
                hit = self._ranks.get(pair)
                if hit is not None and (best is None or hit[0] < best[1][0]):
                    best = (pair, hit)
            if best is None:
                break
            ids = _merge_pair(ids, best[0], best[1][1])
        result = tuple(ids)
        self._cache[word] = result
        return result

    # persistence

    def to_dict(self) -> dict:
        return {
            "format": VOCAB_FORMAT,
            "version": VOCAB_VERSION,
            "size": self.size,
            "specials": list(self.special_tokens),
            "atoms": list(self.atom_tokens),
            "molecule_symbols": list(self.molecule_symbols),
            "aminos": list(self.amino_tokens),
            "merges": [list(m) for m in self.merges],
            "token_to_id": self.token_to_id,
        }

    def save(self, path: str | Path) -> None:
        text = json.dumps(self.to_dict(), ensure_ascii=False, indent=1)
        Path(path).write_text(text + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, data: dict) -> "Vocabulary":
        if data.get("format") != VOCAB_FORMAT:
            raise TokenizerError("not a vocabulary file")
        if data.get("version") != VOCAB_VERSION:
            raise TokenizerError(f"unsupported vocabulary version {data.get('version')}")
        vocab = cls(
            token_to_id={k: int(v) for k, v in data["token_to_id"].items()},
            merges=tuple((a, b) for a, b in data["merges"]),
            special_tokens=tuple(data["specials"]),
            atom_tokens=tuple(data["atoms"]),
            molecule_symbols=tuple(data["molecule_symbols"]),
            amino_tokens=tuple(data["aminos"]),
        )
        if vocab.size != data["size"]:
            raise TokenizerError("vocabulary size field does not match token table")
        return vocab

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _merge_pair(ids: list[int], pair: tuple[int, int], new_id: int) -> list[int]:
    out = []
    i = 0
    n = len(ids)
    while i < n:
        if i + 1 < n and ids[i] == pair[0] and ids[i + 1] == pair[1]:
            out.append(new_id)
            i += 2
        else:
            out.append(ids[i])
            i += 1
    return out


def reserved_keys(
    specials: Sequence[str] = SPECIAL_TOKENS,
    atoms: Sequence[str] = ELEMENTS + AROMATIC_ATOMS,
    symbols: Sequence[str] = SMILES_SYMBOLS,
    aminos: Sequence[str] = AMINO_ACIDS,
) -> list[str]:
    """Keys of every non-byte reserved token, in id order."""
    return (
        list(specials)
        + [MOL_PREFIX + a for a in atoms]
        + [MOL_PREFIX + s for s in symbols]
        + [PROT_PREFIX + a for a in aminos]
    )


def reserved_count() -> int:
    """Byte tokens plus identifier, atom, SMILES-symbol and amino-acid tokens."""
    return 256 + len(reserved_keys())


def _build(merges: list[tuple[bytes, bytes]]) -> Vocabulary:
    token_to_id = {bytes_to_key(bytes([b])): b for b in range(256)}
    merge_keys = []
    for a, b in merges:
        ka, kb = bytes_to_key(a), bytes_to_key(b)
        merge_keys.append((ka, kb))
        token_to_id[ka + kb] = len(token_to_id)
    for key in reserved_keys():
        if key in token_to_id:
            raise TokenizerError(f"reserved token {key!r} collides with a BPE token")
        token_to_id[key] = len(token_to_id)
    return Vocabulary(token_to_id=token_to_id, merges=tuple(merge_keys))


def base_vocabulary() -> Vocabulary:
    """Vocabulary with reserved tokens only (no merges)."""
    return _build([])


# ---------------------------------------------------------------------------
# document markup


def parse_document(text: str) -> list[str | EntitySpan]:
    """Split marked-up text into prose strings and entity spans, in order."""
    out: list[str | EntitySpan] = []
    pos = 0
    open_kind = None
    open_at = 0
    for m in _MARKUP.finditer(text):
        tag = m.group(0)
        if open_kind is None:
            if tag not in (START_MOL, START_PROT):
                raise TokenizerError(f"unexpected {tag} at offset {m.start()}")
            if m.start() > pos:
                out.append(text[pos:m.start()])
            open_kind = "molecule" if tag == START_MOL else "protein"
            open_at = m.end()
        else:
            closer = END_MOL if open_kind == "molecule" else END_PROT
            if tag != closer:
                raise TokenizerError(f"expected {closer} but found {tag} at offset {m.start()}")
            out.append(EntitySpan(open_kind, text[open_at:m.start()], open_at, m.start()))
            open_kind = None
        pos = m.end()
    if open_kind is not None:
        raise TokenizerError(f"entity opened at offset {open_at} is never closed")
    if pos < len(text):
        out.append(text[pos:])
    return out


def _segments_from_spans(text: str, spans: Sequence[EntitySpan]) -> list[str | EntitySpan]:
    out: list[str | EntitySpan] = []
    pos = 0
    for span in spans:
        if span.start < pos or span.end < span.start or span.end > len(text):
            raise TokenizerError(f"span {span.start}:{span.end} overlaps, is unordered or out of range")
        if text[span.start:span.end] != span.text:
            raise TokenizerError(f"span {span.start}:{span.end} text does not match document")
        if span.start > pos:
            out.append(text[pos:span.start])
        out.append(span)
        pos = span.end
    if pos < len(text):
        out.append(text[pos:])
    return out


def pretokenize(text: str) -> list[str]:
    return _PRETOKEN.findall(text)


# ---------------------------------------------------------------------------
# training


def train_bpe(corpus: Iterable[str], target_size: int) -> Vocabulary:
    """Learn byte-level BPE merges on the prose of ``corpus``.

    Entity spans are excluded from training. Equal-frequency pairs are broken
    by the lexicographically smallest (left, right) byte strings.
    """
    docs = list(corpus)
    if not docs:
        raise TokenizerError("corpus is empty")
    n_reserved = reserved_count()
    if target_size < n_reserved:
        raise TokenizerError(f"target_size {target_size} is below the {n_reserved} reserved tokens")
    n_merges = target_size - n_reserved

    word_freq: Counter[str] = Counter()
    for doc in docs:
        for seg in parse_document(doc):
            if isinstance(seg, str):
                word_freq.update(pretokenize(seg))

    tokens: dict[int, bytes] = {b: bytes([b]) for b in range(256)}
    words = [list(w.encode("utf-8")) for w in word_freq]
    freqs = list(word_freq.values())
    pair_counts: Counter[tuple[int, int]] = Counter()
    where: dict[tuple[int, int], set[int]] = {}
    for wi, (w, f) in enumerate(zip(words, freqs)):
        for pair in zip(w, w[1:]):
            pair_counts[pair] += f
            where.setdefault(pair, set()).add(wi)

    heap = [(-c, tokens[a], tokens[b], a, b) for (a, b), c in pair_counts.items()]
    heapq.heapify(heap)
    merges: list[tuple[bytes, bytes]] = []
    while len(merges) < n_merges and heap:
        neg, _, _, a, b = heapq.heappop(heap)
        count = pair_counts.get((a, b), 0)
        if count <= 0 or -neg != count:
            continue
        new_id = 256 + len(merges)
        tokens[new_id] = tokens[a] + tokens[b]
        merges.append((tokens[a], tokens[b]))
        touched: set[tuple[int, int]] = set()
        for wi in sorted(where.pop((a, b), ())):
            old, f = words[wi], freqs[wi]
            new = _merge_pair(old, (a, b), new_id)
            for pair in zip(old, old[1:]):
                pair_counts[pair] -= f
                touched.add(pair)
            for pair in zip(new, new[1:]):
                pair_counts[pair] += f
                where.setdefault(pair, set()).add(wi)
                touched.add(pair)
            words[wi] = new
        for pair in touched:
            c = pair_counts[pair]
            if c > 0:
                heapq.heappush(heap, (-c, tokens[pair[0]], tokens[pair[1]], pair[0], pair[1]))
            else:
                del pair_counts[pair]
                where.pop(pair, None)
    if len(merges) < n_merges:
        raise TokenizerError(
            f"corpus supports only {len(merges)} merges; achievable size is {n_reserved + len(merges)}"
        )
    return _build(merges)


# ---------------------------------------------------------------------------
# encoding / decoding


def encode_entity(span: EntitySpan, vocab: Vocabulary) -> list[int]:
    """Wrap a molecule or protein span and emit one token per atom / residue."""
    if not span.text:
        raise TokenizerError(f"empty {span.kind} span at offset {span.start}")
    text = span.text
    if span.kind == "protein":
        ids = [vocab.token_to_id[START_PROT]]
        amino = set(vocab.amino_tokens)
        for i, ch in enumerate(text):
            if ch not in amino:
                raise TokenizerError(f"character {ch!r} at offset {span.start + i} is not an amino-acid code")
            ids.append(vocab.amino_id(ch))
        ids.append(vocab.token_to_id[END_PROT])
        return ids

    ids = [vocab.token_to_id[START_MOL]]
    atoms = set(vocab.atom_tokens)
    organic = atoms.intersection(ORGANIC_SUBSET)
    symbols = set(vocab.molecule_symbols)
    in_bracket = False
    i = 0
    while i < len(text):
        table = atoms if in_bracket else organic
        two = text[i:i + 2]
        if len(two) == 2 and two in table:
            unit = two
        elif text[i] in table or text[i] in symbols:
            unit = text[i]
        else:
            raise TokenizerError(f"character {text[i]!r} at offset {span.start + i} has no molecule token")
        if unit == "[":
            in_bracket = True
        elif unit == "]":
            in_bracket = False
        ids.append(vocab.mol_id(unit))
        i += len(unit)
    ids.append(vocab.token_to_id[END_MOL])
    return ids


def encode(text: str, vocab: Vocabulary, spans: Sequence[EntitySpan] | None = None) -> list[int]:
    """Encode a document.

    With ``spans=None`` entities are read from inline identifier markup.
    Explicit ``spans`` index into ``text``; the decoded result then carries
    the markup around each span.
    """
    segments = parse_document(text) if spans is None else _segments_from_spans(text, spans)
    ids: list[int] = []
    for seg in segments:
        if isinstance(seg, EntitySpan):
            ids.extend(encode_entity(seg, vocab))
        else:
            for word in pretokenize(seg):
                ids.extend(vocab.encode_word(word))
    return ids


def decode(ids: Iterable[int], vocab: Vocabulary) -> str:
    parts: list[str] = []
    pending = bytearray()
    for i in ids:
        if not 0 <= i < vocab.size:
            raise TokenizerError(f"unknown token id {i}")
        key = vocab.key(i)
        if vocab._is_prose(key):
            pending += key_to_bytes(key)
            continue
        if pending:
            parts.append(pending.decode("utf-8", errors="replace"))
            pending.clear()
        parts.append(vocab.surface(i))
    if pending:
        parts.append(pending.decode("utf-8", errors="replace"))
    return "".join(parts)
