import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scimoe.tokenizer import (
    AMINO_ACIDS,
    AROMATIC_ATOMS,
    ELEMENTS,
    END_MOL,
    END_PROT,
    SPECIAL_TOKENS,
    START_MOL,
    START_PROT,
    EntitySpan,
    TokenizerError,
    Vocabulary,
    base_vocabulary,
    decode,
    encode,
    encode_entity,
    parse_document,
    pretokenize,
    reserved_count,
    train_bpe,
)


def surfaces(ids, vocab):
    return [vocab.surface(i) for i in ids]


def naive_bpe(corpus, n_merges):
    """Reference BPE: recount every pair from scratch after each merge."""
    words = Counter()
    for doc in corpus:
        for seg in parse_document(doc):
            if isinstance(seg, str):
                words.update(pretokenize(seg))
    seqs = {w: [bytes([b]) for b in w.encode()] for w in words}
    merges = []
    for _ in range(n_merges):
        counts = Counter()
        for w, seq in seqs.items():
            for pair in zip(seq, seq[1:]):
                counts[pair] += words[w]
        if not counts:
            break
        best = min(counts, key=lambda p: (-counts[p], p))
        merges.append(best)
        for w, seq in seqs.items():
            out, i = [], 0
            while i < len(seq):
                if i + 1 < len(seq) and (seq[i], seq[i + 1]) == best:
                    out.append(seq[i] + seq[i + 1])
                    i += 2
                else:
                    out.append(seq[i])
                    i += 1
            seqs[w] = out
    return merges


# --- worked examples ----------------------------------------------------------


def test_glycine_molecule(base_vocab):
    ids = encode_entity(EntitySpan("molecule", "C(C(=O)O)N", 0, 10), base_vocab)
    assert surfaces(ids, base_vocab) == [START_MOL, *"C(C(=O)O)N", END_MOL]


def test_protein_sequence(base_vocab):
    ids = encode_entity(EntitySpan("protein", "MIRLGAPQTL", 0, 10), base_vocab)
    assert surfaces(ids, base_vocab) == [START_PROT, *"MIRLGAPQTL", END_PROT]


def test_two_letter_atom_longest_match(base_vocab):
    ids = encode_entity(EntitySpan("molecule", "CCl", 0, 3), base_vocab)
    assert surfaces(ids, base_vocab) == [START_MOL, "C", "Cl", END_MOL]


def test_longest_match_oracle(base_vocab):
    # scan the element table directly: a two-letter symbol wins when it exists
    text = "ClCBrc1ccccc1[Na+][Se]"
    ids = encode(START_MOL + text + END_MOL, base_vocab)[1:-1]
    got = surfaces(ids, base_vocab)
    assert got == ["Cl", "C", "Br", "c", "1", "c", "c", "c", "c", "c", "1", "[", "Na", "+", "]", "[", "Se", "]"]
    assert "".join(got) == text


def test_atom_and_amino_ids_are_distinct(base_vocab):
    # carbon and cysteine share the letter C but not the token
    assert base_vocab.mol_id("C") != base_vocab.amino_id("C")


def test_glycine_in_prose(base_vocab):
    doc = "glycine is " + START_MOL + "C(C(=O)O)N" + END_MOL
    ids = encode(doc, base_vocab)
    prose = encode("glycine is ", base_vocab)
    assert ids[: len(prose)] == prose
    assert surfaces(ids[len(prose):], base_vocab) == [START_MOL, *"C(C(=O)O)N", END_MOL]
    assert decode(ids, base_vocab) == doc


def test_explicit_spans(base_vocab):
    text = "glycine is C(C(=O)O)N"
    ids = encode(text, base_vocab, spans=[EntitySpan("molecule", "C(C(=O)O)N", 11, 21)])
    assert decode(ids, base_vocab) == "glycine is " + START_MOL + "C(C(=O)O)N" + END_MOL
    assert ids == encode("glycine is " + START_MOL + "C(C(=O)O)N" + END_MOL, base_vocab)


def test_zero_spans_is_pure_bpe():
    v = train_bpe(["the cat sat on the mat"] * 5, reserved_count() + 5)
    ids = encode("the cat", v)
    assert not any(v.is_reserved(i) for i in ids)


def test_empty_document(base_vocab):
    assert encode("", base_vocab) == []
    assert decode([], base_vocab) == ""


# --- errors -------------------------------------------------------------------


def test_bad_protein_character(base_vocab):
    # "xyz" + "[START_PROT]" occupy offsets 0..14, so "1" sits at 17
    with pytest.raises(TokenizerError, match=r"'1' at offset 17"):
        encode("xyz" + START_PROT + "MK1" + END_PROT, base_vocab)


def test_bad_molecule_character(base_vocab):
    with pytest.raises(TokenizerError, match=r"'Q' at offset 2"):
        encode_entity(EntitySpan("molecule", "CCQ", 0, 3), base_vocab)


@pytest.mark.parametrize(
    "doc",
    [START_MOL + "CC", "a" + END_MOL, START_MOL + "C" + END_PROT, START_MOL + END_MOL],
)
def test_malformed_markup(doc, base_vocab):
    with pytest.raises(TokenizerError):
        encode(doc, base_vocab)


def test_decode_unknown_id(base_vocab):
    with pytest.raises(TokenizerError, match="unknown token id"):
        decode([base_vocab.size], base_vocab)


# --- vocabulary structure -----------------------------------------------------


def test_reserved_only_vocabulary_has_no_merges():
    corpus = ["hello world"] * 3
    v = train_bpe(corpus, reserved_count())
    assert v.size == reserved_count() and v.merges == ()
    assert surfaces(encode("hello", v), v) == list("hello")


def test_target_below_reserved():
    with pytest.raises(TokenizerError, match="reserved"):
        train_bpe(["abc"], reserved_count() - 1)


def test_empty_corpus():
    with pytest.raises(TokenizerError, match="empty"):
        train_bpe([], reserved_count() + 1)


def test_aaab_hand_run():
    # per document "aaab": (a,a) x2 beats (a,b) x1 -> "aa"; then (aa,a) and (a,b)
    # tie at 100 each and ("a","b") < ("aa","a") -> "ab"; finally (aa,ab) -> "aaab".
    corpus = ["aaab"] * 100
    v = train_bpe(corpus, reserved_count() + 3)
    assert v.merges == (("a", "a"), ("a", "b"), ("aa", "ab"))
    assert surfaces(encode("aaab", v), v) == ["aaab"]
    with pytest.raises(TokenizerError, match=f"achievable size is {reserved_count() + 3}"):
        train_bpe(corpus, reserved_count() + 4)


def test_full_size_vocabulary():
    # 32192 = reserved + learned merges; needs a corpus with enough distinct pairs
    rng = random.Random(0)
    alphabet = "abcdefghijklmnopqrstuvwxyz"
    words = ["".join(rng.choice(alphabet) for _ in range(rng.randint(3, 12))) for _ in range(40000)]
    corpus = [" ".join(words[i:i + 100]) for i in range(0, len(words), 100)]
    v = train_bpe(corpus, 32192)
    assert v.size == 32192
    assert sorted(v.token_to_id.values()) == list(range(32192))


@pytest.mark.parametrize("seed", range(6))
def test_bpe_matches_naive_reference(seed):
    rng = random.Random(seed)
    words = ["".join(rng.choice("abcd ") for _ in range(rng.randint(1, 9))) for _ in range(60)]
    corpus = [" ".join(words[i:i + 6]) for i in range(0, 60, 6)]
    n = 25
    expected = naive_bpe(corpus, n)
    v = train_bpe(corpus, reserved_count() + len(expected))
    got = [(v.surface(v.token_to_id[a]), v.surface(v.token_to_id[b])) for a, b in v.merges]
    assert got == [(a.decode(), b.decode()) for a, b in expected]


def test_vocabulary_invariants():
    v = train_bpe(["Benzene is " + START_MOL + "c1ccccc1" + END_MOL + " aromatic"] * 20, reserved_count() + 12)
    ids = sorted(v.token_to_id.values())
    assert ids == list(range(v.size))
    assert set(v.special_tokens) == set(SPECIAL_TOKENS)
    assert all(1 <= len(a) <= 2 for a in v.atom_tokens)
    assert set(ELEMENTS) | set(AROMATIC_ATOMS) == set(v.atom_tokens)
    assert len(v.amino_tokens) >= 20 and set(AMINO_ACIDS[:20]) <= set(v.amino_tokens)
    reserved = {i for i in range(v.size) if v.is_reserved(i)}
    assert len(reserved) == reserved_count() - 256
    # no merge ever produces or consumes a reserved token
    for a, b in v.merges:
        assert not v.is_reserved(v.token_to_id[a]) and not v.is_reserved(v.token_to_id[b])
        assert not v.is_reserved(v.token_to_id[a + b])


def test_vocab_file_round_trip(tmp_path):
    v = train_bpe(["hello hello world " + START_PROT + "MK" + END_PROT] * 10, reserved_count() + 10)
    path = tmp_path / "vocab.json"
    v.save(path)
    w = Vocabulary.load(path)
    assert w.token_to_id == v.token_to_id and w.merges == v.merges
    doc = "hello world " + START_PROT + "MIRLGAPQTL" + END_PROT
    assert encode(doc, w) == encode(doc, v)
    path.write_text(path.read_text().replace('"version": 1', '"version": 9'))
    with pytest.raises(TokenizerError, match="version"):
        Vocabulary.load(path)


# --- properties ---------------------------------------------------------------


def test_random_ascii_round_trip():
    v = train_bpe([bytes(range(32, 127)).decode() * 3, "the quick brown fox"], reserved_count() + 40)
    rng = random.Random(1)
    for _ in range(1000):
        doc = "".join(chr(rng.randint(0, 127)) for _ in range(rng.randint(0, 60)))
        assert decode(encode(doc, v), v) == doc


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=40))
def test_unicode_prose_round_trip(text):
    v = base_vocabulary()
    if "[" in text:
        text = text.replace("[", "(")
    ids = encode(text, v)
    assert decode(ids, v) == text
    assert encode(text, v) == ids


smiles_units = st.sampled_from(["C", "N", "O", "Cl", "Br", "c", "n", "(", ")", "=", "#", "1", "2", "[NH4+]"])


@settings(max_examples=200, deadline=None)
@given(st.lists(smiles_units, min_size=1, max_size=20), st.text(alphabet="MKLVAGST", min_size=1, max_size=30))
def test_entity_round_trip_and_atomicity(units, seq):
    v = base_vocabulary()
    mol = "".join(units)
    doc = "x " + START_MOL + mol + END_MOL + " and " + START_PROT + seq + END_PROT
    ids = encode(doc, v)
    assert decode(ids, v) == doc
    start = ids.index(v.token_to_id[START_MOL])
    end = ids.index(v.token_to_id[END_MOL])
    inner = ids[start + 1:end]
    assert all(v.is_reserved(i) for i in inner)
    assert "".join(v.surface(i) for i in inner) == mol
