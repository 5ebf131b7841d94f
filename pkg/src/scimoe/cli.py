"""Command-line entry point: ``scimoe <command> ...``.

Exit codes: 0 success, 1 error raised while running, 2 usage error
(bad flags, missing inputs, refusing to overwrite outputs).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import synth
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig, preset
from .model import MoETransformer
from .tokenizer import Vocabulary, base_vocabulary, decode, encode, train_bpe
from .train import TrainConfig, train, write_history

log = logging.getLogger("scimoe")

TRAIN_PRESETS = {
    # toy scale needs a larger peak rate than the 3e-4 used at full scale
    "tiny": TrainConfig(lr_init=3e-3, total_steps=500, batch_tokens=256),
    "table1": TrainConfig(lr_init=3e-4, total_steps=1000, batch_tokens=4 * 1024 * 1024, seq_len=8192),
}


class UsageError(Exception):
    pass


# --- helpers ----------------------------------------------------------------


def _existing(path: str | None, flag: str) -> Path:
    if path is None:
        raise UsageError(f"{flag} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{flag}: no such file or directory: {path}")
    return p


def _claim_output(path: str, force: bool, is_dir: bool) -> Path:
    p = Path(path)
    if p.exists():
        if not force:
            raise UsageError(f"--out: {path} already exists (pass --force to overwrite)")
        if is_dir and p.is_dir():
            shutil.rmtree(p)
    if is_dir:
        p.mkdir(parents=True, exist_ok=True)
    else:
        p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, data: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
    os.replace(tmp, path)


class RunManifest:
    """Written before any output, then rewritten with artifact checksums."""

    def __init__(self, path: Path, command: str, config: dict):
        self.path = path
        self.data = {"command": command, "config": config, "artifacts": {}}
        _write_json(path, self.data)

    def finish(self, artifacts: dict[str, Path]) -> None:
        base = self.path.parent
        self.data["artifacts"] = {
            name: {"path": os.path.relpath(p, base), "sha256": _sha256(p)} for name, p in sorted(artifacts.items())
        }
        _write_json(self.path, self.data)


def _load_vocab(path: str | None, fallback: Path | None = None) -> Vocabulary:
    if path is None and fallback is not None and fallback.exists():
        return Vocabulary.load(fallback)
    return Vocabulary.load(_existing(path, "--vocab"))


# --- tokenizer ----------------------------------------------------------------


def cmd_tokenizer(args) -> int:
    if args.action == "train":
        corpus = [_existing(p, "--corpus").read_text(encoding="utf-8") for p in args.corpus]
        out = _claim_output(args.out, args.force, is_dir=False)
        manifest = RunManifest(
            out.with_name(out.name + ".run.json"),
            "tokenizer train",
            {"corpus": args.corpus, "size": args.size, "out": args.out},
        )
        vocab = train_bpe(corpus, args.size)
        vocab.save(out)
        manifest.finish({"vocab": out})
        print(f"wrote {vocab.size}-token vocabulary to {out}")
        return 0

    vocab = _load_vocab(args.vocab)
    src = _existing(args.input, "--input")
    out = _claim_output(args.out, args.force, is_dir=False)
    manifest = RunManifest(
        out.with_name(out.name + ".run.json"),
        f"tokenizer {args.action}",
        {"vocab": args.vocab, "input": args.input, "out": args.out},
    )
    if args.action == "encode":
        ids = encode(src.read_text(encoding="utf-8"), vocab)
        out.write_text(" ".join(map(str, ids)) + "\n")
    else:
        ids = [int(t) for t in src.read_text().split()]
        out.write_text(decode(ids, vocab), encoding="utf-8")
    manifest.finish({args.action + "d": out})
    return 0


# --- training -----------------------------------------------------------------


def resolve_configs(args, vocab_size: int) -> tuple[str, ModelConfig, TrainConfig]:
    file_cfg = {}
    if args.config:
        file_cfg = json.loads(_existing(args.config, "--config").read_text())
        file_cfg = file_cfg.get("config", file_cfg)  # a previous run manifest works too
    name = args.preset or file_cfg.get("preset") or "tiny"
    model_cfg = preset(name)
    model_cfg = ModelConfig.from_dict({**model_cfg.to_dict(), **file_cfg.get("model", {}), "vocab_size": vocab_size})
    train_cfg = TRAIN_PRESETS.get(name, TrainConfig())
    train_cfg = TrainConfig.from_dict({**train_cfg.to_dict(), **file_cfg.get("train", {})})
    changes = {}
    if args.steps is not None:
        changes["total_steps"] = args.steps
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.lr is not None:
        changes["lr_init"] = args.lr
    if changes.get("total_steps") == 0:
        changes["warmup_steps"] = 0
    return name, model_cfg, replace(train_cfg, **changes)


def cmd_train(args) -> int:
    vocab = _load_vocab(args.vocab) if args.vocab else base_vocabulary()
    if args.corpus:
        text = _existing(args.corpus, "--corpus").read_text(encoding="utf-8")
    else:
        text = synth.pattern_text()
    name, model_cfg, train_cfg = resolve_configs(args, vocab.size)
    out = _claim_output(args.out, args.force, is_dir=True)
    manifest = RunManifest(
        out / "run.json",
        "train",
        {
            "preset": name,
            "model": model_cfg.to_dict(),
            "train": train_cfg.to_dict(),
            "corpus": args.corpus or "builtin:pattern",
            "vocab": args.vocab or "builtin:base",
        },
    )
    tokens = encode(text, vocab)
    model = MoETransformer(model_cfg, seed=train_cfg.seed)
    result = train(model, tokens, train_cfg)
    vocab.save(out / "vocab.json")
    ckpt = save_checkpoint(out / "checkpoint", model, step=result.steps)
    write_history(out / "history.tsv", result.history)
    manifest.finish({
        "history": out / "history.tsv",
        "vocab": out / "vocab.json",
        "checkpoint_manifest": ckpt / "manifest.json",
        "checkpoint_weights": ckpt / "weights.bin",
    })
    if result.history:
        last = result.history[-1]
        print(f"{result.steps} steps, final lm_loss {last.lm_loss:.4f}, aux_loss {last.aux_loss:.4f}")
    else:
        print("0 steps; checkpoint holds the initial weights")
    return 0


# --- generation ---------------------------------------------------------------


def _checkpoint_dir(path: str) -> Path:
    p = _existing(path, "--checkpoint")
    return p / "checkpoint" if (p / "checkpoint" / "manifest.json").exists() else p


def cmd_generate(args) -> int:
    ckpt = _checkpoint_dir(args.checkpoint)
    model, _ = load_checkpoint(ckpt)
    vocab = _load_vocab(args.vocab, ckpt.parent / "vocab.json")
    ids = encode(args.prompt, vocab)
    out = model.generate(ids, args.max_tokens)
    sys.stdout.write(decode(out, vocab) + "\n")
    return 0


# --- analysis -----------------------------------------------------------------


def read_labeled_corpus(root: Path) -> list[tuple[str, str]]:
    docs = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        for f in sorted(p for p in sub.iterdir() if p.is_file()):
            docs.append((sub.name, f.read_text(encoding="utf-8")))
    return docs


def cmd_analyze(args) -> int:
    from .lens import cluster_report, collect_profiles, emit_plot, profile_matrix, tsne_reduce
    from .lens.profiles import write_profiles, write_table

    ckpt = _checkpoint_dir(args.checkpoint)
    corpus_dir = _existing(args.corpus, "--corpus")
    model, _ = load_checkpoint(ckpt)
    vocab = _load_vocab(args.vocab, ckpt.parent / "vocab.json")
    docs = read_labeled_corpus(corpus_dir)
    labels_found = sorted({label for label, _ in docs})
    if len(labels_found) < 2:
        raise ValueError(f"need at least 2 label directories under {corpus_dir}, found {labels_found}")
    out = _claim_output(args.out, args.force, is_dir=True)
    manifest = RunManifest(
        out / "run.json",
        "analyze",
        {
            "checkpoint": str(args.checkpoint),
            "corpus": str(args.corpus),
            "reducer": args.reducer,
            "perplexity": args.perplexity,
            "iterations": args.iterations,
            "seed": args.seed,
            "normalize": args.normalize,
        },
    )
    profiles, skipped = collect_profiles(model, vocab, docs, normalize=args.normalize)
    labels = [p.label for p in profiles]
    X = profile_matrix(profiles)
    artifacts = {"profiles": out / "profiles.tsv"}
    write_profiles(artifacts["profiles"], profiles)

    embedding = None
    if args.reducer == "tsne":
        res = tsne_reduce(X, perplexity=args.perplexity, iterations=args.iterations, seed=args.seed)
        embedding = res.coords
        artifacts["embedding"] = out / "embedding.tsv"
        write_table(artifacts["embedding"], labels, embedding, ["x", "y", "z"])
        artifacts["plot"] = out / "plot.svg"
        emit_plot(embedding, labels, artifacts["plot"], title="expert-choice profiles (t-SNE)")

    report = cluster_report(X, labels, embedding)
    summary = report.to_dict()
    summary["silhouette_space"] = "tsne" if embedding is not None else "profiles"
    summary["skipped_empty"] = skipped
    artifacts["report"] = out / "report.json"
    _write_json(artifacts["report"], summary)
    manifest.finish(artifacts)
    print(
        f"{len(profiles)} profiles, {len(report.labels)} labels: "
        f"intra {report.mean_intra:.4f} inter {report.mean_inter:.4f} silhouette {report.silhouette:.3f}"
    )
    return 0


# --- synthetic corpora --------------------------------------------------------


def cmd_synth(args) -> int:
    if args.kind == "labeled":
        out = _claim_output(args.out, args.force, is_dir=True)
        synth.write_labeled_corpus(out, per_label=args.per_label, seed=args.seed)
    else:
        out = _claim_output(args.out, args.force, is_dir=False)
        text = synth.pattern_text() if args.kind == "pattern" else synth.mixed_text(n_docs=args.n_docs, seed=args.seed)
        out.write_text(text, encoding="utf-8")
    print(f"wrote {args.kind} corpus to {out}")
    return 0


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scimoe", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    tok = sub.add_parser("tokenizer", help="train, encode or decode with the scientific tokenizer")
    tsub = tok.add_subparsers(dest="action", required=True)
    t_train = tsub.add_parser("train")
    t_train.add_argument("--corpus", nargs="+", required=True)
    t_train.add_argument("--size", type=int, required=True)
    t_train.add_argument("--out", required=True)
    t_train.add_argument("--force", action="store_true")
    for action in ("encode", "decode"):
        p = tsub.add_parser(action)
        p.add_argument("--vocab", required=True)
        p.add_argument("--input", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--force", action="store_true")

    tr = sub.add_parser("train", help="train a model on a text corpus")
    tr.add_argument("--preset", choices=sorted(TRAIN_PRESETS))
    tr.add_argument("--config", help="JSON with optional preset/model/train sections (a run.json works)")
    tr.add_argument("--corpus", help="plain-text corpus; defaults to the built-in abab pattern")
    tr.add_argument("--vocab", help="vocabulary file; defaults to the merge-free base vocabulary")
    tr.add_argument("--steps", type=int)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--out", required=True)
    tr.add_argument("--force", action="store_true")

    gen = sub.add_parser("generate", help="greedy continuation of a prompt")
    gen.add_argument("--checkpoint", required=True)
    gen.add_argument("--vocab")
    gen.add_argument("--prompt", required=True)
    gen.add_argument("--max-tokens", type=int, default=16)

    an = sub.add_parser("analyze", help="expert-choice profiles, t-SNE, report and plot")
    an.add_argument("--checkpoint", required=True)
    an.add_argument("--vocab")
    an.add_argument("--corpus", required=True, help="directory with one subdirectory per label")
    an.add_argument("--out", required=True)
    an.add_argument("--reducer", choices=("tsne", "none"), default="tsne")
    an.add_argument("--perplexity", type=float, help="defaults to 30, capped at (n-1)/3")
    an.add_argument("--iterations", type=int, default=1000)
    an.add_argument("--seed", type=int, default=0)
    an.add_argument("--normalize", action="store_true", help="mean instead of sum over tokens")
    an.add_argument("--force", action="store_true")

    sy = sub.add_parser("synth", help="write a synthetic corpus")
    sy.add_argument("kind", choices=("pattern", "mixed", "labeled"))
    sy.add_argument("--out", required=True)
    sy.add_argument("--per-label", type=int, default=100)
    sy.add_argument("--n-docs", type=int, default=2000)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--force", action="store_true")
    return parser


COMMANDS = {
    "tokenizer": cmd_tokenizer,
    "train": cmd_train,
    "generate": cmd_generate,
    "analyze": cmd_analyze,
    "synth": cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"scimoe: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # surfaced as exit 1 with the message, no traceback
        if args.verbose:
            raise
        print(f"scimoe: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
