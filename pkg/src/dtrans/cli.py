"""Command-line entry point: ``dtrans <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import plots
from .attention import ConfigError
from .codeprep import (
    LexError, TokenizedExample, UnresolvedIdError, Vocabulary, abstract, build_vocab, deabstract,
    load_idioms, tokenize,
)
from .config import RunConfig, load_config
from .data import SPLITS, read_split, write_split
from .decode import beam_search
from .metrics import evaluate
from .model import Transformer
from .stmtmask import format_mask, mask_bench, mask_from_tokens
from .train import Trainer

log = logging.getLogger("dtrans")


class VocabMismatchError(ckpt.VersionError):
    pass


class CliError(RuntimeError):
    pass


def worker_count() -> int:
    cap = os.environ.get("DTRANS_THREADS")
    n = os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return n


# -- argument parsing -------------------------------------------------------

def _common(p: argparse.ArgumentParser, *names: str) -> None:
    flags = {
        "config": dict(type=str, help="flat JSON config file"),
        "mode": dict(choices=["absolute", "relative", "dtrans"], help="position encoding (default dtrans)"),
        "layers": dict(type=int, help="encoder/decoder blocks (default 6)"),
        "heads": dict(type=int, help="attention heads (default 8)"),
        "d_model": dict(type=int, help="hidden size (default 512)"),
        "d_ff": dict(type=int, help="feed-forward size (default 2048)"),
        "k": dict(type=int, help="relative clipping distance (default 32)"),
        "dropout": dict(type=float, help="dropout rate (default 0.1)"),
        "beam": dict(type=int, help="beam size (default 10)"),
        "seed": dict(type=int, help="random seed (default 0)"),
        "checkpoint": dict(type=str, help="checkpoint path"),
        "out": dict(type=str, help="output path or directory"),
        "data": dict(type=str, help="dataset directory with <split>.src/.tgt"),
        "batch_size": dict(type=int, help="mini-batch size (default 32)"),
        "max_steps": dict(type=int, help="maximum optimiser steps (default 20000)"),
        "patience": dict(type=int, help="early-stop patience in steps (default 2000)"),
        "warmup": dict(type=int, help="warm-up steps (default 4000)"),
        "lr_factor": dict(type=float, help="learning-rate factor (default 1.0)"),
        "valid_interval": dict(type=int, help="steps between validations (default 100)"),
        "max_decode_len": dict(type=int, help="decoding length cap (default 200)"),
        "idioms": dict(type=str, help="idiom file, one lexeme per line"),
    }
    for name in names:
        p.add_argument("--" + name.replace("_", "-"), dest=name, default=None, **flags[name])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dtrans",
        description="Statement-aware transformer for code-edit prediction.",
        epilog="Defaults come from the built-in config, then --config, then explicit flags. "
               "DTRANS_THREADS caps worker threads used by eval/predict.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("abstract", help="lex + abstract raw code lines")
    p.add_argument("--input", required=True, help="raw dataset directory or a single file")
    _common(p, "out", "idioms")

    p = sub.add_parser("mask", help="print the statement mask of a snippet")
    p.add_argument("snippet", nargs="?", help="code snippet (reads stdin when omitted)")
    p.add_argument("--png", help="also render the mask as an image")

    p = sub.add_parser("train", help="train a model")
    _common(p, "config", "data", "out", "mode", "layers", "heads", "d_model", "d_ff", "k",
            "dropout", "seed", "batch_size", "max_steps", "patience", "warmup", "lr_factor",
            "valid_interval", "idioms")
    p.add_argument("--raw", action="store_true", default=None, help="dataset holds raw code")
    p.add_argument("--resume", help="resume from a checkpoint carrying training state")
    p.add_argument("--synthetic", action="store_true",
                   help="write the bundled synthetic corpus to --data first")

    p = sub.add_parser("eval", help="decode a split and score it")
    _common(p, "config", "data", "checkpoint", "out", "beam", "max_decode_len", "mode", "idioms")
    p.add_argument("--split", default="test")
    p.add_argument("--vocab", help="vocabulary file that must match the checkpoint")
    p.add_argument("--raw", action="store_true", default=None)
    p.add_argument("--match-any-of-beam", dest="match_any_of_beam", action="store_true", default=None)

    p = sub.add_parser("predict", help="decode lines of a file")
    _common(p, "config", "checkpoint", "out", "beam", "max_decode_len", "mode", "idioms")
    p.add_argument("--input", required=True)
    p.add_argument("--top-b", action="store_true", help="emit all beam hypotheses with scores")
    p.add_argument("--maps", help="abstraction maps (JSON lines) for deabstraction")
    p.add_argument("--raw", action="store_true", default=None)

    p = sub.add_parser("gradcheck", help="finite-difference check of a tiny model")
    _common(p, "mode", "seed", "out")

    p = sub.add_parser("bench-mask", help="time nested-loop vs matrix statement masks")
    p.add_argument("--n", type=int, nargs="+", default=[512])
    p.add_argument("--trials", type=int, default=100)
    _common(p, "seed", "out")

    p = sub.add_parser("synth", help="write the synthetic rename-refactor corpus")
    _common(p, "out", "seed")
    p.add_argument("--train", type=int, default=64)
    p.add_argument("--valid", type=int, default=16)
    p.add_argument("--test", type=int, default=16)
    return parser


CONFIG_KEYS = {f for f in RunConfig.__dataclass_fields__}


def run_config(args: argparse.Namespace) -> RunConfig:
    overrides = {k: v for k, v in vars(args).items() if k in CONFIG_KEYS and k != "config"}
    return load_config(getattr(args, "config", None), overrides)


# -- commands ---------------------------------------------------------------

def cmd_abstract(args) -> int:
    src = Path(args.input)
    out = Path(args.out or "abstracted")
    idioms = load_idioms(args.idioms)
    if src.is_file():
        out.parent.mkdir(parents=True, exist_ok=True)
        lines, maps = [], []
        for lineno, line in enumerate(src.read_text(encoding="utf-8").splitlines(), 1):
            try:
                toks, amap = abstract(tokenize(line), idioms)
            except LexError as exc:
                log.warning("line %d skipped: %s", lineno, exc)
                continue
            lines.append(" ".join(toks) + "\n")
            maps.append(amap.to_json() + "\n")
        out.write_text("".join(lines), encoding="utf-8")
        Path(str(out) + ".map").write_text("".join(maps), encoding="utf-8")
        return 0
    found = False
    for split in SPLITS:
        if (src / f"{split}.src").exists():
            found = True
            write_split(out, split, read_split(src, split, raw=True, idioms=idioms), with_maps=True)
    if not found:
        raise CliError(f"{src}: no <split>.src files found")
    return 0


def cmd_mask(args) -> int:
    snippet = args.snippet if args.snippet is not None else sys.stdin.read()
    tokens = [t.text for t in tokenize(snippet)]
    mask = mask_from_tokens(tokens)
    if mask.size:
        print(format_mask(mask))
    if args.png:
        plots.statement_mask(mask, tokens, args.png)
    return 0


def _load_examples(cfg: RunConfig, split: str) -> list[TokenizedExample]:
    if not cfg.data:
        raise ConfigError("--data is required")
    return read_split(cfg.data, split, raw=cfg.raw, idioms=load_idioms(cfg.idioms))


def cmd_train(args) -> int:
    cfg = run_config(args)
    out = Path(cfg.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    if args.synthetic:
        from .synthetic import write_corpus

        if not cfg.data:
            cfg.data = str(out / "data")
        write_corpus(cfg.data, seed=cfg.seed)
    train = _load_examples(cfg, "train")
    valid = _load_examples(cfg, "valid")
    if not train or not valid:
        raise ValueError("train and valid splits must be non-empty")
    if args.resume:
        trainer = Trainer.resume(args.resume, train, valid, cfg.train_config())
        vocab = trainer.vocab
    else:
        vocab = build_vocab(train, cfg.min_count)
        model = Transformer(cfg.model_config(len(vocab)), seed=cfg.seed)
        trainer = Trainer(model, vocab, train, valid, cfg.train_config())
    vocab.save(out / "vocab.txt")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    log_path = out / "train_log.jsonl"
    if not args.resume and log_path.exists():
        log_path.unlink()
    result = trainer.run(log_path=log_path, best_path=out / "best.ckpt", last_path=out / "last.ckpt",
                         on_record=lambda r: log.info(json.dumps(r)))
    history = [json.loads(l) for l in log_path.read_text().splitlines()]
    plots.training_curves(history, out / "train_curves.png", title=f"{cfg.mode} mode")
    summary = {"best_step": result.best_step, "best_val_loss": result.best_val_loss,
               "last_step": result.last_step, "stopped_early": result.stopped_early}
    print(json.dumps(summary))
    return 0


def _load_checkpoint(cfg: RunConfig, explicit_mode: str | None) -> ckpt.Checkpoint:
    if not cfg.checkpoint:
        raise ConfigError("--checkpoint is required")
    bundle = ckpt.load(cfg.checkpoint)
    if explicit_mode and explicit_mode != bundle.config.mode:
        raise ConfigError(f"--mode {explicit_mode} conflicts with checkpoint mode {bundle.config.mode}")
    return bundle


def _decode_all(model: Transformer, vocab: Vocabulary, sources: list[list[str]], cfg: RunConfig):
    def one(tokens):
        stmt = mask_from_tokens(tokens) if model.config.mode == "dtrans" else None
        ids = vocab.encode(tokens)
        hyps = beam_search(model, ids, stmt, beam=cfg.beam, max_len=cfg.max_decode_len,
                           alpha=cfg.length_penalty)
        return [(vocab.decode(h.tokens), h.score) for h in hyps]

    workers = worker_count()
    if workers == 1 or len(sources) < 2:
        return [one(s) for s in sources]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, sources))


def cmd_eval(args) -> int:
    cfg = run_config(args)
    bundle = _load_checkpoint(cfg, args.mode)
    if args.vocab and Vocabulary.load(args.vocab) != bundle.vocab:
        raise VocabMismatchError(f"{args.vocab} does not match the vocabulary stored in {cfg.checkpoint}")
    examples = _load_examples(cfg, args.split)
    model = bundle.model()
    results = _decode_all(model, bundle.vocab, [e.src for e in examples], cfg)
    preds = [r[0][0] if r else [] for r in results]
    any_of = [[h for h, _ in r] for r in results] if cfg.match_any_of_beam else None
    report = evaluate([e.src for e in examples], preds, [e.tgt for e in examples],
                      beta=cfg.rouge_beta, any_of=any_of)
    out = Path(cfg.out or Path(cfg.checkpoint).parent)
    out.mkdir(parents=True, exist_ok=True)
    d = report.to_dict()
    d.update({"split": args.split, "beam": cfg.beam, "mode": bundle.config.mode,
              "match_any_of_beam": cfg.match_any_of_beam})
    (out / f"eval_{args.split}.json").write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")
    (out / f"eval_{args.split}.txt").write_text(report.table() + "\n")
    with open(out / f"pred_{args.split}.tsv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["index", "exact_match", "prediction", "gold"])
        for i, (p, e) in enumerate(zip(preds, examples)):
            w.writerow([i, int(p == e.tgt), " ".join(p), " ".join(e.tgt)])
    plots.eval_summary(d, out / f"eval_{args.split}.png")
    print(report.table())
    return 0


def cmd_predict(args) -> int:
    cfg = run_config(args)
    bundle = _load_checkpoint(cfg, args.mode)
    idioms = load_idioms(cfg.idioms)
    lines = Path(args.input).read_text(encoding="utf-8").splitlines()
    maps = None
    if args.maps:
        from .codeprep import AbstractionMap

        maps = [AbstractionMap.from_json(l) for l in Path(args.maps).read_text().splitlines()]
    sources = []
    for line in lines:
        if cfg.raw:
            toks, amap = abstract(tokenize(line), idioms)
            sources.append(toks)
            if maps is None:
                maps = []
            maps.append(amap)
        else:
            sources.append(line.split())
    results = _decode_all(bundle.model(), bundle.vocab, sources, cfg)
    out_lines = []
    for i, hyps in enumerate(results):
        chosen = hyps if args.top_b else hyps[:1]
        for rank, (toks, score) in enumerate(chosen):
            text = " ".join(toks)
            if maps is not None:
                try:
                    text = deabstract(toks, maps[i])
                except UnresolvedIdError as exc:
                    log.warning("line %d: %s", i + 1, exc)
            out_lines.append(f"{i}\t{rank}\t{score:.6f}\t{text}" if args.top_b else text)
    payload = "\n".join(out_lines) + ("\n" if out_lines else "")
    if cfg.out:
        Path(cfg.out).write_text(payload, encoding="utf-8")
    else:
        sys.stdout.write(payload)
    return 0


def gradcheck_report(modes=("absolute", "relative", "dtrans"), seed: int = 0) -> dict:
    """Finite-difference check of the tiny acceptance configuration."""
    from . import tensor as T
    from .codeprep import RESERVED
    from .data import make_batch
    from .model import ModelConfig

    vocab = Vocabulary(list(RESERVED) + ["int", "VAR_1", "VAR_2", "=", ";", "(", ")", "METHOD_1"])
    examples = [
        TokenizedExample("int VAR_1 = METHOD_1 ( VAR_2 ) ;".split(), "int VAR_2 = METHOD_1 ( VAR_1 ) ;".split()),
        TokenizedExample("VAR_1 = VAR_2 ; VAR_2 = VAR_1 ;".split(), "VAR_2 = VAR_1 ;".split()),
    ]
    batch = make_batch(examples, vocab)
    out = {}
    for mode in modes:
        cfg = ModelConfig(mode=mode, layers=1, heads=2, d_model=8, d_ff=16, k=2, vocab_size=len(vocab),
                          dropout=0.0, max_len=64)
        model = Transformer(cfg, seed=seed)
        rng = np.random.default_rng(seed + 1)
        # move off the zero/identity initialisation so every path carries signal
        for p in model.parameters():
            p.data += rng.uniform(-0.5, 0.5, p.shape)
        out[mode] = T.check_gradients(lambda: model.forward_loss(batch), model.parameters())
    return out


def cmd_gradcheck(args) -> int:
    modes = [args.mode] if args.mode else ["absolute", "relative", "dtrans"]
    report = gradcheck_report(modes, seed=args.seed or 0)
    text = json.dumps({m: r["max_rel_err"] for m, r in report.items()}, indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return 0 if all(r["max_rel_err"] < 1e-4 for r in report.values()) else 1


def cmd_bench_mask(args) -> int:
    rows = [mask_bench(n, args.trials, seed=args.seed or 0) for n in args.n]
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bench_mask.csv", "w", newline="") as fh:
            cw = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            cw.writeheader()
            cw.writerows(rows)
        plots.bench(rows, out / "bench_mask.png")
    return 0


def cmd_synth(args) -> int:
    from .synthetic import write_corpus

    write_corpus(args.out or "synthetic", args.train, args.valid, args.test, seed=args.seed or 0)
    return 0


COMMANDS = {
    "abstract": cmd_abstract, "mask": cmd_mask, "train": cmd_train, "eval": cmd_eval,
    "predict": cmd_predict, "gradcheck": cmd_gradcheck, "bench-mask": cmd_bench_mask,
    "synth": cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ckpt.CheckpointError, LexError, UnresolvedIdError, ValueError,
            FileNotFoundError, IndexError, CliError, FloatingPointError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
