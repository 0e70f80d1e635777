"""Command-line interface: corpus generation, training, parsing, evaluation,
and the analysis reports, all driven by flat dotted-key configs.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import analysis
from .encoder import EncoderVariant
from .lexical import LexicalConfig, LexicalMode
from .parser import ParserConfig, ParserModel, build_model, train
from .tensor import ConfigError, UsageError
from .treebank import (Sentence, TreebankError, bracket_f1, format_metrics,
                       generate_synthetic, read_bracketed, tree_spans,
                       write_bracketed)

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------

# key -> (parser, default).  Defaults reproduce the base model.
_DEFAULT = ParserConfig()
CONFIG_SCHEMA = {
    "data.train": (str, None),
    "data.dev": (str, None),
    "data.test": (str, None),
    "out": (str, "run"),
    "seed": (int, _DEFAULT.seed),
    "lexical.mode": (str, _DEFAULT.lexical.mode.value),
    "lexical.word_dim": (int, _DEFAULT.lexical.word_dim),
    "lexical.char_dim": (int, _DEFAULT.lexical.char_dim),
    "lexical.char_hidden": (int, _DEFAULT.lexical.char_hidden),
    "lexical.char_only_hidden": (int, _DEFAULT.lexical.char_only_hidden),
    "lexical.tag_dim": (int, _DEFAULT.lexical.tag_dim),
    "encoder.variant": (str, _DEFAULT.encoder.kind),
    "encoder.k": (int, _DEFAULT.encoder.k),
    "encoder.layers": (int, _DEFAULT.encoder.layers),
    "encoder.mult": (int, _DEFAULT.encoder.mult),
    "hidden": (int, _DEFAULT.hidden),
    "num_layers": (int, _DEFAULT.num_layers),
    "ffn_hidden": (int, _DEFAULT.ffn_hidden),
    "dropout": (float, _DEFAULT.dropout),
    "epochs": (int, _DEFAULT.epochs),
    "evals_per_epoch": (int, _DEFAULT.evals_per_epoch),
    "lr": (float, _DEFAULT.lr),
}


def parse_config_file(path: str) -> dict:
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in CONFIG_SCHEMA:
                raise UsageError(f"{path}:{lineno}: unknown config key '{key}'")
            values[key] = val
    return values


def resolve_config(file_values: dict, overrides: dict) -> dict:
    """Defaults <- config file <- command-line overrides, fully typed."""
    resolved = {}
    merged = dict(file_values)
    merged.update(overrides)
    for key, (cast, default) in CONFIG_SCHEMA.items():
        if key in merged:
            try:
                resolved[key] = cast(merged[key])
            except ValueError as e:
                raise UsageError(f"config key '{key}': {e}") from e
        else:
            resolved[key] = default
    return resolved


def to_parser_config(resolved: dict) -> ParserConfig:
    try:
        mode = LexicalMode(resolved["lexical.mode"])
    except ValueError:
        raise UsageError(f"unknown lexical.mode '{resolved['lexical.mode']}'; "
                         f"choose from {[m.value for m in LexicalMode]}")
    return ParserConfig(
        lexical=LexicalConfig(mode=mode,
                              word_dim=resolved["lexical.word_dim"],
                              char_dim=resolved["lexical.char_dim"],
                              char_hidden=resolved["lexical.char_hidden"],
                              char_only_hidden=resolved["lexical.char_only_hidden"],
                              tag_dim=resolved["lexical.tag_dim"]),
        encoder=EncoderVariant(kind=resolved["encoder.variant"],
                               k=resolved["encoder.k"],
                               layers=resolved["encoder.layers"],
                               mult=resolved["encoder.mult"]),
        hidden=resolved["hidden"], num_layers=resolved["num_layers"],
        ffn_hidden=resolved["ffn_hidden"], dropout=resolved["dropout"],
        epochs=resolved["epochs"],
        evals_per_epoch=resolved["evals_per_epoch"],
        lr=resolved["lr"], seed=resolved["seed"])


def collect_overrides(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise UsageError(f"override '{pair}' must be key=value")
        key, _, val = pair.partition("=")
        if key not in CONFIG_SCHEMA:
            raise UsageError(f"unknown config key '{key}'")
        out[key] = val
    return out


def write_atomic(path: str, text: str):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_resolved(path: str, resolved: dict):
    lines = [f"{k} = {resolved[k]}" for k in CONFIG_SCHEMA
             if resolved[k] is not None]
    write_atomic(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# corpus I/O
# ---------------------------------------------------------------------------

def load_corpus(path: str) -> list[Sentence]:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise TreebankError(f"cannot read corpus file {path}: {e}") from e
    return [Sentence(tree=t, words=w, tags=g)
            for (t, w, g) in read_bracketed(text)]


def dump_corpus(path: str, sentences: list[Sentence]):
    write_atomic(path, "".join(
        write_bracketed(s.tree, s.words, s.tags) + "\n" for s in sentences))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    sents = generate_synthetic(args.count, seed=args.seed)
    n_eval = args.count // 7
    n_train = args.count - 2 * n_eval
    os.makedirs(args.out, exist_ok=True)
    dump_corpus(os.path.join(args.out, "train.txt"), sents[:n_train])
    dump_corpus(os.path.join(args.out, "dev.txt"),
                sents[n_train:n_train + n_eval])
    dump_corpus(os.path.join(args.out, "test.txt"), sents[n_train + n_eval:])
    print(f"wrote {n_train}/{n_eval}/{n_eval} sentences to {args.out}")
    return 0


def _prepare_run(args, require_data=("data.train", "data.dev")):
    file_values = parse_config_file(args.config) if args.config else {}
    resolved = resolve_config(file_values, collect_overrides(args.override))
    for key in require_data:
        if resolved[key] is None:
            raise UsageError(f"config key '{key}' is required")
    run_dir = resolved["out"]
    os.makedirs(os.path.join(run_dir, "reports"), exist_ok=True)
    write_resolved(os.path.join(run_dir, "config.resolved"), resolved)
    return resolved, run_dir


def cmd_train(args) -> int:
    resolved, run_dir = _prepare_run(args)
    config = to_parser_config(resolved)
    train_corpus = load_corpus(resolved["data.train"])
    dev_corpus = load_corpus(resolved["data.dev"])
    model = build_model(config, train_corpus)
    log_path = os.path.join(run_dir, "log.tsv")
    lines = ["epoch\ttrain_loss\tdev_p\tdev_r\tdev_f1"]

    def log_row(row):
        lines.append(row.tsv())
        print(row.tsv())

    _, best = train(model, train_corpus, dev_corpus, log_fn=log_row)
    write_atomic(log_path, "\n".join(lines) + "\n")
    model.save(os.path.join(run_dir, "model.best"))
    print(f"best dev F1 {best:.4f}; model saved to {run_dir}/model.best")
    return 0


def _read_tagged_lines(args):
    with open(args.input) as fh:
        word_lines = [line.rstrip("\n") for line in fh]
    tag_lines = [None] * len(word_lines)
    if args.tags:
        with open(args.tags) as fh:
            tag_lines = [line.rstrip("\n") for line in fh]
        if len(tag_lines) != len(word_lines):
            raise UsageError("input and tag files have different line counts")
    return word_lines, tag_lines


def cmd_parse(args) -> int:
    model = ParserModel.load(args.model)
    word_lines, tag_lines = _read_tagged_lines(args)
    out = []
    for lineno, (wl, tl) in enumerate(zip(word_lines, tag_lines), 1):
        words = wl.split()
        if not words:
            print(f"warning: skipping empty line {lineno}", file=sys.stderr)
            continue
        tags = tl.split() if tl is not None else None
        if tags is not None and len(tags) != len(words):
            raise UsageError(f"line {lineno}: {len(words)} words but "
                             f"{len(tags)} tags")
        if args.independent:
            picked, valid = model.independent_spans(words, tags)
            body = " ".join(f"({s.i},{s.j},{s.label})" for s in picked)
            out.append(f"valid={'true' if valid else 'false'}\t{body}")
        else:
            res = model.parse(words, tags)
            out.append(write_bracketed(res.tree, words,
                                       tags if tags else ["XX"] * len(words)))
    text = "\n".join(out) + "\n"
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(args) -> int:
    gold = load_corpus(args.gold)
    pred = load_corpus(args.predicted)
    if len(gold) != len(pred):
        raise UsageError(f"sentence count mismatch: {len(gold)} gold vs "
                         f"{len(pred)} predicted")
    p, r, f1 = bracket_f1([s.tree for s in gold],
                          [tree_spans(s.tree) for s in pred])
    print(format_metrics(p, r, f1))
    return 0


def _report(run_dir: str, name: str, rows: list[dict]) -> int:
    path = os.path.join(run_dir, "reports", name)
    analysis.write_csv(path, rows)
    header = list(rows[0].keys())
    print(",".join(header))
    for row in rows:
        print(",".join(str(row[k]) for k in header))
    print(f"report written to {path}")
    return 0


def cmd_probe_parent(args) -> int:
    resolved, run_dir = _prepare_run(args)
    model = ParserModel.load(args.model)
    train_corpus = load_corpus(resolved["data.train"])
    dev_corpus = load_corpus(resolved["data.dev"])
    probe = analysis.parent_probe(model, train_corpus, dev_corpus,
                                  seed=resolved["seed"])
    majority = analysis.majority_baseline(train_corpus, dev_corpus)
    rows = [{"metric": "probe_dev_accuracy", "value": probe["dev_accuracy"]},
            {"metric": "probe_train_accuracy",
             "value": probe["train_accuracy"]},
            {"metric": "majority_dev_accuracy", "value": majority}]
    return _report(run_dir, "parent_probe.csv", rows)


def cmd_probe_wordfeat(args) -> int:
    resolved, run_dir = _prepare_run(args, require_data=())
    model = ParserModel.load(args.model)
    alphabet = {c for c in model.char_vocab.index if len(c) == 1}
    vocab = analysis.generate_feature_vocabulary(args.count,
                                                 resolved["seed"], alphabet)
    rows = analysis.word_feature_probe(model, vocab, seed=resolved["seed"])
    return _report(run_dir, "word_features.csv", rows)


def cmd_derivatives(args) -> int:
    resolved, run_dir = _prepare_run(args, require_data=("data.dev",))
    model = ParserModel.load(args.model)
    corpus = load_corpus(resolved["data.dev"])
    rows = analysis.derivative_by_distance(model, corpus,
                                           seed=resolved["seed"])
    return _report(run_dir, "derivatives.csv", rows)


def cmd_context_grid(args) -> int:
    resolved, run_dir = _prepare_run(args)
    config = to_parser_config(resolved)
    train_corpus = load_corpus(resolved["data.train"])
    dev_corpus = load_corpus(resolved["data.dev"])
    try:
        ks = tuple(int(k) for k in args.ks.split(",")) if args.ks \
            else analysis.DEFAULT_GRID_KS
        ffs = tuple(tuple(int(x) for x in cell.split(":"))
                    for cell in args.ff.split(",")) if args.ff \
            else analysis.DEFAULT_FF_CONFIGS
    except ValueError as e:
        raise UsageError(f"bad grid specification: {e}") from e
    rows = analysis.context_experiment(config, train_corpus, dev_corpus,
                                       ks=ks, ff_configs=ffs, jobs=args.jobs)
    return _report(run_dir, "context_grid.csv", rows)


def cmd_ablate_lexical(args) -> int:
    resolved, run_dir = _prepare_run(args)
    config = to_parser_config(resolved)
    train_corpus = load_corpus(resolved["data.train"])
    dev_corpus = load_corpus(resolved["data.dev"])
    rows = analysis.lexical_ablation(config, train_corpus, dev_corpus,
                                     jobs=args.jobs)
    return _report(run_dir, "lexical_ablation.csv", rows)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_config_args(sub):
    sub.add_argument("--config", help="flat dotted-key config file")
    sub.add_argument("--override", "-o", action="append", default=[],
                     metavar="KEY=VALUE",
                     help="override a config key (repeatable)")


def build_arg_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="spanparser",
        description="Span-based neural constituency parser and analysis suite")
    subs = ap.add_subparsers(dest="command", required=True)

    gen = subs.add_parser("gen", help="generate a synthetic corpus split")
    gen.add_argument("--seed", type=int, default=1)
    gen.add_argument("--count", type=int, default=700)
    gen.add_argument("--out", default="data")
    gen.set_defaults(fn=cmd_gen)

    tr = subs.add_parser("train", help="train a parser")
    _add_config_args(tr)
    tr.set_defaults(fn=cmd_train)

    pa = subs.add_parser("parse", help="parse tokenized sentences")
    pa.add_argument("--model", required=True)
    pa.add_argument("--input", required=True,
                    help="one space-tokenized sentence per line")
    pa.add_argument("--tags", help="aligned tag file (for tag-using modes)")
    pa.add_argument("--independent", action="store_true",
                    help="score spans independently; print span sets with "
                         "a validity flag instead of trees")
    pa.add_argument("--out", help="write output here instead of stdout")
    pa.set_defaults(fn=cmd_parse)

    ev = subs.add_parser("eval", help="score predicted trees against gold")
    ev.add_argument("--gold", required=True)
    ev.add_argument("--predicted", required=True)
    ev.set_defaults(fn=cmd_eval)

    pp = subs.add_parser("probe-parent",
                         help="parent-label probe vs majority baseline")
    pp.add_argument("--model", required=True)
    _add_config_args(pp)
    pp.set_defaults(fn=cmd_probe_parent)

    pw = subs.add_parser("probe-wordfeat",
                         help="word-feature probes on the char LSTM")
    pw.add_argument("--model", required=True)
    pw.add_argument("--count", type=int, default=2000,
                    help="synthetic vocabulary size")
    _add_config_args(pw)
    pw.set_defaults(fn=cmd_probe_wordfeat)

    dv = subs.add_parser("derivatives",
                         help="encoder output sensitivity by distance")
    dv.add_argument("--model", required=True)
    _add_config_args(dv)
    dv.set_defaults(fn=cmd_derivatives)

    cg = subs.add_parser("context-grid",
                         help="train the truncated/shuffled/feedforward grid")
    cg.add_argument("--jobs", type=int, default=1)
    cg.add_argument("--ks", help="comma-separated window sizes "
                                 "(default 2,3,5,10,20,30)")
    cg.add_argument("--ff", help="feedforward cells as k:layers:mult, "
                                 "comma-separated (default 3:{1,2,3}:{1,2,4})")
    _add_config_args(cg)
    cg.set_defaults(fn=cmd_context_grid)

    ab = subs.add_parser("ablate-lexical",
                         help="train all five lexical representation modes")
    ab.add_argument("--jobs", type=int, default=1)
    _add_config_args(ab)
    ab.set_defaults(fn=cmd_ablate_lexical)

    return ap


def main(argv=None) -> int:
    args = build_arg_parser().parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (TreebankError, FileNotFoundError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # pragma: no cover - defensive
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
