"""Command-line surface: ``cner <subcommand> [--config PATH] [--key value ...]``.

Subcommands cover the full pipeline: LM pretraining (pretrain-char,
pretrain-word), tagger training (train), prediction (predict), span-F1
scoring (eval), embedding export (embed), and corpus statistics (stats).
Every key can live in a config file or be passed as a flag; flags win.
Resolved configuration is echoed to stderr (and into training logs) so runs
are auditable.  Exit codes: 0 success, 1 runtime failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Callable, Sequence

from .char_lm import CharLMConfig, train_char_lm
from .config import (REQUIRED, ConfigError, Option, parse_config_file,
                     render_config, resolve)
from .corpus import (LabeledSentence, Sentence, TagSet, corpus_stats,
                     decode_utf8, parse_bio_file, render_stats_table,
                     stats_records, tokenize)
from .embeddings import build_stack, parse_stack_spec, stack_embed
from .evaluation import micro_f1, render_report, report_records
from .nn import EpochRecord, make_rng
from .tagger import TaggerTrainConfig, load_tagger, predict, train_tagger
from .word_lm import WordLMConfig, train_word_lm

_COMMON = [
    Option("seed", "int", 0, "RNG seed; recorded in every run log"),
    Option("figures", "bool", True, "render PNG figures next to logs/reports"),
]

_CHAR_LM_OPTIONS = [
    Option("corpus", "str", REQUIRED, "training text"),
    Option("dev", "str", REQUIRED, "held-out text for annealing"),
    Option("out", "str", REQUIRED, "checkpoint path to write"),
    Option("log", "str", None, "training log path (default: <out>.log)"),
    Option("corpus_format", "str", "text", "corpus file format: text | bio"),
    Option("hidden_size", "int", 2048),
    Option("sequence_length", "int", 250),
    Option("batch_size", "int", 100),
    Option("char_embed_dim", "int", 64),
    Option("lr", "float", 20.0),
    Option("anneal_factor", "float", 4.0),
    Option("patience", "int", 1),
    Option("max_epochs", "int", 100),
    Option("clip_norm", "float", 5.0),
    Option("lr_floor", "float", 1e-4),
    Option("min_count", "int", 1, "drop characters rarer than this"),
] + _COMMON

_WORD_LM_OPTIONS = [
    Option("corpus", "str", REQUIRED, "training text"),
    Option("dev", "str", REQUIRED, "held-out text for annealing"),
    Option("out", "str", REQUIRED, "checkpoint path to write"),
    Option("log", "str", None, "training log path (default: <out>.log)"),
    Option("corpus_format", "str", "text", "corpus file format: text | bio"),
    Option("hidden_size", "int", 2048),
    Option("projection_dim", "int", 256),
    Option("layers", "int", 2),
    Option("max_word_chars", "int", 50),
    Option("char_embed_dim", "int", 16),
    Option("cnn_filters", "str", "1:32,2:32,3:64,4:64,5:64",
           "width:count pairs, comma-separated"),
    Option("vocab_size", "int", 25000),
    Option("batch_size", "int", 32),
    Option("lr", "float", 1.0),
    Option("anneal_factor", "float", 4.0),
    Option("patience", "int", 1),
    Option("max_epochs", "int", 100),
    Option("clip_norm", "float", 5.0),
    Option("lr_floor", "float", 1e-4),
    Option("min_count", "int", 1, "drop characters rarer than this"),
] + _COMMON

_TRAIN_OPTIONS = [
    Option("train", "str", REQUIRED, "training BIO file"),
    Option("dev", "str", REQUIRED, "development BIO file"),
    Option("stack", "str", REQUIRED,
           "embedder stack spec, e.g. static:v.txt,char_lm:c.model"),
    Option("out", "str", REQUIRED, "checkpoint path to write"),
    Option("log", "str", None, "training log path (default: <out>.log)"),
    Option("lr", "float", 0.1),
    Option("anneal_factor", "float", 2.0),
    Option("batch_size", "int", 32),
    Option("max_epochs", "int", 100),
    Option("patience", "int", 3),
    Option("clip_norm", "float", 5.0),
    Option("dropout", "float", 0.5),
    Option("hidden_size", "int", 256),
    Option("lr_floor", "float", 1e-4),
] + _COMMON

_PREDICT_OPTIONS = [
    Option("model", "str", REQUIRED, "tagger checkpoint"),
    Option("input", "str", REQUIRED, "input file"),
    Option("input_format", "str", "bio", "input file format: bio | text"),
    Option("format", "str", "conll", "output format: conll | spans"),
    Option("out", "str", None, "output path (default: stdout)"),
] + _COMMON

_EVAL_OPTIONS = [
    Option("gold", "str", REQUIRED, "gold BIO file"),
    Option("pred", "str", None, "predicted BIO file (alternative to model)"),
    Option("model", "str", None, "tagger checkpoint to predict with"),
    Option("out", "str", None, "report path (default: stdout)"),
    Option("records", "str", None, "key-value records path"),
] + _COMMON

_EMBED_OPTIONS = [
    Option("stack", "str", REQUIRED, "embedder stack spec"),
    Option("input", "str", REQUIRED, "input file"),
    Option("input_format", "str", "bio", "input file format: bio | text"),
    Option("out", "str", None, "output path (default: stdout)"),
] + _COMMON

_STATS_OPTIONS = [
    Option("train", "str", None, "training BIO file"),
    Option("dev", "str", None, "development BIO file"),
    Option("test", "str", None, "test BIO file"),
    Option("out", "str", None, "table path (default: stdout)"),
    Option("records", "str", None, "key-value records path"),
] + _COMMON


def _require_file(resolved: dict, key: str) -> None:
    path = resolved[key]
    if path is None:
        return
    if not os.path.isfile(path):
        raise ConfigError(f"{key} file not found: {path}")


def _read_sentences(path: str, fmt: str) -> list[Sentence]:
    with open(path, "rb") as f:
        data = f.read()
    if fmt == "bio":
        return [ls.sentence for ls in parse_bio_file(data, path)]
    if fmt == "text":
        return tokenize(decode_utf8(data, path))
    raise ConfigError(f"input format must be 'bio' or 'text', got {fmt!r}")


def _read_labeled(path: str) -> list[LabeledSentence]:
    with open(path, "rb") as f:
        return parse_bio_file(f.read(), path)


def _write_output(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)


def _write_training_log(resolved: dict, records: Sequence[EpochRecord],
                        dev_label: str) -> str:
    log_path = resolved["log"] or resolved["out"] + ".log"
    lines = render_config(resolved) + [r.render() for r in records]
    with open(log_path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    if resolved["figures"] and records:
        from .figures import training_curves

        training_curves(records, log_path + ".png", dev_label)
    return log_path


def _check_stack_paths(spec: str) -> None:
    for member in parse_stack_spec(spec):
        if not os.path.isfile(member.path):
            raise ConfigError(
                f"stack member {member.kind}:{member.path}: file not found"
            )


def cmd_pretrain_char(resolved: dict) -> None:
    _require_file(resolved, "corpus")
    _require_file(resolved, "dev")
    corpus = _read_sentences(resolved["corpus"], resolved["corpus_format"])
    dev = _read_sentences(resolved["dev"], resolved["corpus_format"])
    config = CharLMConfig(
        hidden_size=resolved["hidden_size"],
        sequence_length=resolved["sequence_length"],
        batch_size=resolved["batch_size"],
        char_embed_dim=resolved["char_embed_dim"],
        lr=resolved["lr"], anneal_factor=resolved["anneal_factor"],
        patience=resolved["patience"], max_epochs=resolved["max_epochs"],
        clip_norm=resolved["clip_norm"], lr_floor=resolved["lr_floor"],
        min_count=resolved["min_count"],
    )
    _, records = train_char_lm(corpus, config, make_rng(resolved["seed"]), dev,
                               checkpoint_path=resolved["out"])
    log_path = _write_training_log(resolved, records, "dev nats/char")
    best = min(r.dev_metric for r in records)
    print(f"wrote {resolved['out']} (best dev {best:.4f} nats/char, "
          f"{len(records)} epochs, log {log_path})")


def _parse_filters(text: str) -> tuple[tuple[int, int], ...]:
    try:
        pairs = []
        for part in text.split(","):
            width, count = part.split(":")
            pairs.append((int(width), int(count)))
        return tuple(pairs)
    except ValueError:
        raise ConfigError(
            f"cnn_filters must be width:count pairs like '1:32,2:32', got {text!r}"
        ) from None


def cmd_pretrain_word(resolved: dict) -> None:
    _require_file(resolved, "corpus")
    _require_file(resolved, "dev")
    corpus = _read_sentences(resolved["corpus"], resolved["corpus_format"])
    dev = _read_sentences(resolved["dev"], resolved["corpus_format"])
    config = WordLMConfig(
        hidden_size=resolved["hidden_size"],
        projection_dim=resolved["projection_dim"],
        layers=resolved["layers"], max_word_chars=resolved["max_word_chars"],
        char_embed_dim=resolved["char_embed_dim"],
        cnn_filters=_parse_filters(resolved["cnn_filters"]),
        vocab_size=resolved["vocab_size"], batch_size=resolved["batch_size"],
        lr=resolved["lr"], anneal_factor=resolved["anneal_factor"],
        patience=resolved["patience"], max_epochs=resolved["max_epochs"],
        clip_norm=resolved["clip_norm"], lr_floor=resolved["lr_floor"],
        min_count=resolved["min_count"],
    )
    _, records = train_word_lm(corpus, config, make_rng(resolved["seed"]), dev,
                               checkpoint_path=resolved["out"])
    log_path = _write_training_log(resolved, records, "dev nats/token")
    best = min(r.dev_metric for r in records)
    print(f"wrote {resolved['out']} (best dev {best:.4f} nats/token, "
          f"{len(records)} epochs, log {log_path})")


def cmd_train(resolved: dict) -> None:
    _require_file(resolved, "train")
    _require_file(resolved, "dev")
    _check_stack_paths(resolved["stack"])
    train_data = _read_labeled(resolved["train"])
    dev_data = _read_labeled(resolved["dev"])
    stack = build_stack(resolved["stack"])
    tagset = TagSet.from_data(train_data)
    config = TaggerTrainConfig(
        lr=resolved["lr"], anneal_factor=resolved["anneal_factor"],
        batch_size=resolved["batch_size"], max_epochs=resolved["max_epochs"],
        patience=resolved["patience"], clip_norm=resolved["clip_norm"],
        dropout=resolved["dropout"], hidden_size=resolved["hidden_size"],
        lr_floor=resolved["lr_floor"], seed=resolved["seed"],
    )
    _, records = train_tagger(train_data, dev_data, stack, tagset, config,
                              checkpoint_path=resolved["out"])
    log_path = _write_training_log(resolved, records, "dev micro-F1")
    best = max(r.dev_metric for r in records)
    print(f"wrote {resolved['out']} (best dev F1 {100 * best:.2f}, "
          f"{len(records)} epochs, log {log_path})")


def cmd_predict(resolved: dict) -> None:
    _require_file(resolved, "model")
    _require_file(resolved, "input")
    out_format = resolved["format"]
    if out_format not in ("conll", "spans"):
        raise ConfigError(f"format must be 'conll' or 'spans', got {out_format!r}")
    model = load_tagger(resolved["model"])
    gold: list[LabeledSentence] | None = None
    if resolved["input_format"] == "bio":
        gold = _read_labeled(resolved["input"])
        sentences = [ls.sentence for ls in gold]
    else:
        sentences = _read_sentences(resolved["input"], resolved["input_format"])
    blocks = []
    for si, sentence in enumerate(sentences):
        tags, spans = predict(model, sentence)
        if out_format == "spans":
            blocks.append("\n".join(
                f"{si}\t{s.entity_type}\t{s.start}\t{s.end}" for s in spans))
        elif gold is not None:
            blocks.append("\n".join(
                f"{tok.text}\t{g}\t{p}" for tok, g, p
                in zip(sentence.tokens, gold[si].tags, tags)))
        else:
            blocks.append("\n".join(
                f"{tok.text}\t{p}" for tok, p in zip(sentence.tokens, tags)))
    text = "\n\n".join(blocks)
    _write_output(resolved["out"], text + "\n" if text else "")


def cmd_eval(resolved: dict) -> None:
    _require_file(resolved, "gold")
    if (resolved["pred"] is None) == (resolved["model"] is None):
        raise ConfigError("give exactly one of 'pred' (BIO file) or 'model' "
                          "(tagger checkpoint)")
    _require_file(resolved, "pred")
    _require_file(resolved, "model")
    gold_data = _read_labeled(resolved["gold"])
    if resolved["pred"] is not None:
        pred_tags = [list(ls.tags) for ls in _read_labeled(resolved["pred"])]
    else:
        model = load_tagger(resolved["model"])
        pred_tags = [predict(model, ls.sentence)[0] for ls in gold_data]
    report = micro_f1(gold_data, pred_tags)
    _write_output(resolved["out"], render_report(report) + "\n")
    if resolved["records"] is not None:
        _write_output(resolved["records"], "\n".join(report_records(report)) + "\n")
    if resolved["figures"] and resolved["out"] is not None:
        from .figures import f1_bars

        f1_bars(report, resolved["out"] + ".png")


def cmd_embed(resolved: dict) -> None:
    _require_file(resolved, "input")
    _check_stack_paths(resolved["stack"])
    stack = build_stack(resolved["stack"])
    sentences = _read_sentences(resolved["input"], resolved["input_format"])
    lines = [f"# dim={stack.total_dim}", f"# stack={resolved['stack']}"]
    for si, sentence in enumerate(sentences):
        if si:
            lines.append("")
        vectors = stack_embed(stack, sentence)
        for token, row in zip(sentence.tokens, vectors):
            values = " ".join(f"{float(v):.6g}" for v in row)
            lines.append(f"{token.text}\t{values}")
    _write_output(resolved["out"], "\n".join(lines) + "\n")


def cmd_stats(resolved: dict) -> None:
    columns = []
    for key in ("train", "dev", "test"):
        if resolved[key] is not None:
            _require_file(resolved, key)
            columns.append((key, corpus_stats(_read_labeled(resolved[key]))))
    if not columns:
        raise ConfigError("give at least one of 'train', 'dev', 'test'")
    _write_output(resolved["out"], render_stats_table(columns) + "\n")
    if resolved["records"] is not None:
        _write_output(resolved["records"], "\n".join(stats_records(columns)) + "\n")
    if resolved["figures"] and resolved["out"] is not None:
        from .figures import entity_bars

        entity_bars(columns, resolved["out"] + ".png")


_COMMANDS: dict[str, tuple[Callable[[dict], None], list[Option], str]] = {
    "pretrain-char": (cmd_pretrain_char, _CHAR_LM_OPTIONS,
                      "train the character-level bidirectional LM"),
    "pretrain-word": (cmd_pretrain_word, _WORD_LM_OPTIONS,
                      "train the word-level bidirectional LM"),
    "train": (cmd_train, _TRAIN_OPTIONS,
              "train the BiLSTM-CRF tagger over an embedder stack"),
    "predict": (cmd_predict, _PREDICT_OPTIONS,
                "tag sentences with a trained model"),
    "eval": (cmd_eval, _EVAL_OPTIONS, "span precision/recall/F1 report"),
    "embed": (cmd_embed, _EMBED_OPTIONS, "export per-token vectors"),
    "stats": (cmd_stats, _STATS_OPTIONS, "corpus statistics tables"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cner",
        description="Clinical NER: contextual-embedding LMs + BiLSTM-CRF tagger.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, options, help_text) in _COMMANDS.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", metavar="PATH",
                        help="config file of 'key = value' lines")
        for option in options:
            default = ("" if option.default in (None, REQUIRED)
                       else f" (default {option.default})")
            required = " [required]" if option.default is REQUIRED else ""
            sp.add_argument("--" + option.name.replace("_", "-"),
                            dest=option.name, metavar=option.kind.upper(),
                            default=None, help=option.help + default + required)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    handler, options, _ = _COMMANDS[args.command]
    try:
        file_values = parse_config_file(args.config) if args.config else {}
        overrides = {o.name: getattr(args, o.name) for o in options
                     if getattr(args, o.name) is not None}
        resolved = resolve(options, file_values, overrides)
        for line in render_config(resolved):
            print(line, file=sys.stderr)
        handler(resolved)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
