"""Batch command-line front end.

Six subcommands cover the pipeline: ``split`` re-partitions a corpus and
writes a manifest, ``train`` fits a model and writes a checkpoint plus an
epoch history, ``predict`` writes span predictions, ``eval`` scores
predictions into reports, ``inspect`` dumps one utterance's potential
tables as CSV, and ``gradcheck`` verifies analytic gradients against
finite differences.

Every flag can also come from a ``--config`` JSON object (keys named like
the flags, dashes as underscores); explicit flags win. All randomness
flows from ``--seed``, and artifact writers are deterministic, so a
repeated invocation overwrites its outputs byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .baselines import BaselineError
from .dataset import (
    CorpusError, SplitError, Utterance, build_validation, parse_dialogues,
    pooled_values, read_manifest, select_by_ids, split_cross_domain,
    split_in_domain, write_manifest,
)
from .embeddings import EmbeddingError, build_vocabulary, load_pretrained
from .evaluation import (
    EvaluationError, aggregate, conflict_count, read_predictions,
    score_cross_domain, score_values, write_predictions, write_report,
    write_report_csv,
)
from .models import (
    EcrfModel, ModelConfig, ModelError, create_model, load_checkpoint,
    save_checkpoint,
)
from .slot_encoder import LabelSet, SchemaError, SlotSchema, load_schemas
from .training import (
    TrainConfig, TrainingError, train_baseline, train_ecrf, write_history,
)


class CliError(Exception):
    pass


_ERRORS = (
    CliError, CorpusError, SplitError, SchemaError, EmbeddingError,
    BaselineError, ModelError, TrainingError, EvaluationError,
    ad.AutodiffError, OSError, ValueError,
)

_TRAIN_FIELDS = (
    "learning_rate", "beta1", "beta2", "epsilon", "pretrain_steps",
    "crf_batch_size", "tagger_batch_size", "max_epochs", "patience",
    "unk_probability",
)
_MODEL_FIELDS = (
    "word_dim", "tag_dim", "hidden_size", "label_dim", "fc_hidden", "fnn_hidden",
)


def _merged(args: argparse.Namespace, defaults: dict) -> dict:
    """Built-in defaults, overlaid by --config JSON, overlaid by flags."""
    out = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            try:
                loaded = json.load(fh)
            except json.JSONDecodeError as err:
                raise CliError(f"{config_path}: {err}") from None
        if not isinstance(loaded, dict):
            raise CliError(f"{config_path}: config must be a JSON object")
        for key, value in loaded.items():
            if key not in defaults:
                raise CliError(f"{config_path}: unknown config key '{key}'")
            out[key] = value
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    return out


def _require(opts: dict, key: str) -> object:
    if opts.get(key) in (None, [], ""):
        raise CliError(f"missing required flag --{key.replace('_', '-')}")
    return opts[key]


def _load_corpora(entries: Sequence[str]) -> list[Utterance]:
    utterances: list[Utterance] = []
    seen_domains: set[str] = set()
    for entry in entries:
        if "=" in entry:
            domain, path = entry.split("=", 1)
        else:
            path = entry
            domain = os.path.splitext(os.path.basename(path))[0]
        if domain in seen_domains:
            raise CliError(f"domain '{domain}' given more than once")
        seen_domains.add(domain)
        utterances.extend(parse_dialogues(path, domain))
    ids = [u.id for u in utterances]
    if len(set(ids)) != len(ids):
        raise CliError("utterance ids collide across corpus files")
    if not utterances:
        raise CliError("no utterances found in the given corpora")
    return utterances


def _outdir(opts: dict) -> str:
    out = str(_require(opts, "out"))
    os.makedirs(out, exist_ok=True)
    return out


def _train_config(opts: dict) -> TrainConfig:
    ratio = opts["oversample_ratio"]
    if isinstance(ratio, str):
        parts = ratio.split(":")
        if len(parts) != 2:
            raise CliError(f"oversample ratio '{ratio}' is not of the form a:b")
        ratio = (int(parts[0]), int(parts[1]))
    kwargs = {name: opts[name] for name in _TRAIN_FIELDS}
    return TrainConfig(seed=opts["seed"], oversample_ratio=tuple(ratio), **kwargs)


def _model_config(opts: dict) -> ModelConfig:
    kwargs = {name: opts[name] for name in _MODEL_FIELDS}
    return ModelConfig(freeze_embeddings=bool(opts["freeze_embeddings"]), **kwargs)


def _label_names(labelset: LabelSet) -> list[str]:
    names = ["O"]
    for slot in labelset.slot_names:
        names.extend([f"B-{slot}", f"I-{slot}"])
    return names


# ---------------------------------------------------------------- commands

SPLIT_DEFAULTS = {
    "task": "in-domain", "corpus": [], "domain": None, "ratio": "75:25",
    "train_domain": None, "test_domain": None, "seed": 0,
    "max_draws": 100, "tolerance_pp": 10.0, "out": None,
}


def _cmd_split(args) -> int:
    opts = _merged(args, SPLIT_DEFAULTS)
    utterances = _load_corpora(_require(opts, "corpus"))
    out = _outdir(opts)
    task = opts["task"]
    if task == "in-domain":
        domains = sorted({u.domain for u in utterances})
        domain = opts["domain"] or (domains[0] if len(domains) == 1 else None)
        if domain is None:
            raise CliError("missing required flag --domain (corpus has several domains)")
        pool = [u for u in utterances if u.domain == domain]
        if not pool:
            raise CliError(f"domain '{domain}' not present in the corpus")
        train, test, report = split_in_domain(
            pool, opts["ratio"], opts["seed"],
            max_draws=opts["max_draws"], tolerance_pp=opts["tolerance_pp"],
        )
    elif task == "cross-domain":
        train_domain = str(_require(opts, "train_domain"))
        test_domain = str(_require(opts, "test_domain"))
        train, test, _, _, report = split_cross_domain(
            utterances, train_domain, test_domain
        )
    else:
        raise CliError(f"unknown task '{task}' (in-domain or cross-domain)")
    train, validation, vreport = build_validation(train, opts["seed"])
    report = dict(report)
    report["validation"] = vreport
    write_manifest(os.path.join(out, "manifest.json"), train, test, validation, report)
    with open(os.path.join(out, "split_report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(
        f"split: {len(train)} train / {len(validation)} validation / "
        f"{len(test)} test -> {out}"
    )
    return 0


TRAIN_DEFAULTS = {
    "model": None, "corpus": [], "schema": None, "manifest": None, "out": None,
    "seed": 0, "embeddings": None, "oversample_ratio": "1:1",
    "freeze_embeddings": False,
    **{name: getattr(TrainConfig(), name) for name in _TRAIN_FIELDS},
    **{name: getattr(ModelConfig(), name) for name in _MODEL_FIELDS},
}


def _cmd_train(args) -> int:
    opts = _merged(args, TRAIN_DEFAULTS)
    kind = str(_require(opts, "model"))
    schemas = load_schemas(str(_require(opts, "schema")))
    utterances = _load_corpora(_require(opts, "corpus"))
    manifest = read_manifest(str(_require(opts, "manifest")))
    out = _outdir(opts)
    train = select_by_ids(utterances, manifest["train"])
    validation = select_by_ids(utterances, manifest["validation"])
    config = _train_config(opts)
    model_config = _model_config(opts)
    pretrained = None
    if opts["embeddings"]:
        pretrained = load_pretrained(opts["embeddings"], model_config.word_dim)
    if kind == "ecrf":
        result = train_ecrf(
            train, validation, schemas, config,
            model_config=model_config, pretrained=pretrained,
        )
    elif kind in ("ct", "bt"):
        result = train_baseline(
            kind, train, validation, schemas, config,
            model_config=model_config, pretrained=pretrained,
        )
    else:
        raise CliError(f"unknown model kind '{kind}' (ecrf, ct, or bt)")
    save_checkpoint(result.model, os.path.join(out, "checkpoint.json"),
                    train_config=asdict(config))
    write_history(os.path.join(out, "history.jsonl"), result.history)
    if result.aborted:
        print(f"error: {result.diagnostic}", file=sys.stderr)
        return 1
    print(
        f"train: {kind} best validation accuracy "
        f"{result.best_metric:.4f} at epoch {result.best_epoch} "
        f"({result.steps} steps) -> {out}"
    )
    return 0


PREDICT_DEFAULTS = {
    "checkpoint": None, "corpus": [], "manifest": None, "split": "test",
    "schema": None, "out": None,
}


def _cmd_predict(args) -> int:
    opts = _merged(args, PREDICT_DEFAULTS)
    model = load_checkpoint(str(_require(opts, "checkpoint")))
    utterances = _load_corpora(_require(opts, "corpus"))
    if opts["manifest"]:
        manifest = read_manifest(opts["manifest"])
        split = opts["split"]
        if split not in ("train", "test", "validation"):
            raise CliError(f"unknown split '{split}'")
        utterances = select_by_ids(utterances, manifest[split])
    schemas = load_schemas(opts["schema"]) if opts["schema"] else None
    out = str(_require(opts, "out"))
    preds = {
        u.id: model.predict_spans(list(u.tokens), schemas=schemas) for u in utterances
    }
    write_predictions(out, preds)
    total = sum(len(s) for s in preds.values())
    print(f"predict: {total} spans over {len(preds)} utterances -> {out}")
    return 0


EVAL_DEFAULTS = {
    "predictions": [], "corpus": [], "manifest": None, "split": "test",
    "mode": "values", "train_schema": None, "known_slots": None, "out": None,
}


def _cmd_eval(args) -> int:
    opts = _merged(args, EVAL_DEFAULTS)
    prediction_files = _require(opts, "predictions")
    utterances = _load_corpora(_require(opts, "corpus"))
    manifest = read_manifest(str(_require(opts, "manifest")))
    out = _outdir(opts)
    golds = select_by_ids(utterances, manifest[opts["split"]])
    mode = opts["mode"]
    if mode == "values":
        v_train = pooled_values(select_by_ids(utterances, manifest["train"]))
        score = lambda preds: score_values(preds, golds, v_train)
    elif mode == "slots":
        if opts["known_slots"]:
            known = [s.strip() for s in str(opts["known_slots"]).split(",") if s.strip()]
        elif opts["train_schema"]:
            known = [s.name for s in load_schemas(opts["train_schema"])]
        else:
            raise CliError("missing required flag --train-schema (or --known-slots)")
        score = lambda preds: score_cross_domain(preds, golds, known)
    else:
        raise CliError(f"unknown mode '{mode}' (values or slots)")

    reports = []
    for i, path in enumerate(prediction_files):
        preds = read_predictions(path)
        report = score(preds)
        report["predictions_file"] = path
        report["conflicts"] = conflict_count(preds)
        reports.append(report)
        stem = "report" if len(prediction_files) == 1 else f"report_{i:02d}"
        write_report(os.path.join(out, f"{stem}.json"), report)
        write_report_csv(os.path.join(out, f"{stem}.csv"), report)
    if len(reports) > 1:
        combined = aggregate(reports)
        write_report(os.path.join(out, "aggregate.json"), combined)
        write_report_csv(os.path.join(out, "aggregate.csv"), combined)
    total = reports[0]["categories"]["total"]
    shown = "null" if total["accuracy"] is None else f"{total['accuracy']:.4f}"
    print(f"eval: {len(reports)} run(s), first total accuracy {shown} -> {out}")
    return 0


INSPECT_DEFAULTS = {
    "checkpoint": None, "corpus": [], "utterance": [], "schema": None, "out": None,
}


def _cmd_inspect(args) -> int:
    opts = _merged(args, INSPECT_DEFAULTS)
    model = load_checkpoint(str(_require(opts, "checkpoint")))
    if not isinstance(model, EcrfModel):
        raise CliError("inspect requires a joint-labeler (ecrf) checkpoint")
    utterances = _load_corpora(_require(opts, "corpus"))
    wanted = _require(opts, "utterance")
    out = _outdir(opts)
    schemas = load_schemas(opts["schema"]) if opts["schema"] else None
    labelset = LabelSet.from_schemas(schemas if schemas else model.schemas)
    names = _label_names(labelset)
    selected = select_by_ids(utterances, list(wanted))
    for utt in selected:
        result = model.inspect(list(utt.tokens), schemas=schemas)
        stem = utt.id.replace("/", "__")
        node_path = os.path.join(out, f"{stem}.node.csv")
        with open(node_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["token", *names])
            for tok, row in zip(utt.tokens, result.node):
                writer.writerow([tok, *(f"{v:.6f}" for v in row)])
        edge_path = os.path.join(out, f"{stem}.edge.csv")
        with open(edge_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["from\\to", *names])
            for name, row in zip(names, result.edge):
                writer.writerow([name, *(f"{v:.6f}" for v in row)])
        node_only = " ".join(names[i] for i in result.path_node_only)
        full = " ".join(names[i] for i in result.path_full)
        print(f"inspect: {utt.id}")
        print(f"  node-only: {node_only}")
        print(f"  full:      {full}")
    return 0


GRADCHECK_DEFAULTS = {
    "model": "ecrf", "seed": 42, "step": 1e-4, "threshold": 1e-4,
    "scale": 1.0, "tokens": 3,
}

_GRADCHECK_WORDS = [
    "book", "a", "table", "at", "seven", "pm", "the", "venue",
    "is", "blue", "hill", "please",
]
_GRADCHECK_SCHEMAS = [
    ("time", "the time of the booking"),
    ("venue", "the name of the place"),
]


def _cmd_gradcheck(args) -> int:
    opts = _merged(args, GRADCHECK_DEFAULTS)
    kind = opts["model"]
    if kind not in ("ecrf", "ct", "bt"):
        raise CliError(f"unknown model kind '{kind}' (ecrf, ct, or bt)")
    rng = np.random.default_rng(int(opts["seed"]))
    n = int(opts["tokens"])
    if n < 1:
        raise CliError("--tokens must be at least 1")
    schemas = [SlotSchema(name, desc) for name, desc in _GRADCHECK_SCHEMAS]
    extra = [s.description_tokens for s in schemas]
    vocab = build_vocabulary([_GRADCHECK_WORDS], extra_tokens=extra)
    config = ModelConfig(
        word_dim=5, tag_dim=3, hidden_size=6, label_dim=6, fc_hidden=4, fnn_hidden=4
    )
    model = create_model(kind, vocab, schemas, config=config, rng=rng)
    # Probe parameters are drawn wider than the training init: near zero,
    # many true gradients sit below what central differences can resolve
    # in double precision.
    scale = float(opts["scale"])
    probe = {
        name: rng.uniform(-scale, scale, size=arr.shape)
        for name, arr in model.store.arrays.items()
    }
    token_ids = [int(i) for i in rng.integers(2, len(vocab), size=n)]
    labelset = LabelSet.from_schemas(schemas)
    if kind == "ecrf":
        gold = [int(i) for i in rng.integers(0, labelset.size, size=n)]

        def build_loss(leaves):
            loss, _ = model.loss(token_ids, gold, leaves=leaves, edge_masked=False)
            return loss
    else:
        tags = [int(i) for i in rng.integers(0, 3, size=n)]

        def build_loss(leaves):
            loss, _ = model.loss(token_ids, tags, schemas[0], leaves=leaves)
            return loss

    leaves = {name: ad.constant(value) for name, value in probe.items()}
    analytic = ad.backward(build_loss(leaves), leaves)

    def numeric_loss(values):
        fresh = {name: ad.constant(v) for name, v in values.items()}
        return float(build_loss(fresh).value.reshape(()))

    # Three finite-difference steps spanning two decades, per-coordinate
    # best agreement: truncation error falls 100x per decade of smaller
    # step while roundoff grows only 10x, so every coordinate, including
    # near-zero gradients that a single step cannot resolve, is certified
    # by one of them. A wrong analytic gradient disagrees with all three
    # by the same amount and still fails.
    step = float(opts["step"])
    errors: dict[str, np.ndarray] = {}
    for trial_step in (0.1 * step, step, 10.0 * step):
        numeric = ad.finite_difference(numeric_loss, probe, step=trial_step)
        for name in probe:
            denom = np.maximum(1e-8, np.abs(analytic[name]) + np.abs(numeric[name]))
            err = np.abs(analytic[name] - numeric[name]) / denom
            errors[name] = err if name not in errors else np.minimum(errors[name], err)
    per_param = {name: float(err.max()) for name, err in errors.items()}
    for name in sorted(per_param):
        print(f"  {name}: {per_param[name]:.3e}")
    worst = max(per_param.values())
    threshold = float(opts["threshold"])
    print(f"gradcheck: {kind} max relative error {worst:.3e} (threshold {threshold:g})")
    if worst >= threshold:
        print(f"error: gradient check failed at {worst:.3e}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------- parser


def _add_common(parser, seed: bool = False):
    parser.add_argument("--config", help="JSON file with flag defaults")
    if seed:
        parser.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slotfill",
        description="Slot filling over open value inventories: split, train, score.",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("split", help="re-partition a corpus and write a manifest")
    p.add_argument("--task", choices=["in-domain", "cross-domain"])
    p.add_argument("--corpus", action="append", metavar="[DOMAIN=]PATH")
    p.add_argument("--domain")
    p.add_argument("--ratio", metavar="A:B")
    p.add_argument("--train-domain")
    p.add_argument("--test-domain")
    p.add_argument("--max-draws", type=int)
    p.add_argument("--tolerance-pp", type=float)
    p.add_argument("--out")
    _add_common(p, seed=True)

    p = sub.add_parser("train", help="fit a model, write checkpoint and history")
    p.add_argument("--model", choices=["ecrf", "ct", "bt"])
    p.add_argument("--corpus", action="append", metavar="[DOMAIN=]PATH")
    p.add_argument("--schema")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--embeddings", help="pretrained word vector file")
    p.add_argument("--oversample-ratio", metavar="A:B")
    p.add_argument("--freeze-embeddings", action="store_const", const=True)
    for name in _TRAIN_FIELDS:
        default = getattr(TrainConfig(), name)
        p.add_argument(f"--{name.replace('_', '-')}", type=type(default))
    for name in _MODEL_FIELDS:
        p.add_argument(f"--{name.replace('_', '-')}", type=int)
    _add_common(p, seed=True)

    p = sub.add_parser("predict", help="decode spans with a trained checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus", action="append", metavar="[DOMAIN=]PATH")
    p.add_argument("--manifest")
    p.add_argument("--split", choices=["train", "test", "validation"])
    p.add_argument("--schema", help="override schemas at decode time")
    p.add_argument("--out")
    _add_common(p)

    p = sub.add_parser("eval", help="score prediction files into reports")
    p.add_argument("--predictions", action="append", metavar="PATH")
    p.add_argument("--corpus", action="append", metavar="[DOMAIN=]PATH")
    p.add_argument("--manifest")
    p.add_argument("--split", choices=["train", "test", "validation"])
    p.add_argument("--mode", choices=["values", "slots"])
    p.add_argument("--train-schema", help="schemas of the training domain (slots mode)")
    p.add_argument("--known-slots", metavar="A,B,C")
    p.add_argument("--out")
    _add_common(p)

    p = sub.add_parser("inspect", help="dump potential tables for utterances")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus", action="append", metavar="[DOMAIN=]PATH")
    p.add_argument("--utterance", action="append", metavar="UTT_ID")
    p.add_argument("--schema")
    p.add_argument("--out")
    _add_common(p)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--model", choices=["ecrf", "ct", "bt"])
    p.add_argument("--step", type=float)
    p.add_argument("--threshold", type=float)
    p.add_argument("--scale", type=float)
    p.add_argument("--tokens", type=int)
    _add_common(p, seed=True)

    return parser


_HANDLERS = {
    "split": _cmd_split,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "inspect": _cmd_inspect,
    "gradcheck": _cmd_gradcheck,
}


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:  # argparse already printed a diagnostic
        return int(exit_.code or 0)
    if not args.command:
        parser.print_usage(sys.stderr)
        print("error: a command is required", file=sys.stderr)
        return 2
    try:
        return _HANDLERS[args.command](args)
    except _ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
