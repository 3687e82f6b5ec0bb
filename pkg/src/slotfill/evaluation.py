"""Exact-match evaluation of predicted slot spans.

A gold instance is one (slot, start, end) annotation; it counts correct
only when the predictions for its utterance contain exactly that triple.
Instances are bucketed into known and unknown, either by whether the value
string was in the training inventory (in-domain runs) or by whether the
slot itself was available at training time (cross-domain runs).
"""

from __future__ import annotations

import csv
import json
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .dataset import Span, Utterance
from .slot_encoder import LabelSet

CATEGORIES = ("known", "unknown", "total")


class EvaluationError(Exception):
    pass


def extract_spans(y: Sequence[int], labelset: LabelSet) -> list[Span]:
    """Spans from a decoded label sequence, with repair.

    A begin label always opens a span (closing any open one). An inside
    label continues the open span of the same slot; with no open span, or
    after a different slot, it opens a new span instead of being dropped.
    """
    spans: list[Span] = []
    open_slot: str | None = None
    open_start = 0
    for pos, idx in enumerate(y):
        slot = labelset.slot_of(idx)
        if slot is None:
            if open_slot is not None:
                spans.append((open_slot, open_start, pos))
                open_slot = None
        elif labelset.is_begin(idx) or slot != open_slot:
            if open_slot is not None:
                spans.append((open_slot, open_start, pos))
            open_slot, open_start = slot, pos
    if open_slot is not None:
        spans.append((open_slot, open_start, len(y)))
    return spans


def _score(
    preds: Mapping[str, Sequence[Span]],
    golds: Sequence[Utterance],
    category_of: Callable[[Utterance, Span], str],
    mode: str,
) -> dict:
    gold_ids = [u.id for u in golds]
    if len(set(gold_ids)) != len(gold_ids):
        raise EvaluationError("duplicate utterance ids in gold set")
    stray = set(preds) - set(gold_ids)
    if stray:
        raise EvaluationError(
            f"predictions for utterances absent from the gold set, first: '{sorted(stray)[0]}'"
        )
    correct = {"known": 0, "unknown": 0}
    gold_count = {"known": 0, "unknown": 0}
    spurious = 0
    for utt in golds:
        predicted = {tuple(s) for s in preds.get(utt.id, ())}
        gold_spans = set(utt.gold_spans)
        spurious += len(predicted - gold_spans)
        for span in utt.gold_spans:
            cat = category_of(utt, span)
            gold_count[cat] += 1
            if span in predicted:
                correct[cat] += 1
    categories = {}
    for cat in ("known", "unknown"):
        categories[cat] = _bucket(correct[cat], gold_count[cat])
    categories["total"] = _bucket(
        correct["known"] + correct["unknown"], gold_count["known"] + gold_count["unknown"]
    )
    return {
        "mode": mode,
        "categories": categories,
        "spurious_predictions": spurious,
    }


def _bucket(correct: int, gold: int) -> dict:
    return {
        "correct": correct,
        "gold": gold,
        "accuracy": (correct / gold) if gold else None,  # 0/0 stays null, never 1.0
    }


def score_values(
    preds: Mapping[str, Sequence[Span]],
    golds: Sequence[Utterance],
    v_train: Iterable[str],
) -> dict:
    """Known = the gold span's value string occurred in the training set."""
    train_values = set(v_train)

    def category(utt: Utterance, span: Span) -> str:
        return "known" if utt.span_value(span) in train_values else "unknown"

    return _score(preds, golds, category, mode="values")


def score_cross_domain(
    preds: Mapping[str, Sequence[Span]],
    golds: Sequence[Utterance],
    known_slots: Iterable[str],
) -> dict:
    """Known = the gold span's slot existed in the training domain."""
    known = set(known_slots)

    def category(_: Utterance, span: Span) -> str:
        return "known" if span[0] in known else "unknown"

    return _score(preds, golds, category, mode="slots")


def conflict_count(preds: Mapping[str, Sequence[Span]]) -> int:
    """Token positions claimed by spans of two or more different slots."""
    conflicts = 0
    for spans in preds.values():
        claims: dict[int, set[str]] = {}
        for slot, start, end in spans:
            for pos in range(start, end):
                claims.setdefault(pos, set()).add(slot)
        conflicts += sum(1 for slots in claims.values() if len(slots) > 1)
    return conflicts


def aggregate(reports: Sequence[dict]) -> dict:
    """Mean and sample standard deviation of accuracies across runs.

    Categories that are 0/0 (null) in a run are left out of that
    category's mean; a category null in every run stays null.
    """
    if not reports:
        raise EvaluationError("nothing to aggregate")
    out: dict = {"n_runs": len(reports), "mode": reports[0]["mode"], "categories": {}}
    for cat in CATEGORIES:
        runs = [r["categories"][cat]["accuracy"] for r in reports]
        present = [v for v in runs if v is not None]
        if present:
            mean = float(np.mean(present))
            std = float(np.std(present, ddof=1)) if len(present) > 1 else None
        else:
            mean = std = None
        out["categories"][cat] = {"runs": runs, "mean": mean, "std": std}
    return out


# ---------------------------------------------------------------------------
# file formats


def write_predictions(path: str, preds: Mapping[str, Sequence[Span]]) -> None:
    """JSON lines, one utterance per line, in sorted id order."""
    with open(path, "w", encoding="utf-8") as fh:
        for utt_id in sorted(preds):
            record = {
                "utt_id": utt_id,
                "spans": [
                    {"slot": s, "start": int(a), "end": int(b)} for s, a, b in preds[utt_id]
                ],
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_predictions(path: str) -> dict[str, list[Span]]:
    preds: dict[str, list[Span]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as err:
                raise EvaluationError(f"{path}: line {lineno}: {err}") from None
            if "utt_id" not in record or "spans" not in record:
                raise EvaluationError(f"{path}: line {lineno}: needs 'utt_id' and 'spans'")
            utt_id = record["utt_id"]
            if utt_id in preds:
                raise EvaluationError(f"{path}: line {lineno}: duplicate utterance id '{utt_id}'")
            try:
                preds[utt_id] = [
                    (str(s["slot"]), int(s["start"]), int(s["end"])) for s in record["spans"]
                ]
            except (KeyError, TypeError, ValueError):
                raise EvaluationError(
                    f"{path}: line {lineno}: spans need 'slot', 'start', 'end'"
                ) from None
    return preds


def write_report(path: str, report: Mapping) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report_csv(path: str, report: Mapping) -> None:
    """Flat table: one row per category, ready for result-table assembly."""
    aggregated = "n_runs" in report
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        if aggregated:
            writer.writerow(["category", "mean", "std", "n_runs"])
            for cat in CATEGORIES:
                entry = report["categories"][cat]
                writer.writerow([
                    cat,
                    _fmt(entry["mean"]),
                    _fmt(entry["std"]),
                    report["n_runs"],
                ])
        else:
            writer.writerow(["category", "correct", "gold", "accuracy"])
            for cat in CATEGORIES:
                entry = report["categories"][cat]
                writer.writerow([cat, entry["correct"], entry["gold"], _fmt(entry["accuracy"])])


def _fmt(value) -> str:
    return "" if value is None else f"{value:.6f}"
