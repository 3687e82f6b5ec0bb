"""Corpus ingestion, IOB conversion, and the dataset re-splitting protocol.

The corpus format is a JSON array of dialogues; each turn may carry a user
utterance with tokens and slot annotations given as token-index start and
exclusive end. Only user turns are consumed.

Splits are value-aware: the in-domain splitter re-partitions a domain so
that a target share of the value inventory never appears in training,
which is what lets the evaluation separate known from unknown values.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .slot_encoder import LabelSet

logger = logging.getLogger(__name__)

Span = tuple[str, int, int]


class CorpusError(Exception):
    pass


class SplitError(Exception):
    def __init__(self, message: str, report: dict | None = None):
        super().__init__(message)
        self.report = report or {}


@dataclass(frozen=True)
class Utterance:
    id: str
    domain: str
    tokens: tuple[str, ...]
    gold_spans: tuple[Span, ...]

    def __post_init__(self):
        n = len(self.tokens)
        by_slot: dict[str, list[tuple[int, int]]] = {}
        for slot, start, end in self.gold_spans:
            if not (0 <= start < end <= n):
                raise CorpusError(
                    f"utterance '{self.id}': span [{start},{end}) outside {n} tokens"
                )
            by_slot.setdefault(slot, []).append((start, end))
        for slot, spans in by_slot.items():
            spans.sort()
            for (_, e1), (s2, _) in zip(spans, spans[1:]):
                if s2 < e1:
                    raise CorpusError(
                        f"utterance '{self.id}': overlapping spans for slot '{slot}'"
                    )

    def span_value(self, span: Span) -> str:
        _, start, end = span
        return " ".join(self.tokens[start:end])

    @property
    def values(self) -> frozenset[str]:
        return frozenset(self.span_value(s) for s in self.gold_spans)

    @property
    def slots(self) -> frozenset[str]:
        return frozenset(s[0] for s in self.gold_spans)


def parse_dialogues(path: str, domain: str) -> list[Utterance]:
    """Read one domain's corpus file into utterances.

    Utterance ids are "<domain>/<dialogue-id>/<turn-index>" so they stay
    unique when several domains are loaded side by side.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as err:
            raise CorpusError(f"{path}: {err}") from None
    if not isinstance(data, list):
        raise CorpusError(f"{path}: expected a JSON array of dialogues")
    utterances: list[Utterance] = []
    for d_idx, dialogue in enumerate(data):
        if not isinstance(dialogue, dict):
            raise CorpusError(f"{path}: dialogue {d_idx} is not an object")
        dlg_id = str(dialogue.get("dialogue_id", f"dlg{d_idx:05d}"))
        turns = dialogue.get("turns")
        if not isinstance(turns, list):
            raise CorpusError(f"{path}: dialogue {d_idx} has no 'turns' list")
        for t_idx, turn in enumerate(turns):
            if not isinstance(turn, dict):
                raise CorpusError(f"{path}: dialogue {d_idx} turn {t_idx} is not an object")
            user = turn.get("user_utterance")
            if not user:
                continue  # system-only turn
            tokens = user.get("tokens")
            if not tokens:
                continue
            if not all(isinstance(t, str) for t in tokens):
                raise CorpusError(f"{path}: dialogue {d_idx} turn {t_idx}: non-string token")
            utt_id = f"{domain}/{dlg_id}/{t_idx}"
            spans = []
            for ann in user.get("slots", []):
                try:
                    spans.append((str(ann["slot"]), int(ann["start"]), int(ann["exclusive_end"])))
                except (KeyError, TypeError, ValueError):
                    raise CorpusError(
                        f"{path}: utterance '{utt_id}': slot annotation needs "
                        f"'slot', 'start', 'exclusive_end'"
                    ) from None
            utterances.append(
                Utterance(
                    id=utt_id,
                    domain=domain,
                    tokens=tuple(t.lower() for t in tokens),
                    gold_spans=tuple(spans),
                )
            )
    return utterances


def to_iob(utt: Utterance, labelset: LabelSet) -> list[int]:
    """Gold label indices for one utterance.

    Spans whose slot is missing from the labelset are dropped with a
    warning: in cross-domain runs the unknown-slot gold spans still exist
    for scoring but cannot be represented in the training labelset.
    """
    tags = [LabelSet.O_INDEX] * len(utt.tokens)
    for slot, start, end in utt.gold_spans:
        if slot not in labelset.slot_names:
            logger.warning("utterance '%s': dropping span for unknown slot '%s'", utt.id, slot)
            continue
        for pos in range(start, end):
            if tags[pos] != LabelSet.O_INDEX:
                raise CorpusError(
                    f"utterance '{utt.id}': token {pos} claimed by two slots"
                )
            tags[pos] = labelset.inside(slot)
        tags[start] = labelset.begin(slot)
    return tags


def pooled_values(utterances: Iterable[Utterance]) -> set[str]:
    out: set[str] = set()
    for u in utterances:
        out |= u.values
    return out


def value_inventory(utterances: Iterable[Utterance]) -> dict[str, set[str]]:
    """Per-slot value sets."""
    inv: dict[str, set[str]] = {}
    for u in utterances:
        for span in u.gold_spans:
            inv.setdefault(span[0], set()).add(u.span_value(span))
    return inv


def parse_ratio(text: str) -> tuple[float, float]:
    parts = text.split(":")
    if len(parts) != 2:
        raise SplitError(f"ratio '{text}' is not of the form a:b")
    try:
        a, b = float(parts[0]), float(parts[1])
    except ValueError:
        raise SplitError(f"ratio '{text}' is not numeric") from None
    if a < 0 or b < 0 or a + b <= 0:
        raise SplitError(f"ratio '{text}' must have nonnegative parts and positive sum")
    return a, b


def split_in_domain(
    utterances: Sequence[Utterance],
    ratio: str,
    seed: int,
    max_draws: int = 100,
    tolerance_pp: float = 10.0,
) -> tuple[list[Utterance], list[Utterance], dict]:
    """Re-split one domain by value exposure.

    A designated-unseen subset of the value inventory is sampled; every
    utterance containing one of those values goes to test. The achieved
    ratio |V_train| : |V_test - V_train| drifts from the target because
    values co-occur, so up to ``max_draws`` subsets are tried and the
    closest kept. Distance is measured in percentage points of the
    train-side share.
    """
    domains = {u.domain for u in utterances}
    if len(domains) != 1:
        raise SplitError(f"in-domain split needs a single domain, got {sorted(domains)}")
    a, b = parse_ratio(ratio)
    inventory = sorted(pooled_values(utterances))
    if not inventory:
        raise SplitError("corpus has no slot values to split on")
    target_unseen = round(len(inventory) * b / (a + b))
    target_pct = 100.0 * a / (a + b)
    rng = np.random.default_rng(seed)
    best: dict | None = None
    for draw in range(max_draws):
        designated = set(
            rng.choice(inventory, size=target_unseen, replace=False)
        ) if target_unseen else set()
        test = [u for u in utterances if u.values & designated]
        train = [u for u in utterances if not (u.values & designated)]
        if not test or not train:
            continue
        v_train = pooled_values(train)
        unseen = pooled_values(test) - v_train
        achieved_pct = 100.0 * len(v_train) / (len(v_train) + len(unseen))
        distance = abs(achieved_pct - target_pct)
        if best is None or distance < best["report"]["distance_pp"]:
            best = {
                "train": train,
                "test": test,
                "report": {
                    "task": "in-domain",
                    "domain": next(iter(domains)),
                    "target_ratio": ratio,
                    "target_train_pct": target_pct,
                    "achieved_counts": [len(v_train), len(unseen)],
                    "achieved_train_pct": achieved_pct,
                    "distance_pp": distance,
                    "seed": seed,
                    "draw_index": draw,
                    "train_utterances": len(train),
                    "test_utterances": len(test),
                    "inventory_size": len(inventory),
                    "designated_unseen": sorted(designated),
                },
            }
    if best is None:
        raise SplitError(
            f"no draw produced non-empty train and test sets for ratio {ratio}",
            report={"target_ratio": ratio, "inventory_size": len(inventory)},
        )
    if best["report"]["distance_pp"] > tolerance_pp:
        raise SplitError(
            f"best achieved ratio is {best['report']['achieved_train_pct']:.1f}% train-side, "
            f"more than {tolerance_pp}pp from target {target_pct:.1f}%",
            report=best["report"],
        )
    return best["train"], best["test"], best["report"]


def split_cross_domain(
    utterances: Sequence[Utterance],
    train_domain: str,
    test_domain: str,
) -> tuple[list[Utterance], list[Utterance], list[str], list[str], dict]:
    if train_domain == test_domain:
        raise SplitError("cross-domain split needs two distinct domains")
    domains = {u.domain for u in utterances}
    for d in (train_domain, test_domain):
        if d not in domains:
            raise SplitError(f"domain '{d}' not present in the corpus")
    train = [u for u in utterances if u.domain == train_domain]
    test = [u for u in utterances if u.domain == test_domain]
    train_slots = {s for u in train for s in u.slots}
    test_slots = {s for u in test for s in u.slots}
    known = sorted(train_slots & test_slots)
    unknown = sorted(test_slots - train_slots)
    report = {
        "task": "cross-domain",
        "train_domain": train_domain,
        "test_domain": test_domain,
        "known_slots": known,
        "unknown_slots": unknown,
        "train_utterances": len(train),
        "test_utterances": len(test),
    }
    return train, test, known, unknown, report


def build_validation(
    train: Sequence[Utterance],
    seed: int,
    retries: int = 10,
) -> tuple[list[Utterance], list[Utterance], dict]:
    """Carve a validation set off the training set at a 4:1 ratio.

    The validation set should itself contain unseen material (roughly half
    its utterances), otherwise early stopping would never reward the
    open-ontology behavior being trained for. Greedy phase: value types
    whose whole occurrence set fits in the unseen quota are moved wholesale
    so those values vanish from the remaining training set. Fill phase:
    uniform random utterances top the set up to size.
    """
    if len(train) < 10:
        raise SplitError(f"training set of {len(train)} is too small to carve validation from")
    v = round(len(train) / 5)
    best_report: dict | None = None
    for attempt in range(retries):
        used_seed = seed + attempt
        rng = np.random.default_rng(used_seed)
        remaining = list(train)
        validation: list[Utterance] = []
        quota = v / 2.0
        value_types = sorted({val for u in train for val in u.values})
        rng.shuffle(value_types)
        moved = True
        while quota >= 1.0 and moved:
            moved = False
            for value in value_types:
                holders = [u for u in remaining if value in u.values]
                if holders and len(holders) <= quota:
                    validation.extend(holders)
                    ids = {u.id for u in holders}
                    remaining = [u for u in remaining if u.id not in ids]
                    quota -= len(holders)
                    moved = True
                    if quota < 1.0:
                        break
        fill = v - len(validation)
        if fill > 0:
            picks = rng.choice(len(remaining), size=fill, replace=False)
            chosen = {remaining[i].id for i in picks}
            validation.extend(u for u in remaining if u.id in chosen)
            remaining = [u for u in remaining if u.id not in chosen]
        train_values = pooled_values(remaining)
        train_slots = {s for u in remaining for s in u.slots}
        unseen_count = sum(
            1
            for u in validation
            if (u.values - train_values) or (u.slots - train_slots)
        )
        fraction = unseen_count / len(validation) if validation else 0.0
        report = {
            "requested_seed": seed,
            "used_seed": used_seed,
            "validation_size": len(validation),
            "new_train_size": len(remaining),
            "unseen_fraction": fraction,
        }
        if 0.35 <= fraction <= 0.65:
            return remaining, validation, report
        if best_report is None or abs(fraction - 0.5) < abs(best_report["unseen_fraction"] - 0.5):
            best_report = report
    raise SplitError(
        f"validation unseen fraction stayed outside [0.35, 0.65] over {retries} seeds",
        report=best_report or {},
    )


def write_manifest(
    path: str,
    train: Sequence[Utterance],
    test: Sequence[Utterance],
    validation: Sequence[Utterance],
    report: Mapping,
) -> None:
    doc = {
        "train": [u.id for u in train],
        "test": [u.id for u in test],
        "validation": [u.id for u in validation],
        "report": dict(report),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as err:
            raise SplitError(f"{path}: {err}") from None
    for key in ("train", "test", "validation"):
        if key not in doc or not isinstance(doc[key], list):
            raise SplitError(f"{path}: manifest is missing the '{key}' id list")
    return doc


def select_by_ids(utterances: Sequence[Utterance], ids: Sequence[str]) -> list[Utterance]:
    by_id = {u.id: u for u in utterances}
    if len(by_id) != len(utterances):
        raise CorpusError("duplicate utterance ids in corpus")
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise CorpusError(f"manifest references unknown utterance ids, first: '{missing[0]}'")
    return [by_id[i] for i in ids]
