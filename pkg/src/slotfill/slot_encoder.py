"""Slot schemas, the tagging label set, and description-conditioned labels.

A slot is identified by name and carries a short natural-language
description. Labels for the sequence models are built from those
descriptions, so a model can tag slots it never saw during training as
long as a description is available at decode time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .embeddings import TAG_B, TAG_I, TAG_O, Vocabulary


class SchemaError(Exception):
    pass


@dataclass(frozen=True)
class SlotSchema:
    name: str
    description: str

    @property
    def description_tokens(self) -> tuple[str, ...]:
        return tuple(self.description.lower().split())


def load_schemas(path: str) -> list[SlotSchema]:
    """Read a schema file: a JSON list of {"slot": ..., "description": ...}."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as err:
            raise SchemaError(f"{path}: {err}") from None
    if not isinstance(data, list):
        raise SchemaError(f"{path}: expected a JSON list of slot entries")
    schemas = []
    for i, entry in enumerate(data):
        if not isinstance(entry, dict) or "slot" not in entry or "description" not in entry:
            raise SchemaError(f"{path}: entry {i} needs 'slot' and 'description' keys")
        schemas.append(SlotSchema(name=str(entry["slot"]), description=str(entry["description"])))
    validate_schemas(schemas)
    return schemas


def save_schemas(schemas: Sequence[SlotSchema], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([{"slot": s.name, "description": s.description} for s in schemas],
                  fh, indent=2, sort_keys=False)
        fh.write("\n")


def validate_schemas(schemas: Sequence[SlotSchema]) -> None:
    names = [s.name for s in schemas]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise SchemaError(f"duplicate slot names: {dupes}")
    for s in schemas:
        if not s.description_tokens:
            raise SchemaError(f"slot '{s.name}' has an empty description")


class LabelSet:
    """Maps between label indices and (slot, position) meaning.

    Index 0 is the outside label. Each slot then contributes a begin and
    an inside label, in schema order: slot k occupies 1 + 2k and 2 + 2k.
    """

    O_INDEX = 0

    def __init__(self, slot_names: Sequence[str]):
        if len(set(slot_names)) != len(slot_names):
            raise SchemaError(f"duplicate slot names: {sorted(slot_names)}")
        self.slot_names = tuple(slot_names)
        self._begin = {name: 1 + 2 * k for k, name in enumerate(slot_names)}

    @classmethod
    def from_schemas(cls, schemas: Sequence[SlotSchema]) -> "LabelSet":
        return cls([s.name for s in schemas])

    @property
    def size(self) -> int:
        return 1 + 2 * len(self.slot_names)

    def begin(self, slot: str) -> int:
        if slot not in self._begin:
            raise SchemaError(f"unknown slot '{slot}'")
        return self._begin[slot]

    def inside(self, slot: str) -> int:
        return self.begin(slot) + 1

    def slot_of(self, index: int) -> str | None:
        """The slot a label index belongs to; None for the outside label."""
        if index == self.O_INDEX:
            return None
        if not 0 < index < self.size:
            raise SchemaError(f"label index {index} out of range for size {self.size}")
        return self.slot_names[(index - 1) // 2]

    def is_begin(self, index: int) -> bool:
        return index != self.O_INDEX and (index - 1) % 2 == 0

    def is_inside(self, index: int) -> bool:
        return index != self.O_INDEX and (index - 1) % 2 == 1


def encode_description(
    tokens: Sequence[str],
    word_table: ad.Node,
    vocab: Vocabulary,
) -> ad.Node:
    """Unweighted mean of the description's word embeddings, shape [1, dim]."""
    if not tokens:
        raise SchemaError("cannot encode an empty description")
    rows = ad.lookup(word_table, vocab.encode(tokens))
    ones = ad.constant(np.ones((1, len(tokens))))
    return ad.scale(ad.matmul(ones, rows), 1.0 / len(tokens))


def encode_label_matrix(
    schemas: Sequence[SlotSchema],
    word_table: ad.Node,
    tag_table: ad.Node,
    fc: Mapping[str, ad.Node],
    vocab: Vocabulary,
) -> ad.Node:
    """Label vectors for the whole label set, one row per label.

    Row layout matches LabelSet: outside first, then begin/inside per slot.
    Each row is FC(description-mean (+) tag-embedding) where the outside
    label uses a zero vector in place of a description. The FC net has one
    tanh hidden layer and a linear output.
    """
    word_dim = word_table.value.shape[1]
    tag_rows = ad.lookup(tag_table, [TAG_O] + [t for _ in schemas for t in (TAG_B, TAG_I)])
    desc_parts = [ad.constant(np.zeros((1, word_dim)))]
    for schema in schemas:
        mean = encode_description(schema.description_tokens, word_table, vocab)
        desc_parts.extend([mean, mean])  # begin and inside share the description
    desc = ad.concat(desc_parts, axis=0)
    x = ad.concat([desc, tag_rows], axis=1)
    hidden = ad.tanh(ad.affine(x, fc["W1"], fc["b1"]))
    return ad.affine(hidden, fc["W2"], fc["b2"])


def init_label_fc(
    in_dim: int,
    hidden_dim: int,
    out_dim: int,
    rng: np.random.Generator,
) -> dict[str, np.ndarray]:
    scale = 0.1
    return {
        "W1": rng.uniform(-scale, scale, size=(in_dim, hidden_dim)),
        "b1": rng.uniform(-scale, scale, size=(1, hidden_dim)),
        "W2": rng.uniform(-scale, scale, size=(hidden_dim, out_dim)),
        "b2": rng.uniform(-scale, scale, size=(1, out_dim)),
    }
