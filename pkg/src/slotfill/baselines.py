"""Per-slot sequence taggers used as comparison systems.

Both taggers consume one slot description at a time and emit begin/inside/
outside probabilities per token, so labeling a whole task means running
them once per slot. The concat tagger (ct) stacks a second recurrent layer
on top of the feedforward mix of contextual features and the description
encoding; the plain tagger (bt) projects straight from that mix.

Slot descriptions enter through the same mean-of-embeddings encoder the
CRF uses, but without any tag embedding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from . import context_encoder as ce
from .embeddings import INIT_SCALE, Vocabulary
from .slot_encoder import SlotSchema, encode_description

# Output column order. O last so "ties prefer O, then B" reads off the order.
COL_B, COL_I, COL_O = 0, 1, 2


class BaselineError(Exception):
    pass


@dataclass
class TaggerOutput:
    """Per-token label distribution as log-probabilities [n, 3]."""

    log_probs: ad.Node

    @property
    def probs(self) -> ad.Node:
        return ad.exp(self.log_probs)


def init_tagger_params(
    kind: str,
    word_dim: int,
    hidden: int,
    fnn_hidden: int,
    rng: np.random.Generator,
) -> dict[str, np.ndarray]:
    """Everything except the embedding table; ``hidden`` is the concat width."""
    if kind not in ("ct", "bt"):
        raise BaselineError(f"unknown tagger kind '{kind}'")
    if hidden % 2:
        raise BaselineError(f"hidden size {hidden} must be even (two directions)")
    per_dir = hidden // 2
    params = ce.init_bilstm("bilstm1", word_dim, per_dir, rng)
    fnn_in = hidden + word_dim
    params["fnn.W1"] = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(fnn_in, fnn_hidden))
    params["fnn.b1"] = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(1, fnn_hidden))
    params["fnn.W2"] = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(fnn_hidden, hidden))
    params["fnn.b2"] = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(1, hidden))
    if kind == "ct":
        params.update(ce.init_bilstm("bilstm2", hidden, per_dir, rng))
    params["proj.W"] = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(hidden, 3))
    params["proj.b"] = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(1, 3))
    return params


def _forward(
    token_ids: Sequence[int],
    schema: SlotSchema,
    word_table: ad.Node,
    vocab: Vocabulary,
    params: Mapping[str, ad.Node],
    second_lstm: bool,
) -> TaggerOutput:
    if not token_ids:
        raise BaselineError("cannot tag an empty utterance")
    x = ad.lookup(word_table, token_ids)
    contextual = ce.extract_features(x, params, "bilstm1")
    description = encode_description(schema.description_tokens, word_table, vocab)
    ones = ad.constant(np.ones((len(token_ids), 1)))
    mixed = ad.concat([contextual, ad.matmul(ones, description)], axis=1)
    hidden = ad.tanh(ad.affine(mixed, params["fnn.W1"], params["fnn.b1"]))
    features = ad.affine(hidden, params["fnn.W2"], params["fnn.b2"])
    if second_lstm:
        features = ce.extract_features(features, params, "bilstm2")
    logits = ad.affine(features, params["proj.W"], params["proj.b"])
    norm = ad.matmul(ad.logsumexp(logits, axis=1), ad.constant(np.ones((1, 3))))
    return TaggerOutput(log_probs=ad.add(logits, ad.scale(norm, -1.0)))


def ct_forward(
    token_ids: Sequence[int],
    schema: SlotSchema,
    word_table: ad.Node,
    vocab: Vocabulary,
    params: Mapping[str, ad.Node],
) -> TaggerOutput:
    return _forward(token_ids, schema, word_table, vocab, params, second_lstm=True)


def bt_forward(
    token_ids: Sequence[int],
    schema: SlotSchema,
    word_table: ad.Node,
    vocab: Vocabulary,
    params: Mapping[str, ad.Node],
) -> TaggerOutput:
    return _forward(token_ids, schema, word_table, vocab, params, second_lstm=False)


def tag_cross_entropy(output: TaggerOutput, gold_tags: Sequence[int]) -> ad.Node:
    """Summed negative log-probability of the gold tags (not averaged)."""
    n = output.log_probs.value.shape[0]
    if len(gold_tags) != n:
        raise BaselineError(f"{len(gold_tags)} gold tags for {n} tokens")
    mask = np.zeros((n, 3))
    mask[np.arange(n), list(gold_tags)] = 1.0
    picked = ad.sum_all(ad.mul(output.log_probs, ad.constant(mask)))
    return ad.scale(picked, -1.0)


def _argmax_tag(row: np.ndarray) -> int:
    # Ties prefer outside, then begin. Softmax rows rarely tie, but the
    # uniform zero-parameter case must decode to all-outside.
    best = row.max()
    if row[COL_O] == best:
        return COL_O
    if row[COL_B] == best:
        return COL_B
    return COL_I


def decode_per_slot(probabilities: np.ndarray) -> list[tuple[int, int]]:
    """Spans [start, end) from per-token distributions for a single slot.

    Maximal begin(inside)* runs form spans; an inside tag with no open span
    starts one (repair rule).
    """
    spans: list[tuple[int, int]] = []
    open_start: int | None = None
    for pos, row in enumerate(probabilities):
        tag = _argmax_tag(row)
        if tag == COL_B:
            if open_start is not None:
                spans.append((open_start, pos))
            open_start = pos
        elif tag == COL_I:
            if open_start is None:
                open_start = pos
        else:
            if open_start is not None:
                spans.append((open_start, pos))
                open_start = None
    if open_start is not None:
        spans.append((open_start, len(probabilities)))
    return spans
