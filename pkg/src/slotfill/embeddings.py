"""Vocabulary construction and embedding tables.

Tokens are lowercased everywhere. Index 0 is reserved for padding and
index 1 for the unknown token; remaining ids follow lexicographic order so
a rebuilt vocabulary over the same corpus is always identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1

# Tag embedding row order, shared by the label encoder and the taggers.
TAG_B, TAG_I, TAG_O = 0, 1, 2

INIT_SCALE = 0.1  # all trainable parameters start in U[-0.1, 0.1]


class EmbeddingError(Exception):
    pass


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    id_of: dict[str, int] = field(repr=False)
    counts: dict[str, int] = field(repr=False)

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        """Map tokens to ids; anything unseen becomes the unknown id."""
        return [self.id_of.get(t.lower(), UNK_ID) for t in tokens]

    @property
    def singleton_ids(self) -> frozenset[int]:
        """Ids of tokens that occurred exactly once in the corpus."""
        return frozenset(self.id_of[t] for t, c in self.counts.items() if c == 1)


def build_vocabulary(
    utterance_tokens: Iterable[Sequence[str]],
    extra_tokens: Iterable[Sequence[str]] = (),
) -> Vocabulary:
    """Build a vocabulary from corpus utterances.

    ``extra_tokens`` (slot description words, typically) get ids but no
    occurrence counts: they must be embeddable but are never candidates
    for unknown-token replacement.
    """
    counts: dict[str, int] = {}
    for toks in utterance_tokens:
        if isinstance(toks, str):
            raise EmbeddingError("utterance_tokens must hold token lists, not strings")
        for t in toks:
            t = t.lower()
            counts[t] = counts.get(t, 0) + 1
    seen = set(counts)
    for toks in extra_tokens:
        # A bare string would iterate as characters and silently poison the
        # vocabulary with single letters, so it is rejected outright.
        if isinstance(toks, str):
            raise EmbeddingError("extra_tokens must hold token lists, not strings")
        seen.update(t.lower() for t in toks)
    ordered = [PAD_TOKEN, UNK_TOKEN] + sorted(seen)
    id_of = {t: i for i, t in enumerate(ordered)}
    if len(id_of) != len(ordered):
        raise EmbeddingError("corpus tokens collide with the reserved pad/unk names")
    return Vocabulary(tokens=tuple(ordered), id_of=id_of, counts=counts)


def load_pretrained(path: str, dim: int) -> dict[str, np.ndarray]:
    """Parse a text embedding file: one token plus ``dim`` floats per line."""
    vectors: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != dim + 1:
                raise EmbeddingError(
                    f"{path}: line {lineno}: expected a token and {dim} values, "
                    f"got {len(parts)} fields"
                )
            try:
                vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
            except ValueError as err:
                raise EmbeddingError(f"{path}: line {lineno}: {err}") from None
            if not np.isfinite(vec).all():
                raise EmbeddingError(f"{path}: line {lineno}: non-finite value")
            vectors[parts[0].lower()] = vec
    return vectors


def init_word_table(
    vocab: Vocabulary,
    dim: int,
    rng: np.random.Generator,
    pretrained: dict[str, np.ndarray] | None = None,
) -> np.ndarray:
    """Word embedding matrix [|V|, dim].

    Every row is drawn before pretrained vectors overwrite their rows, so
    the random state consumed here does not depend on file contents. The
    pad row is zeroed; nothing in the models ever looks it up.
    """
    table = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(len(vocab), dim))
    table[PAD_ID, :] = 0.0
    if pretrained:
        for token, vec in pretrained.items():
            if vec.shape != (dim,):
                raise EmbeddingError(
                    f"pretrained vector for '{token}' has {vec.shape[0]} values, expected {dim}"
                )
            idx = vocab.id_of.get(token)
            if idx is not None and idx != PAD_ID:
                table[idx, :] = vec
    return table


def init_tag_table(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Tag embedding matrix with rows in B, I, O order."""
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=(3, dim))


def embed_tokens(tokens: Sequence[str], table: ad.Node | np.ndarray, vocab: Vocabulary) -> ad.Node:
    """Rows of the word table for ``tokens``, as a differentiable [n, dim] node."""
    node = table if isinstance(table, ad.Node) else ad.constant(table)
    return ad.lookup(node, vocab.encode(tokens))


def unk_replace(
    ids: Sequence[int],
    singleton_ids: frozenset[int],
    rng: np.random.Generator,
    p: float = 0.5,
) -> list[int]:
    """Training-time noise: singleton tokens flip to unknown with prob p.

    Drawn independently per occurrence, so the same rare word can survive
    in one epoch and be masked in the next.
    """
    return [UNK_ID if (i in singleton_ids and rng.random() < p) else i for i in ids]
