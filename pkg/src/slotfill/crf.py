"""Linear-chain CRF over description-conditioned label vectors.

The score of a labeling is a sum of node potentials (label vector dotted
with the token's contextual feature) and edge potentials (a bilinear form
between adjacent label vectors). There are no start or stop potentials and
no hard transition constraints; everything about label compatibility must
be carried by the learned edge table.

The partition function is computed by the forward algorithm in log space,
built out of differentiable primitives so the conditional likelihood can
be trained directly. Decoding is plain Viterbi on the numeric tables.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad


class CrfError(Exception):
    pass


@dataclass
class PotentialTable:
    """node[i][j]: token i with label j; edge[j][k]: label j followed by k."""

    node: ad.Node
    edge: ad.Node

    def __post_init__(self):
        n_labels = self.node.value.shape[1]
        if self.edge.value.shape != (n_labels, n_labels):
            raise CrfError(
                f"edge table {self.edge.value.shape} does not match "
                f"{n_labels} labels in the node table"
            )

    @property
    def length(self) -> int:
        return self.node.value.shape[0]

    @property
    def n_labels(self) -> int:
        return self.node.value.shape[1]


def build_potentials(
    features: ad.Node,
    labels: ad.Node,
    w: ad.Node,
    edge_masked: bool = False,
) -> PotentialTable:
    """Potential tables from contextual features [n, d] and label matrix [S, d].

    With ``edge_masked`` the edge table is a zero constant: it contributes
    nothing to any score and, because the mask removes W from the graph
    entirely, W's gradient is exactly zero rather than merely small.
    """
    if features.value.shape[1] != labels.value.shape[1]:
        raise CrfError(
            f"feature dim {features.value.shape[1]} does not match "
            f"label dim {labels.value.shape[1]}"
        )
    if w.value.shape != (labels.value.shape[1],) * 2:
        raise CrfError(
            f"edge matrix must be square of side {labels.value.shape[1]}, "
            f"got {w.value.shape}"
        )
    node = ad.matmul(features, labels, transpose_b=True)
    if edge_masked:
        edge = ad.constant(np.zeros((labels.value.shape[0],) * 2))
    else:
        edge = ad.matmul(ad.matmul(labels, w), labels, transpose_b=True)
    return PotentialTable(node=node, edge=edge)


def _check_sequence(y: Sequence[int], table: PotentialTable) -> list[int]:
    y = [int(v) for v in y]
    if len(y) != table.length:
        raise CrfError(f"sequence length {len(y)} does not match {table.length} tokens")
    for v in y:
        if not 0 <= v < table.n_labels:
            raise CrfError(f"label index {v} out of range for {table.n_labels} labels")
    return y


def score_sequence(y: Sequence[int], table: PotentialTable) -> ad.Node:
    """Unnormalized score of one labeling, differentiable in both tables."""
    y = _check_sequence(y, table)
    n, s = table.length, table.n_labels
    node_mask = np.zeros((n, s))
    node_mask[np.arange(n), y] = 1.0
    total = ad.sum_all(ad.mul(table.node, ad.constant(node_mask)))
    if n > 1:
        edge_mask = np.zeros((s, s))
        np.add.at(edge_mask, (y[:-1], y[1:]), 1.0)  # repeated transitions accumulate
        total = ad.add(total, ad.sum_all(ad.mul(table.edge, ad.constant(edge_mask))))
    return total


def log_partition(table: PotentialTable) -> ad.Node:
    """log of the sum of exp(score) over all label sequences.

    Forward recursion: alpha holds log-masses for sequences ending at the
    current position with each label. The [S, S] candidate matrix at each
    step is alpha replicated across columns plus the edge table; the
    replication is a rank-1 matmul so the whole recursion stays inside the
    primitive set.
    """
    n, s = table.length, table.n_labels
    alpha = ad.slice_axis(table.node, 0, 0, 1)
    if n > 1:
        ones_row = ad.constant(np.ones((1, s)))
        for i in range(1, n):
            replicated = ad.matmul(alpha, ones_row, transpose_a=True)
            candidates = ad.add(replicated, table.edge)
            alpha = ad.add(ad.logsumexp(candidates, axis=0),
                           ad.slice_axis(table.node, 0, i, i + 1))
    return ad.logsumexp(alpha, axis=1)


def log_likelihood(y: Sequence[int], table: PotentialTable) -> ad.Node:
    """log p(y | tables); never positive."""
    return ad.add(score_sequence(y, table), ad.scale(log_partition(table), -1.0))


def viterbi_decode(table: PotentialTable) -> tuple[list[int], float]:
    """Highest-scoring label sequence and its score.

    Ties break toward the smaller label index, both for the final position
    and at every backtrack step (argmax returns the first maximum).
    """
    node = table.node.value
    edge = table.edge.value
    n, s = node.shape
    scores = node[0].copy()
    back = np.zeros((n, s), dtype=np.int64)
    for t in range(1, n):
        candidates = scores[:, None] + edge
        back[t] = np.argmax(candidates, axis=0)
        scores = candidates[back[t], np.arange(s)] + node[t]
    path = [int(np.argmax(scores))]
    for t in range(n - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    path.reverse()
    total = float(node[np.arange(n), path].sum() + edge[path[:-1], path[1:]].sum())
    return path, total


@dataclass
class InspectResult:
    """Numeric view of one utterance's tables and decodes.

    ``path_node_only`` is the Viterbi path with the edge table zeroed
    (equivalently, per-position argmax of node scores); ``path_full`` uses
    both tables. Comparing the two shows what the edge potentials fix.
    """

    node: np.ndarray
    edge: np.ndarray
    path_node_only: list[int]
    path_full: list[int]


def inspect_table(table: PotentialTable) -> InspectResult:
    zero_edge = PotentialTable(
        node=ad.constant(table.node.value),
        edge=ad.constant(np.zeros_like(table.edge.value)),
    )
    return InspectResult(
        node=table.node.value.copy(),
        edge=table.edge.value.copy(),
        path_node_only=viterbi_decode(zero_edge)[0],
        path_full=viterbi_decode(table)[0],
    )
