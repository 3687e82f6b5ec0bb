"""Bidirectional LSTM over token embeddings.

Both directions start from zero states and their per-step outputs are
concatenated, so position i sees the whole utterance. Gate blocks inside
the packed weight matrices are ordered input, forget, cell, output; the
forget block of the bias starts at 1.0 and everything else in U[-0.1, 0.1].
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .embeddings import INIT_SCALE

DIRECTIONS = ("fwd", "bwd")
PARAM_KEYS = ("Wx", "Wh", "b")


def init_bilstm(
    prefix: str,
    in_dim: int,
    hidden: int,
    rng: np.random.Generator,
) -> dict[str, np.ndarray]:
    """Parameters for both directions; ``hidden`` is per direction."""
    params: dict[str, np.ndarray] = {}
    for direction in DIRECTIONS:
        wx = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(in_dim, 4 * hidden))
        wh = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(hidden, 4 * hidden))
        b = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(1, 4 * hidden))
        b[0, hidden : 2 * hidden] = 1.0  # open forget gates at the start of training
        params[f"{prefix}.{direction}.Wx"] = wx
        params[f"{prefix}.{direction}.Wh"] = wh
        params[f"{prefix}.{direction}.b"] = b
    return params


def _run_direction(
    steps: Sequence[ad.Node],
    wx: ad.Node,
    wh: ad.Node,
    b: ad.Node,
) -> list[ad.Node]:
    hidden = wh.value.shape[0]
    h = ad.constant(np.zeros((1, hidden)))
    c = ad.constant(np.zeros((1, hidden)))
    outputs = []
    for x in steps:
        pre = ad.add(ad.add(ad.matmul(x, wx), ad.matmul(h, wh)), b)
        i_gate = ad.sigmoid(ad.slice_axis(pre, 1, 0, hidden))
        f_gate = ad.sigmoid(ad.slice_axis(pre, 1, hidden, 2 * hidden))
        g_cell = ad.tanh(ad.slice_axis(pre, 1, 2 * hidden, 3 * hidden))
        o_gate = ad.sigmoid(ad.slice_axis(pre, 1, 3 * hidden, 4 * hidden))
        c = ad.add(ad.mul(f_gate, c), ad.mul(i_gate, g_cell))
        h = ad.mul(o_gate, ad.tanh(c))
        outputs.append(h)
    return outputs


def extract_features(
    x: ad.Node,
    params: Mapping[str, ad.Node],
    prefix: str,
) -> ad.Node:
    """Contextual features [n, 2 * hidden] for an [n, in_dim] input.

    The backward pass is the same recurrence run over the reversed step
    sequence, with its outputs put back into utterance order.
    """
    n = x.value.shape[0]
    steps = [ad.slice_axis(x, 0, t, t + 1) for t in range(n)]
    fwd = _run_direction(
        steps, params[f"{prefix}.fwd.Wx"], params[f"{prefix}.fwd.Wh"], params[f"{prefix}.fwd.b"]
    )
    bwd = _run_direction(
        steps[::-1], params[f"{prefix}.bwd.Wx"], params[f"{prefix}.bwd.Wh"], params[f"{prefix}.bwd.b"]
    )[::-1]
    left = fwd[0] if n == 1 else ad.concat(fwd, axis=0)
    right = bwd[0] if n == 1 else ad.concat(bwd, axis=0)
    return ad.concat([left, right], axis=1)
