"""Reverse-mode automatic differentiation over dense float64 matrices.

Every node in the computation graph holds a 2-D numpy array. Scalars are
represented as [1, 1] arrays and vectors as [1, n] or [n, 1]; there is no
implicit broadcasting anywhere. Keeping the value space this small makes
every gradient rule checkable against finite differences with no edge
cases hiding in shape promotion.

The primitive set is closed: matmul (with transpose flags), add, mul,
scale, concat, slice_axis, tanh, sigmoid, exp, log, logsumexp, lookup,
sum_all and sum_axis. Higher-level models compose these and nothing else.
"""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

Array = np.ndarray


class AutodiffError(Exception):
    """Base class for graph construction and backward-pass failures."""


class ShapeError(AutodiffError):
    """Operands have incompatible or non-2-D shapes."""


class NonFiniteError(AutodiffError):
    """An operation produced NaN or infinity."""


def _as_matrix(value) -> Array:
    out = np.asarray(value, dtype=np.float64)
    if out.ndim == 0:
        out = out.reshape(1, 1)
    if out.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got shape {out.shape}")
    return out


def _check_finite(value: Array, op: str) -> Array:
    # np.isfinite(...).all() over the block is cheaper than elementwise reduce
    # chains and this check runs on every node construction.
    if not np.isfinite(value).all():
        raise NonFiniteError(f"operation '{op}' produced a non-finite value")
    return value


class Node:
    """One value in the graph plus the recipe for its parent gradients.

    ``vjp`` maps the gradient at this node to a tuple of gradients, one per
    parent, in parent order. Leaves have no parents and no vjp.
    """

    __slots__ = ("value", "parents", "vjp", "op")

    def __init__(
        self,
        value: Array,
        parents: tuple["Node", ...] = (),
        vjp: Callable[[Array], tuple[Array, ...]] | None = None,
        op: str = "leaf",
    ):
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.op = op

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(op={self.op!r}, shape={self.value.shape})"


def constant(value) -> Node:
    """Wrap an array (or nested list / scalar) as a graph leaf."""
    return Node(_check_finite(_as_matrix(value), "constant"))


def _make(value: Array, parents: tuple[Node, ...], vjp, op: str) -> Node:
    return Node(_check_finite(value, op), parents, vjp, op)


def matmul(a: Node, b: Node, transpose_a: bool = False, transpose_b: bool = False) -> Node:
    """Matrix product with optional transposes folded into the primitive.

    Folding the transposes in keeps the graph free of explicit transpose
    nodes, which would otherwise dominate the recurrent models.
    """
    av = a.value.T if transpose_a else a.value
    bv = b.value.T if transpose_b else b.value
    if av.shape[1] != bv.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions differ: {av.shape} @ {bv.shape}"
        )
    out = av @ bv

    def vjp(g: Array) -> tuple[Array, Array]:
        # Derived case by case from d(A@B) = G@B^T, A^T@G, then mapping the
        # effective operands back through the transpose flags.
        if not transpose_a and not transpose_b:
            ga = g @ b.value.T
            gb = a.value.T @ g
        elif not transpose_a and transpose_b:
            ga = g @ b.value
            gb = g.T @ a.value
        elif transpose_a and not transpose_b:
            ga = b.value @ g.T
            gb = a.value @ g
        else:
            ga = b.value.T @ g.T
            gb = g.T @ a.value.T
        return ga, gb

    return _make(out, (a, b), vjp, "matmul")


def add(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"add requires equal shapes, got {a.value.shape} and {b.value.shape}")
    return _make(a.value + b.value, (a, b), lambda g: (g, g), "add")


def mul(a: Node, b: Node) -> Node:
    """Elementwise (Hadamard) product."""
    if a.value.shape != b.value.shape:
        raise ShapeError(f"mul requires equal shapes, got {a.value.shape} and {b.value.shape}")
    return _make(a.value * b.value, (a, b), lambda g: (g * b.value, g * a.value), "mul")


def scale(a: Node, factor: float) -> Node:
    """Multiply by a python float (not a graph value; no gradient to it)."""
    factor = float(factor)
    return _make(a.value * factor, (a,), lambda g: (g * factor,), "scale")


def tanh(a: Node) -> Node:
    out = np.tanh(a.value)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: Node) -> Node:
    # Stable in both tails: exp is only ever applied to non-positive values.
    v = a.value
    out = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.clip(v, 0, None))),
                   np.exp(np.clip(v, None, 0)) / (1.0 + np.exp(np.clip(v, None, 0))))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def exp(a: Node) -> Node:
    with np.errstate(over="ignore"):  # overflow is reported as NonFiniteError, not a warning
        out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Node) -> Node:
    if np.any(a.value <= 0):
        raise NonFiniteError("log of a non-positive value")
    return _make(np.log(a.value), (a,), lambda g: (g / a.value,), "log")


def logsumexp(a: Node, axis: int) -> Node:
    """log(sum(exp(a))) along ``axis``, keeping the axis with size 1.

    Uses the max-shift form so large positive potentials do not overflow.
    The gradient is the softmax along the reduced axis.
    """
    if axis not in (0, 1):
        raise ShapeError(f"logsumexp axis must be 0 or 1, got {axis}")
    v = a.value
    m = np.max(v, axis=axis, keepdims=True)
    shifted = np.exp(v - m)
    total = np.sum(shifted, axis=axis, keepdims=True)
    out = m + np.log(total)
    soft = shifted / total

    def vjp(g: Array) -> tuple[Array]:
        return (soft * g,)  # g keeps the reduced axis at size 1, so this broadcasts rows/cols of soft

    return _make(out, (a,), vjp, "logsumexp")


def concat(parts: Sequence[Node], axis: int) -> Node:
    if axis not in (0, 1):
        raise ShapeError(f"concat axis must be 0 or 1, got {axis}")
    if not parts:
        raise ShapeError("concat of zero parts")
    other = 1 - axis
    first = parts[0].value.shape[other]
    for p in parts:
        if p.value.shape[other] != first:
            raise ShapeError(
                f"concat parts disagree on axis {other}: "
                f"{[p.value.shape for p in parts]}"
            )
    out = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g: Array) -> tuple[Array, ...]:
        if axis == 0:
            return tuple(g[offsets[i]:offsets[i + 1], :] for i in range(len(parts)))
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _make(out, tuple(parts), vjp, "concat")


def slice_axis(a: Node, axis: int, start: int, stop: int) -> Node:
    if axis not in (0, 1):
        raise ShapeError(f"slice axis must be 0 or 1, got {axis}")
    size = a.value.shape[axis]
    if not (0 <= start < stop <= size):
        raise ShapeError(
            f"slice [{start}:{stop}] out of range for axis {axis} of shape {a.value.shape}"
        )
    out = a.value[start:stop, :] if axis == 0 else a.value[:, start:stop]
    out = np.ascontiguousarray(out)

    def vjp(g: Array) -> tuple[Array]:
        full = np.zeros_like(a.value)
        if axis == 0:
            full[start:stop, :] = g
        else:
            full[:, start:stop] = g
        return (full,)

    return _make(out, (a,), vjp, "slice")


def lookup(table: Node, indices: Sequence[int]) -> Node:
    """Gather rows of ``table``; gradients scatter-add back into the rows."""
    idx = np.asarray(list(indices), dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise ShapeError("lookup requires a non-empty 1-D index list")
    rows = table.value.shape[0]
    if np.any(idx < 0) or np.any(idx >= rows):
        raise ShapeError(f"lookup index out of range for table with {rows} rows")
    out = table.value[idx, :]

    def vjp(g: Array) -> tuple[Array]:
        full = np.zeros_like(table.value)
        np.add.at(full, idx, g)  # repeated indices must accumulate
        return (full,)

    return _make(out, (table,), vjp, "lookup")


def sum_all(a: Node) -> Node:
    out = np.array([[np.sum(a.value)]])
    return _make(out, (a,), lambda g: (np.full_like(a.value, float(g[0, 0])),), "sum_all")


def sum_axis(a: Node, axis: int) -> Node:
    if axis not in (0, 1):
        raise ShapeError(f"sum axis must be 0 or 1, got {axis}")
    out = np.sum(a.value, axis=axis, keepdims=True)

    def vjp(g: Array) -> tuple[Array]:
        return (np.broadcast_to(g, a.value.shape).copy(),)

    return _make(out, (a,), vjp, "sum_axis")


def affine(x: Node, w: Node, b: Node) -> Node:
    """x @ w with a [1, k] bias replicated across rows.

    Composite of primitives: the replication is a rank-1 matmul against a
    ones column, which keeps the graph free of broadcasting rules.
    """
    ones = constant(np.ones((x.value.shape[0], 1)))
    return add(matmul(x, w), matmul(ones, b))


def _topo_order(root: Node) -> list[Node]:
    # Iterative post-order walk; the LSTM graphs are thousands of nodes deep
    # and python's recursion limit is not part of the contract.
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Node, leaves: Mapping[str, Node]) -> dict[str, Array]:
    """Accumulate d(loss)/d(leaf) for every named leaf.

    ``loss`` must hold exactly one element. Leaves that the loss does not
    depend on come back as zero arrays of the leaf's shape. Interior grads
    are dropped as soon as they have been propagated, so peak memory stays
    proportional to graph width rather than depth.
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.value.shape}")
    keep = {id(node) for node in leaves.values()}
    grads: dict[int, Array] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topo_order(loss)):
        g = grads.get(id(node))
        if id(node) not in keep:
            grads.pop(id(node), None)
        if g is None or node.vjp is None:
            continue
        parent_grads = node.vjp(g)
        if len(parent_grads) != len(node.parents):
            raise AutodiffError(f"vjp for '{node.op}' returned {len(parent_grads)} gradients "
                                f"for {len(node.parents)} parents")
        for parent, pg in zip(node.parents, parent_grads):
            if pg.shape != parent.value.shape:
                raise ShapeError(
                    f"gradient for parent of '{node.op}' has shape {pg.shape}, "
                    f"expected {parent.value.shape}"
                )
            if not np.isfinite(pg).all():
                raise NonFiniteError(f"backward through '{node.op}' produced a non-finite gradient")
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg
    return {
        name: grads.get(id(node), np.zeros_like(node.value))
        for name, node in leaves.items()
    }


def finite_difference(
    loss_fn: Callable[[Mapping[str, Array]], float],
    params: Mapping[str, Array],
    step: float = 1e-5,
) -> dict[str, Array]:
    """Central-difference gradient of ``loss_fn`` at ``params``.

    This is the oracle every analytic gradient in the package is tested
    against. It is O(2 * total parameter count) loss evaluations, so keep
    the probe models small.
    """
    work = {name: np.array(value, dtype=np.float64, copy=True) for name, value in params.items()}
    grads: dict[str, Array] = {}
    for name, value in work.items():
        g = np.zeros_like(value)
        flat = value.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn(work)
            flat[i] = orig - step
            down = loss_fn(work)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        grads[name] = g
    return grads


def relative_error(analytic: Array, numeric: Array) -> float:
    """Worst-case elementwise relative error between two gradient arrays."""
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(
    build_loss: Callable[[Mapping[str, Node]], Node],
    params: Mapping[str, Array],
    step: float = 1e-5,
) -> dict[str, float]:
    """Compare backward() against finite differences for each parameter.

    ``build_loss`` receives freshly wrapped leaves and must rebuild the
    graph from scratch, so the same function serves both the analytic and
    the numeric paths. Returns the max relative error per parameter name.
    """
    leaves = {name: constant(value) for name, value in params.items()}
    analytic = backward(build_loss(leaves), leaves)

    def numeric_loss(values: Mapping[str, Array]) -> float:
        fresh = {name: constant(v) for name, v in values.items()}
        return float(build_loss(fresh).value.reshape(()))

    numeric = finite_difference(numeric_loss, params, step=step)
    return {name: relative_error(analytic[name], numeric[name]) for name in params}
