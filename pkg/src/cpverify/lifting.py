"""Flat indexing of split neurons and slack variables, and row expansion.

Every neuron ``(i, j)`` contributes two coordinates to one flat vector: a
non-negative positive part and a non-negative negative part whose difference
is the neuron's pre-activation value (the input vector itself for layer 0).
Slack variables for inequality rows sit in a trailing block.  The block order
is: all positive parts (layer-major), all negative parts, slacks.

Constraint rows are stored sparsely; a row touches at most one layer's worth
of columns plus a slack.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Activations, OutputHalfspace, ReluNetwork, forward

__all__ = [
    "LiftingLayout",
    "LiftedRow",
    "build_layout",
    "expand_input_row",
    "expand_network_row",
    "objective_vector",
    "split_activations",
    "assemble_lifted",
    "rank_one_moment",
]


@dataclass(frozen=True)
class LiftingLayout:
    """Index map from neurons and slacks into a flat vector of length d.

    ``d = 2 * N + num_slacks`` where ``N`` is the total neuron count over all
    layers including input and output.
    """

    dims: tuple[int, ...]
    num_slacks: int

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(h) for h in self.dims))
        offsets = np.concatenate([[0], np.cumsum(self.dims)])
        object.__setattr__(self, "_offsets", offsets)

    @property
    def N(self) -> int:
        return int(self._offsets[-1])

    @property
    def d(self) -> int:
        return 2 * self.N + self.num_slacks

    def pos(self, layer: int, neuron: int) -> int:
        """Column of the positive part of neuron ``(layer, neuron)``."""
        self._check(layer, neuron)
        return int(self._offsets[layer]) + neuron

    def neg(self, layer: int, neuron: int) -> int:
        """Column of the negative part of neuron ``(layer, neuron)``."""
        self._check(layer, neuron)
        return self.N + int(self._offsets[layer]) + neuron

    def slack(self, k: int) -> int:
        if not 0 <= k < self.num_slacks:
            raise IndexError(f"slack index {k} out of range")
        return 2 * self.N + k

    def pos_block(self, layer: int) -> np.ndarray:
        start = int(self._offsets[layer])
        return np.arange(start, start + self.dims[layer])

    def neg_block(self, layer: int) -> np.ndarray:
        return self.pos_block(layer) + self.N

    def with_extra_slacks(self, count: int) -> "LiftingLayout":
        return LiftingLayout(dims=self.dims, num_slacks=self.num_slacks + count)

    def _check(self, layer, neuron):
        if not 0 <= layer < len(self.dims):
            raise IndexError(f"layer {layer} out of range")
        if not 0 <= neuron < self.dims[layer]:
            raise IndexError(f"neuron {neuron} out of range for layer {layer}")


@dataclass(frozen=True)
class LiftedRow:
    """Sparse row ``sum_k values[k] * vec[indices[k]]`` with a scalar rhs."""

    indices: np.ndarray
    values: np.ndarray
    rhs: float = 0.0

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=int)
        val = np.asarray(self.values, dtype=float)
        if idx.shape != val.shape or idx.ndim != 1:
            raise ValueError("indices and values must be 1-D and equal length")
        if not np.all(np.isfinite(val)):
            raise ValueError("row coefficients must be finite")
        keep = val != 0.0
        idx, val = idx[keep], val[keep]
        order = np.argsort(idx, kind="stable")
        idx, val = idx[order], val[order]
        if idx.size and np.any(np.diff(idx) == 0):
            # merge duplicate columns
            uniq, inverse = np.unique(idx, return_inverse=True)
            merged = np.zeros(uniq.size)
            np.add.at(merged, inverse, val)
            idx, val = uniq, merged
        idx.setflags(write=False)
        val.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)
        object.__setattr__(self, "rhs", float(self.rhs))

    def dot(self, vec: np.ndarray) -> float:
        return float(self.values @ vec[self.indices])

    def dense(self, d: int) -> np.ndarray:
        out = np.zeros(d)
        out[self.indices] = self.values
        return out

    def drop_slacks(self, layout: LiftingLayout) -> "LiftedRow":
        """Underline form: the same row with slack columns deleted."""
        keep = self.indices < 2 * layout.N
        return LiftedRow(self.indices[keep], self.values[keep], self.rhs)


def build_layout(net: ReluNetwork, num_slacks: int) -> LiftingLayout:
    """Layout covering every neuron of ``net`` plus ``num_slacks`` slacks."""
    if num_slacks < 0:
        raise ValueError("slack count must be non-negative")
    return LiftingLayout(dims=net.dims, num_slacks=num_slacks)


def expand_input_row(a_row, rhs: float, layout: LiftingLayout,
                     slack_index: int | None = None) -> LiftedRow:
    """Expand one input halfspace row onto the flat vector.

    The row reads ``a_row @ x <= rhs`` with ``x`` the input; on split
    variables that is ``+a_row`` on the layer-0 positive block and ``-a_row``
    on the negative block.  With ``slack_index`` given, a ``+1`` slack entry
    turns it into the equality form; omitting it yields the underline
    (slack-free inequality) form.
    """
    a_row = np.asarray(a_row, dtype=float)
    h0 = layout.dims[0]
    if a_row.shape != (h0,):
        raise ValueError(f"input row must have length {h0}")
    indices = np.concatenate([layout.pos_block(0), layout.neg_block(0)])
    values = np.concatenate([a_row, -a_row])
    if slack_index is not None:
        indices = np.append(indices, layout.slack(slack_index))
        values = np.append(values, 1.0)
    return LiftedRow(indices, values, rhs)


def expand_network_row(net: ReluNetwork, layer: int, neuron: int,
                       layout: LiftingLayout) -> LiftedRow:
    """Equality row tying neuron ``(layer + 1, neuron)`` to the layer below.

    Encodes ``lam+_{layer+1,j} - lam-_{layer+1,j} - W[layer]_j . (input to
    layer) = b[layer]_j``.  Layer 0 feeds the raw input, i.e. the difference
    of the layer-0 splits; deeper layers feed post-activation values, which
    are exactly the positive parts.
    """
    if not 0 <= layer < net.num_layers:
        raise IndexError(f"layer {layer} out of range")
    w_row = net.weights[layer][neuron]
    indices = [layout.pos(layer + 1, neuron), layout.neg(layer + 1, neuron)]
    values = [1.0, -1.0]
    indices.extend(layout.pos_block(layer).tolist())
    values.extend((-w_row).tolist())
    if layer == 0:
        indices.extend(layout.neg_block(0).tolist())
        values.extend(w_row.tolist())
    return LiftedRow(np.array(indices), np.array(values), float(net.biases[layer][neuron]))


def objective_vector(output: OutputHalfspace, layout: LiftingLayout) -> LiftedRow:
    """Objective row reading ``c @ (lam+_n - lam-_n)`` off the last layer."""
    n = len(layout.dims) - 1
    if output.c.shape[0] != layout.dims[n]:
        raise ValueError("output direction does not match the last layer width")
    indices = np.concatenate([layout.pos_block(n), layout.neg_block(n)])
    values = np.concatenate([output.c, -output.c])
    return LiftedRow(indices, values, 0.0)


def split_activations(acts: Activations) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Positive/negative splits of every layer's pre-activation vector.

    For hidden layers this coincides with ``(z, z - z_hat)``; for the input
    and output layers it is the plain positive/negative part decomposition.
    """
    plus = [np.maximum(z_hat, 0.0) for z_hat in acts.pre]
    minus = [np.maximum(-z_hat, 0.0) for z_hat in acts.pre]
    return plus, minus


def assemble_lifted(net: ReluNetwork, x, layout: LiftingLayout,
                    slack_rows=()) -> np.ndarray:
    """Lifted vector of a true forward pass at ``x``.

    ``slack_rows`` supplies one underline-form :class:`LiftedRow` per slack
    slot, in slack order; each slack takes the value ``rhs - row(vec)``.
    """
    if len(slack_rows) != layout.num_slacks:
        raise ValueError(
            f"need {layout.num_slacks} slack definitions, got {len(slack_rows)}"
        )
    acts = forward(net, x)
    plus, minus = split_activations(acts)
    vec = np.zeros(layout.d)
    for i in range(len(layout.dims)):
        vec[layout.pos_block(i)] = plus[i]
        vec[layout.neg_block(i)] = minus[i]
    for k, row in enumerate(slack_rows):
        vec[layout.slack(k)] = row.rhs - row.dot(vec)
    return vec


def rank_one_moment(vec: np.ndarray) -> np.ndarray:
    """Bordered rank-one moment matrix of a lifted vector."""
    v = np.append(np.asarray(vec, dtype=float), 1.0)
    return np.outer(v, v)
