"""Feedforward ReLU networks: evaluation, random instances, bound propagation.

A network is a composition of affine layers with ReLU applied after every
layer except the last.  All objects in this module are immutable after
construction and all operations are pure functions, so everything can be
shared freely across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ReluNetwork",
    "Activations",
    "InputPolytope",
    "OutputHalfspace",
    "NeuronBounds",
    "forward",
    "random_network",
    "propagate_bounds",
    "network_to_json",
    "network_from_json",
    "save_network",
    "load_network",
]


def _as_matrix(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 2:
        raise ValueError(f"weight matrix must be 2-D, got shape {w.shape}")
    return w


def _as_vector(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"expected 1-D vector, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class ReluNetwork:
    """Weights and biases of a feedforward ReLU network.

    ``weights[i]`` has shape ``(dims[i+1], dims[i])`` and maps the
    post-activation values of layer ``i`` to the pre-activation values of
    layer ``i + 1``.  ReLU is applied after every layer except the last.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        weights = tuple(_as_matrix(w) for w in self.weights)
        biases = tuple(_as_vector(b) for b in self.biases)
        if len(weights) == 0:
            raise ValueError("network needs at least one layer")
        if len(weights) != len(biases):
            raise ValueError("weights and biases count mismatch")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {i}: bias length {b.shape[0]} != rows {w.shape[0]}")
            if min(w.shape) < 1:
                raise ValueError(f"layer {i}: empty dimension in shape {w.shape}")
            if i > 0 and w.shape[1] != weights[i - 1].shape[0]:
                raise ValueError(
                    f"layer {i}: expects {w.shape[1]} inputs, previous layer emits "
                    f"{weights[i - 1].shape[0]}"
                )
        for w in weights:
            w.setflags(write=False)
        for b in biases:
            b.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)

    @property
    def dims(self) -> tuple[int, ...]:
        """Layer widths ``(h_0, ..., h_n)``, input through output."""
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def num_hidden(self) -> int:
        """Neurons carrying a ReLU, i.e. all layers except input and output."""
        return sum(w.shape[0] for w in self.weights[:-1])


@dataclass(frozen=True)
class Activations:
    """All pre/post-activation values of one forward pass.

    ``pre[0]`` and ``post[0]`` are both the input vector; for hidden layers
    ``post[i] = max(0, pre[i])`` and the output layer has no activation.
    """

    pre: tuple[np.ndarray, ...]
    post: tuple[np.ndarray, ...]

    @property
    def output(self) -> np.ndarray:
        return self.post[-1]


@dataclass(frozen=True)
class InputPolytope:
    """Bounded polytopic input set ``{x | A x <= b}`` with optional box form.

    Box sets are expanded canonically to ``2 * h0`` halfspace rows: first all
    lower bounds as ``-x_j <= -lo_j``, then all upper bounds ``x_j <= hi_j``.
    This ordering is fixed so downstream slack indexing and CSV output are
    stable.
    """

    A: np.ndarray
    b: np.ndarray
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    def __post_init__(self):
        A = _as_matrix(self.A)
        b = _as_vector(self.b)
        if A.shape[0] != b.shape[0]:
            raise ValueError("row count mismatch between A and b")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        if self.lo is not None or self.hi is not None:
            lo = _as_vector(self.lo)
            hi = _as_vector(self.hi)
            if lo.shape != hi.shape or lo.shape[0] != A.shape[1]:
                raise ValueError("box bounds must match the input dimension")
            if np.any(lo > hi):
                raise ValueError("box lower bound exceeds upper bound")
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise ValueError("box bounds must be finite")
            lo.setflags(write=False)
            hi.setflags(write=False)
            object.__setattr__(self, "lo", lo)
            object.__setattr__(self, "hi", hi)

    @classmethod
    def from_box(cls, lo, hi) -> "InputPolytope":
        """Build the canonical halfspace expansion of a coordinate box."""
        lo = _as_vector(lo)
        hi = _as_vector(hi)
        k = lo.shape[0]
        A = np.vstack([-np.eye(k), np.eye(k)])
        b = np.concatenate([-lo, hi])
        return cls(A=A, b=b, lo=lo, hi=hi)

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def has_box(self) -> bool:
        return self.lo is not None

    def contains(self, x, tol: float = 0.0) -> bool:
        return bool(np.all(self.A @ np.asarray(x, float) <= self.b + tol))

    def violation(self, x) -> float:
        """Largest halfspace violation at ``x`` (<= 0 means feasible)."""
        return float(np.max(self.A @ np.asarray(x, float) - self.b))

    def clip(self, x) -> np.ndarray:
        """Clamp ``x`` into the box form (requires a box)."""
        if not self.has_box:
            raise ValueError("clip requires a box-form input set")
        return np.clip(np.asarray(x, float), self.lo, self.hi)


@dataclass(frozen=True)
class OutputHalfspace:
    """Output safety rule ``c @ f(x) >= d``."""

    c: np.ndarray
    d: float = 0.0

    def __post_init__(self):
        c = _as_vector(self.c)
        if not np.any(c != 0.0):
            raise ValueError("output direction must be nonzero")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", float(self.d))


@dataclass(frozen=True)
class NeuronBounds:
    """Interval bounds per layer; index 0 holds the input box.

    For layers ``i >= 1``, ``pre_lo[i] <= z_hat_i <= pre_hi[i]`` and the
    post-activation bounds are the pre bounds clipped at zero.  Entries are
    sound for every input in the originating box.
    """

    pre_lo: tuple[np.ndarray, ...]
    pre_hi: tuple[np.ndarray, ...]
    post_lo: tuple[np.ndarray, ...] = field(repr=False, default=())
    post_hi: tuple[np.ndarray, ...] = field(repr=False, default=())

    def __post_init__(self):
        if not self.post_lo:
            post_lo = (self.pre_lo[0],) + tuple(np.maximum(l, 0.0) for l in self.pre_lo[1:])
            post_hi = (self.pre_hi[0],) + tuple(np.maximum(u, 0.0) for u in self.pre_hi[1:])
            object.__setattr__(self, "post_lo", post_lo)
            object.__setattr__(self, "post_hi", post_hi)
        for lo, hi in zip(self.pre_lo, self.pre_hi):
            if np.any(lo > hi + 1e-12):
                raise ValueError("lower bound exceeds upper bound")

    @property
    def num_layers(self) -> int:
        return len(self.pre_lo) - 1


def forward(net: ReluNetwork, x) -> Activations:
    """Evaluate the network, recording every pre/post-activation vector."""
    x = _as_vector(x)
    if x.shape[0] != net.input_dim:
        raise ValueError(f"input length {x.shape[0]} != network input dim {net.input_dim}")
    pre = [x]
    post = [x]
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z_hat = w @ post[-1] + b
        pre.append(z_hat)
        last = i == net.num_layers - 1
        post.append(z_hat if last else np.maximum(z_hat, 0.0))
    return Activations(pre=tuple(pre), post=tuple(post))


def random_network(dims, seed: int) -> ReluNetwork:
    """Draw a network with i.i.d. uniform [-1, 1] weights and biases.

    Uses numpy's PCG64 generator seeded directly with ``seed``, so instances
    are reproducible across platforms.  Entries are drawn layer by layer,
    weights before bias, in layer order.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2:
        raise ValueError("dims needs at least an input and an output width")
    if min(dims) < 1:
        raise ValueError("all widths must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.uniform(-1.0, 1.0, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-1.0, 1.0, size=fan_out))
    return ReluNetwork(weights=tuple(weights), biases=tuple(biases))


def propagate_bounds(net: ReluNetwork, box: InputPolytope) -> NeuronBounds:
    """Interval-arithmetic bounds on every pre/post-activation value.

    Each layer maps post-activation intervals through the positive and
    negative parts of its weight matrix:
    ``pre_lo' = W+ @ lo + W- @ hi + b`` and symmetrically for the upper bound.
    """
    if not box.has_box:
        raise ValueError("bound propagation needs a box-form input set")
    if box.dim != net.input_dim:
        raise ValueError("box dimension does not match the network input")
    pre_lo = [box.lo]
    pre_hi = [box.hi]
    lo, hi = box.lo, box.hi
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        w_pos = np.maximum(w, 0.0)
        w_neg = np.minimum(w, 0.0)
        l_hat = w_pos @ lo + w_neg @ hi + b
        u_hat = w_pos @ hi + w_neg @ lo + b
        pre_lo.append(l_hat)
        pre_hi.append(u_hat)
        last = i == net.num_layers - 1
        lo = l_hat if last else np.maximum(l_hat, 0.0)
        hi = u_hat if last else np.maximum(u_hat, 0.0)
    return NeuronBounds(pre_lo=tuple(pre_lo), pre_hi=tuple(pre_hi))


def network_to_json(net: ReluNetwork) -> str:
    """Serialize to the on-disk format: a list of weight/bias layer objects.

    Floats go through ``repr`` and keep full double precision (17 significant
    digits).
    """
    layers = [
        {"weights": w.tolist(), "bias": b.tolist()}
        for w, b in zip(net.weights, net.biases)
    ]
    return json.dumps({"layers": layers}, indent=2)


def network_from_json(text: str) -> ReluNetwork:
    data = json.loads(text)
    layers = data["layers"]
    if not layers:
        raise ValueError("network file has no layers")
    return ReluNetwork(
        weights=tuple(np.asarray(layer["weights"], dtype=float) for layer in layers),
        biases=tuple(np.asarray(layer["bias"], dtype=float) for layer in layers),
    )


def save_network(net: ReluNetwork, path) -> None:
    with open(path, "w") as fh:
        fh.write(network_to_json(net))


def load_network(path) -> ReluNetwork:
    with open(path) as fh:
        return network_from_json(fh.read())
