"""Exact verification values by activation-pattern enumeration.

Fixing an ACTIVE/INACTIVE assignment for every hidden neuron makes the
network affine on the corresponding region of input space, so the global
minimum is the best value over all pattern-restricted linear programs.  The
LPs are solved with a self-contained dense two-phase simplex (Bland's rule)
that shares no machinery with the first-order conic solver, keeping this
module usable as an independent ground truth.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .network import (
    Activations,
    InputPolytope,
    NeuronBounds,
    OutputHalfspace,
    ReluNetwork,
    forward,
)

__all__ = [
    "ActivationPattern",
    "OracleResult",
    "LinearProgram",
    "LpStatus",
    "LpResult",
    "pattern_lp",
    "solve_lp",
    "exact_verify",
    "sample_upper_bound",
    "refined_upper_bound",
]

ACTIVE = 1
INACTIVE = 0


@dataclass(frozen=True)
class ActivationPattern:
    """One bit per hidden neuron, layer-major; 1 = ACTIVE (z = z_hat >= 0)."""

    bits: tuple[int, ...]

    @classmethod
    def from_activations(cls, net: ReluNetwork, acts: Activations) -> "ActivationPattern":
        bits = []
        for i in range(1, net.num_layers):
            bits.extend(int(v >= 0.0) for v in acts.pre[i])
        return cls(bits=tuple(bits))

    def per_layer(self, net: ReluNetwork) -> list[np.ndarray]:
        out = []
        k = 0
        for i in range(1, net.num_layers):
            h = net.dims[i]
            out.append(np.array(self.bits[k:k + h], dtype=float))
            k += h
        if k != len(self.bits):
            raise ValueError("pattern does not cover the hidden neurons")
        return out


@dataclass(frozen=True)
class OracleResult:
    opt: float
    argmin: np.ndarray
    pattern: ActivationPattern
    patterns_feasible: int


class LpStatus(enum.Enum):
    OPTIMAL = "OPTIMAL"
    INFEASIBLE = "INFEASIBLE"
    UNBOUNDED = "UNBOUNDED"


@dataclass(frozen=True)
class LinearProgram:
    """min objective @ x + const  subject to  A_ub @ x <= b_ub, x free."""

    objective: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    const: float = 0.0


@dataclass(frozen=True)
class LpResult:
    status: LpStatus
    value: float = np.nan
    x: np.ndarray | None = None


_ZERO = 1e-10
_ENTER = 1e-9
_FEAS = 1e-8


def _bland_simplex(T, basis, cost, forbid=()):
    """Minimize over the tableau in place; returns 'optimal' or 'unbounded'.

    ``cost`` is the reduced-cost row (updated in place), ``forbid`` columns
    never enter.  Bland's rule on both the entering and leaving choice, so
    cycling is impossible.
    """
    m = T.shape[0]
    forbid = set(forbid)
    for _ in range(100_000):
        enter = -1
        for j in range(T.shape[1] - 1):
            if j not in forbid and cost[j] < -_ENTER:
                enter = j
                break
        if enter < 0:
            return "optimal"
        leave = -1
        best = np.inf
        for i in range(m):
            a = T[i, enter]
            if a > _ZERO:
                ratio = T[i, -1] / a
                if ratio < best - _ZERO or (ratio < best + _ZERO and
                                            (leave < 0 or basis[i] < basis[leave])):
                    best = ratio
                    leave = i
        if leave < 0:
            return "unbounded"
        piv = T[leave, enter]
        T[leave] /= piv
        for i in range(m):
            if i != leave and abs(T[i, enter]) > 1e-14:
                T[i] -= T[i, enter] * T[leave]
        cost -= cost[enter] * T[leave]
        basis[leave] = enter
    raise RuntimeError("simplex iteration limit reached")


def solve_lp(lp: LinearProgram) -> LpResult:
    """Two-phase dense simplex for small inequality-form LPs.

    Free variables are split into positive and negative parts; every row gets
    a slack, and rows with a negative right-hand side get an artificial
    variable for phase one.
    """
    g = np.asarray(lp.objective, dtype=float)
    A = np.asarray(lp.A_ub, dtype=float)
    b = np.asarray(lp.b_ub, dtype=float)
    m, k = A.shape
    if g.shape != (k,):
        raise ValueError("objective length does not match constraint columns")

    E = np.hstack([A, -A, np.eye(m)])
    f = b.copy()
    flip = f < 0
    E[flip] *= -1.0
    f[flip] *= -1.0
    art_rows = np.nonzero(flip)[0]
    n_core = 2 * k + m
    n_art = art_rows.size
    T = np.zeros((m, n_core + n_art + 1))
    T[:, :n_core] = E
    T[:, -1] = f
    basis = []
    art_cols = []
    ai = 0
    for i in range(m):
        if flip[i]:
            col = n_core + ai
            T[i, col] = 1.0
            basis.append(col)
            art_cols.append(col)
            ai += 1
        else:
            basis.append(2 * k + i)

    if n_art:
        cost = np.zeros(n_core + n_art + 1)
        cost[n_core:n_core + n_art] = 1.0
        for i, bc in enumerate(basis):
            if bc >= n_core:
                cost -= T[i]
        if _bland_simplex(T, basis, cost) != "optimal":
            raise RuntimeError("phase-1 LP cannot be unbounded")
        phase1 = sum(T[i, -1] for i, bc in enumerate(basis) if bc >= n_core)
        if phase1 > _FEAS * (1.0 + np.abs(b).max(initial=0.0)):
            return LpResult(status=LpStatus.INFEASIBLE)
        # pivot leftover artificials out where possible; rows that cannot
        # pivot are redundant and keep a zero-valued artificial basic
        for i, bc in enumerate(basis):
            if bc >= n_core:
                for j in range(n_core):
                    if abs(T[i, j]) > _ZERO:
                        piv = T[i, j]
                        T[i] /= piv
                        for r in range(m):
                            if r != i and abs(T[r, j]) > 1e-14:
                                T[r] -= T[r, j] * T[i]
                        basis[i] = j
                        break

    cost = np.zeros(T.shape[1])
    cost[:k] = g
    cost[k:2 * k] = -g
    for i, bc in enumerate(basis):
        if abs(cost[bc]) > 0.0:
            cost -= cost[bc] * T[i]
    if _bland_simplex(T, basis, cost, forbid=art_cols) == "unbounded":
        return LpResult(status=LpStatus.UNBOUNDED)

    values = np.zeros(T.shape[1] - 1)
    for i, bc in enumerate(basis):
        values[bc] = T[i, -1]
    x = values[:k] - values[k:2 * k]
    return LpResult(status=LpStatus.OPTIMAL, value=float(g @ x + lp.const), x=x)


def _affine_maps(net: ReluNetwork, pattern: ActivationPattern):
    """Per-layer affine maps x -> z_hat_i under a fixed pattern."""
    gates = pattern.per_layer(net)
    T = np.eye(net.input_dim)
    t = np.zeros(net.input_dim)
    pre_maps = []
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        T = w @ T
        t = w @ t + b
        pre_maps.append((T, t))
        if i < net.num_layers - 1:
            gate = gates[i][:, None]
            T = T * gate
            t = t * gates[i]
    return pre_maps


def pattern_lp(net: ReluNetwork, poly: InputPolytope, output: OutputHalfspace,
               pattern: ActivationPattern) -> LinearProgram:
    """LP over the input region where the network follows ``pattern``.

    Active neurons contribute ``z_hat >= 0`` rows, inactive ones
    ``z_hat <= 0``; the objective is the output halfspace direction applied
    to the resulting affine output map.
    """
    pre_maps = _affine_maps(net, pattern)
    gates = pattern.per_layer(net)
    rows = [poly.A]
    rhs = [poly.b]
    for i in range(net.num_layers - 1):
        T, t = pre_maps[i]
        sign = np.where(gates[i] > 0.5, -1.0, 1.0)[:, None]
        rows.append(sign * T)
        rhs.append(-sign[:, 0] * t)
    T_out, t_out = pre_maps[-1]
    return LinearProgram(
        objective=output.c @ T_out,
        A_ub=np.vstack(rows),
        b_ub=np.concatenate(rhs),
        const=float(output.c @ t_out),
    )


def _contradicts_bounds(pattern: ActivationPattern, net: ReluNetwork,
                        bounds: NeuronBounds) -> bool:
    k = 0
    for i in range(1, net.num_layers):
        for j in range(net.dims[i]):
            bit = pattern.bits[k]
            if bit == ACTIVE and bounds.pre_hi[i][j] < 0.0:
                return True
            if bit == INACTIVE and bounds.pre_lo[i][j] > 0.0:
                return True
            k += 1
    return False


def exact_verify(net: ReluNetwork, poly: InputPolytope, output: OutputHalfspace,
                 budget: int = 22, prune_bounds: NeuronBounds | None = None) -> OracleResult:
    """Exact minimum of the output direction over the input set.

    Enumerates all ``2**H`` hidden activation patterns in lexicographic
    order; ties keep the lexicographically first pattern, so the reported
    witness is deterministic.  ``prune_bounds`` optionally skips patterns
    contradicted by interval bounds (an optimization only; results are
    identical).
    """
    H = net.num_hidden
    if H > budget:
        raise ValueError(f"{H} hidden neurons exceeds the enumeration budget {budget}")
    best: LpResult | None = None
    best_pattern = None
    feasible = 0
    for bits in itertools.product((0, 1), repeat=H):
        pattern = ActivationPattern(bits=bits)
        if prune_bounds is not None and _contradicts_bounds(pattern, net, prune_bounds):
            continue
        res = solve_lp(pattern_lp(net, poly, output, pattern))
        if res.status is LpStatus.UNBOUNDED:
            raise RuntimeError("pattern LP unbounded; the input set is not bounded")
        if res.status is LpStatus.INFEASIBLE:
            continue
        feasible += 1
        if best is None or res.value < best.value:
            best = res
            best_pattern = pattern
    if best is None:
        raise ValueError("input set is empty: no activation pattern is feasible")
    return OracleResult(opt=best.value, argmin=best.x, pattern=best_pattern,
                        patterns_feasible=feasible)


def _sample_points(poly: InputPolytope, count: int, seed: int) -> np.ndarray:
    if not poly.has_box:
        raise ValueError("sampling bounds need a box-form input set")
    k = poly.dim
    pts = [np.array(c) for c in itertools.product(*zip(poly.lo, poly.hi))] if k <= 12 else []
    if count > 0:
        halton = qmc.Halton(d=k, scramble=True, seed=seed)
        unit = halton.random(count)
        pts.append(qmc.scale(unit, poly.lo, poly.hi))
    return np.vstack([np.atleast_2d(p) for p in pts])


def sample_upper_bound(net: ReluNetwork, poly: InputPolytope, output: OutputHalfspace,
                       count: int, seed: int = 0) -> float:
    """Upper bound on the exact minimum from quasi-random samples.

    The sample set is the box corners plus the first ``count`` points of a
    seeded scrambled Halton sequence, so sets are nested in ``count`` and the
    bound is monotone non-increasing.
    """
    pts = _sample_points(poly, count, seed)
    return min(float(output.c @ forward(net, p).output) for p in pts)


def refined_upper_bound(net: ReluNetwork, poly: InputPolytope, output: OutputHalfspace,
                        count: int, seed: int = 0, top_k: int = 32) -> float:
    """Sampling bound polished by pattern LPs at the most promising samples.

    Solves the pattern-restricted LP for the ``top_k`` best distinct
    activation patterns seen among the samples; each LP is the exact local
    model of the network, so the result is still a valid upper bound.
    """
    pts = _sample_points(poly, count, seed)
    vals = np.array([float(output.c @ forward(net, p).output) for p in pts])
    best = float(vals.min())
    order = np.argsort(vals, kind="stable")
    seen = set()
    for idx in order:
        pattern = ActivationPattern.from_activations(net, forward(net, pts[idx]))
        if pattern.bits in seen:
            continue
        seen.add(pattern.bits)
        res = solve_lp(pattern_lp(net, poly, output, pattern))
        if res.status is LpStatus.OPTIMAL and res.value < best:
            best = res.value
        if len(seen) >= top_k:
            break
    return best
