"""Conic moment programs over the bordered matrix [[Lambda, lam], [lam', 1]].

Builders in this module assemble the verification-defining constraint system
(paired linear/self-quadratic equalities plus complementarity) and the
reformulated baseline relaxations, all as linear constraints on one symmetric
matrix variable plus a cone membership requirement.

Constraint matrices are stored as sparse triplets ``(i, j, value)`` over
unordered index pairs: the inner product with a symmetric ``M`` is simply
``sum(value * M[i, j])``.  Builders are pure and the resulting programs are
immutable, so many programs can be assembled in parallel.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .lifting import (
    LiftedRow,
    LiftingLayout,
    build_layout,
    expand_input_row,
    expand_network_row,
    objective_vector,
)
from .network import InputPolytope, NeuronBounds, OutputHalfspace, ReluNetwork

__all__ = [
    "Cone",
    "ConstraintTag",
    "MatrixConstraint",
    "ConicProgram",
    "add_linear_pair",
    "build_cpp_constraints",
    "build_0sos",
    "build_sdr",
    "build_qc",
    "build_triangle_sdr",
    "add_strengthening_bounds",
    "cross_quadratic",
    "ablate",
    "dump_program",
]


class Cone(enum.Enum):
    PSD = "PSD"
    DNN = "PSD∩NONNEG"
    NONNEG = "NONNEG"


class ConstraintTag(enum.Enum):
    INPUT_LIN = "INPUT_LIN"
    INPUT_SELFQUAD = "INPUT_SELFQUAD"
    NW_LIN = "NW_LIN"
    NW_SELFQUAD = "NW_SELFQUAD"
    RELU_COMP = "RELU_COMP"
    NONNEG_LAMBDA = "NONNEG_LAMBDA"
    NONNEG_MATRIX = "NONNEG_MATRIX"
    BOUND_CUTS = "BOUND_CUTS"
    TRIANGLE = "TRIANGLE"
    CROSS_QUAD = "CROSS_QUAD"


@dataclass(frozen=True)
class MatrixConstraint:
    """One linear constraint ``<P, M> (=|>=) rhs`` in triplet form.

    Triplets are canonicalized to ``i <= j`` with one entry per unordered
    pair; for off-diagonal pairs the stored value is the total coefficient of
    ``M[i, j]`` (symmetry folded in).
    """

    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    rhs: float
    equality: bool
    tag: ConstraintTag

    def __post_init__(self):
        i = np.asarray(self.rows, dtype=int)
        j = np.asarray(self.cols, dtype=int)
        v = np.asarray(self.vals, dtype=float)
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        if lo.size:
            key = lo.astype(np.int64) * (int(hi.max()) + 1) + hi
            _, first, inverse = np.unique(key, return_index=True, return_inverse=True)
            merged = np.zeros(first.size)
            np.add.at(merged, inverse, v)
            lo, hi, v = lo[first], hi[first], merged
        keep = v != 0.0
        lo, hi, v = lo[keep], hi[keep], v[keep]
        for arr in (lo, hi, v):
            arr.setflags(write=False)
        object.__setattr__(self, "rows", lo)
        object.__setattr__(self, "cols", hi)
        object.__setattr__(self, "vals", v)
        object.__setattr__(self, "rhs", float(self.rhs))

    def value(self, M: np.ndarray) -> float:
        return float(self.vals @ M[self.rows, self.cols])

    def violation(self, M: np.ndarray) -> float:
        gap = self.value(M) - self.rhs
        return abs(gap) if self.equality else max(0.0, -gap)

    def to_dense(self, dim: int) -> np.ndarray:
        """Symmetric matrix P with ``<P, M> = value(M)`` for symmetric M."""
        P = np.zeros((dim, dim))
        for i, j, v in zip(self.rows, self.cols, self.vals):
            if i == j:
                P[i, i] += v
            else:
                P[i, j] += v / 2.0
                P[j, i] += v / 2.0
        return P

    def shift_corner(self, old: int, new: int) -> "MatrixConstraint":
        rows = np.where(self.rows == old, new, self.rows)
        cols = np.where(self.cols == old, new, self.cols)
        return MatrixConstraint(rows, cols, self.vals, self.rhs, self.equality, self.tag)


@dataclass(frozen=True)
class ConicProgram:
    """Linear objective over a bordered moment matrix with cone membership.

    ``dim`` is the matrix side length (lifted dimension + 1); the last
    row/column is the homogenizing border.  ``corner_fix`` pins the bottom
    corner entry to one.  ``paired_rows`` records the underline form of every
    slack-paired inequality, in slack order, for witness assembly and derived
    cross-quadratic checks.
    """

    dim: int
    objective: LiftedRow
    constraints: tuple[MatrixConstraint, ...]
    cone: Cone | None
    corner_fix: bool = True
    layout: LiftingLayout | None = None
    paired_rows: tuple[LiftedRow, ...] = ()

    @property
    def corner(self) -> int:
        return self.dim - 1

    @property
    def eq_constraints(self) -> tuple[MatrixConstraint, ...]:
        return tuple(c for c in self.constraints if c.equality)

    @property
    def ineq_constraints(self) -> tuple[MatrixConstraint, ...]:
        return tuple(c for c in self.constraints if not c.equality)

    @property
    def num_equalities(self) -> int:
        """Equality count, the corner pin included."""
        return len(self.eq_constraints) + (1 if self.corner_fix else 0)

    def objective_value(self, M: np.ndarray) -> float:
        return float(self.objective.values @ M[self.objective.indices, self.corner])

    def residuals(self, M: np.ndarray) -> dict[str, float]:
        """Worst-case constraint and cone violations of a candidate matrix."""
        eq = [abs(M[self.corner, self.corner] - 1.0)] if self.corner_fix else [0.0]
        ineq = [0.0]
        for c in self.constraints:
            (eq if c.equality else ineq).append(c.violation(M))
        out = {
            "eq": max(eq),
            "ineq": max(ineq),
            "psd": 0.0,
            "nonneg": 0.0,
            "sym": float(np.max(np.abs(M - M.T))),
        }
        if self.cone in (Cone.PSD, Cone.DNN):
            w = np.linalg.eigvalsh((M + M.T) / 2.0)
            out["psd"] = max(0.0, -float(w[0]))
        if self.cone in (Cone.NONNEG, Cone.DNN):
            out["nonneg"] = max(0.0, -float(M.min()))
        return out

    def max_residual(self, M: np.ndarray) -> float:
        return max(self.residuals(M).values())

    def tags(self) -> set[ConstraintTag]:
        return {c.tag for c in self.constraints}


def _linear_constraint(row: LiftedRow, corner: int, tag: ConstraintTag,
                       equality: bool = True, rhs: float | None = None) -> MatrixConstraint:
    """Border constraint ``row(lam) (=|>=) rhs`` via the last matrix column."""
    rhs = row.rhs if rhs is None else rhs
    cols = np.full(row.indices.shape, corner)
    return MatrixConstraint(row.indices, cols, row.values, rhs, equality, tag)


def _self_quad_constraint(row: LiftedRow, tag: ConstraintTag) -> MatrixConstraint:
    """Quadratic partner ``<V'V, Lambda> = rhs**2`` of a linear row."""
    idx = row.indices
    val = row.values
    rows, cols, vals = [], [], []
    for p in range(idx.size):
        for q in range(p, idx.size):
            coeff = val[p] * val[q] * (1.0 if p == q else 2.0)
            rows.append(idx[p])
            cols.append(idx[q])
            vals.append(coeff)
    return MatrixConstraint(np.array(rows, dtype=int), np.array(cols, dtype=int),
                            np.array(vals), row.rhs ** 2, True, tag)


def _entry_constraint(i: int, j: int, rhs: float, equality: bool,
                      tag: ConstraintTag) -> MatrixConstraint:
    return MatrixConstraint(np.array([i]), np.array([j]), np.array([1.0]),
                            rhs, equality, tag)


def add_linear_pair(prog: ConicProgram, row: LiftedRow,
                    lin_tag: ConstraintTag = ConstraintTag.INPUT_LIN,
                    quad_tag: ConstraintTag = ConstraintTag.INPUT_SELFQUAD) -> ConicProgram:
    """Append a linear row together with its self-quadratic partner.

    The pair is what binds each factor of any factorization of the moment
    matrix to the hyperplane ``row(lam) = rhs``; a linear row alone only
    constrains the factors' weighted average.
    """
    lin = _linear_constraint(row, prog.corner, lin_tag)
    quad = _self_quad_constraint(row, quad_tag)
    return replace(prog, constraints=prog.constraints + (lin, quad))


def build_cpp_constraints(net: ReluNetwork, poly: InputPolytope,
                          layout: LiftingLayout) -> ConicProgram:
    """Verification-defining equality system on the lifted moment matrix.

    Contains, and only contains: the slack-paired input rows (linear +
    self-quadratic each), the network rows (linear + self-quadratic each),
    complementarity of every neuron's split including the input layer, and
    the pinned corner.  The cone is left unset; relaxations choose it.
    """
    if poly.num_rows == 0:
        raise ValueError("input set has no rows; an empty system is unbounded")
    if poly.dim != net.input_dim:
        raise ValueError("input set dimension does not match the network")
    if layout.num_slacks < poly.num_rows:
        raise ValueError("layout lacks slack slots for the input rows")
    if not poly.has_box:
        _require_bounded(poly)
    prog = ConicProgram(
        dim=layout.d + 1,
        objective=LiftedRow(np.array([], dtype=int), np.array([])),
        constraints=(),
        cone=None,
        corner_fix=True,
        layout=layout,
        paired_rows=(),
    )
    paired = []
    for k in range(poly.num_rows):
        full = expand_input_row(poly.A[k], poly.b[k], layout, slack_index=k)
        paired.append(expand_input_row(poly.A[k], poly.b[k], layout))
        prog = add_linear_pair(prog, full, ConstraintTag.INPUT_LIN,
                               ConstraintTag.INPUT_SELFQUAD)
    for i in range(net.num_layers):
        for j in range(net.dims[i + 1]):
            row = expand_network_row(net, i, j, layout)
            prog = add_linear_pair(prog, row, ConstraintTag.NW_LIN,
                                   ConstraintTag.NW_SELFQUAD)
    comp = tuple(
        _entry_constraint(layout.pos(i, j), layout.neg(i, j), 0.0, True,
                          ConstraintTag.RELU_COMP)
        for i in range(len(layout.dims))
        for j in range(layout.dims[i])
    )
    return replace(prog, constraints=prog.constraints + comp,
                   paired_rows=tuple(paired))


def build_0sos(net: ReluNetwork, poly: InputPolytope,
               output: OutputHalfspace) -> ConicProgram:
    """Doubly non-negative relaxation of the verification-defining system.

    Entrywise non-negativity covers the whole bordered matrix, so the lifted
    variables and slacks are non-negative through the border without any
    further rows.
    """
    layout = build_layout(net, poly.num_rows)
    prog = build_cpp_constraints(net, poly, layout)
    return replace(prog, cone=Cone.DNN, objective=objective_vector(output, layout))


def build_sdr(net: ReluNetwork, poly: InputPolytope, output: OutputHalfspace,
              bounds: NeuronBounds) -> ConicProgram:
    """Direct-transcription SDP baseline on the split variables.

    Per input coordinate it carries the interval quadratic
    ``(l+u) x_i - Lambda[x_i, x_i] >= l u``; per hidden neuron the one-sided
    quadratic ``u_hat lam+ - Lambda[lam+, lam+] >= 0``; plus the network
    linear rows, complementarity, border non-negativity, and a PSD cone.  No
    self-quadratic rows and no matrix-wide non-negativity.
    """
    if bounds is None:
        raise ValueError("SDR needs propagated neuron bounds")
    if not poly.has_box:
        raise ValueError("SDR input quadratics need a box-form input set")
    layout = build_layout(net, 0)
    corner = layout.d
    cons: list[MatrixConstraint] = []
    for i in range(net.input_dim):
        lo, hi = float(poly.lo[i]), float(poly.hi[i])
        p, q = layout.pos(0, i), layout.neg(0, i)
        rows = [p, q, p, p, q]
        cols = [corner, corner, p, q, q]
        vals = [lo + hi, -(lo + hi), -1.0, 2.0, -1.0]
        cons.append(MatrixConstraint(np.array(rows), np.array(cols), np.array(vals),
                                     lo * hi, False, ConstraintTag.BOUND_CUTS))
    for i in range(1, net.num_layers):
        for j in range(net.dims[i]):
            u_hat = float(bounds.pre_hi[i][j])
            p = layout.pos(i, j)
            cons.append(MatrixConstraint(np.array([p, p]), np.array([corner, p]),
                                         np.array([u_hat, -1.0]), 0.0, False,
                                         ConstraintTag.BOUND_CUTS))
    for i in range(net.num_layers):
        for j in range(net.dims[i + 1]):
            row = expand_network_row(net, i, j, layout)
            cons.append(_linear_constraint(row, corner, ConstraintTag.NW_LIN))
    cons.extend(
        _entry_constraint(layout.pos(i, j), layout.neg(i, j), 0.0, True,
                          ConstraintTag.RELU_COMP)
        for i in range(len(layout.dims))
        for j in range(layout.dims[i])
    )
    cons.extend(
        _entry_constraint(k, corner, 0.0, False, ConstraintTag.NONNEG_LAMBDA)
        for k in range(layout.d)
    )
    return ConicProgram(
        dim=layout.d + 1,
        objective=objective_vector(output, layout),
        constraints=tuple(cons),
        cone=Cone.PSD,
        layout=layout,
    )


def build_qc(net: ReluNetwork, poly: InputPolytope,
             output: OutputHalfspace) -> ConicProgram:
    """Atomic quadratic-constraint SDP baseline.

    The input set enters only through pairwise cross-quadratics of its
    halfspace rows; ReLUs enter through complementarity, border
    non-negativity, and non-negativity of the positive-against-negative
    block of the moment matrix.
    """
    if poly.num_rows == 0:
        raise ValueError("input set has no rows")
    layout = build_layout(net, 0)
    corner = layout.d
    cons: list[MatrixConstraint] = []
    underline = [expand_input_row(poly.A[k], poly.b[k], layout)
                 for k in range(poly.num_rows)]
    for i in range(len(underline)):
        for j in range(i + 1, len(underline)):
            cons.append(cross_quadratic(underline[i], underline[j], corner))
    for i in range(net.num_layers):
        for j in range(net.dims[i + 1]):
            row = expand_network_row(net, i, j, layout)
            cons.append(_linear_constraint(row, corner, ConstraintTag.NW_LIN))
    neurons = [(i, j) for i in range(len(layout.dims)) for j in range(layout.dims[i])]
    cons.extend(
        _entry_constraint(layout.pos(i, j), layout.neg(i, j), 0.0, True,
                          ConstraintTag.RELU_COMP)
        for i, j in neurons
    )
    cons.extend(
        _entry_constraint(k, corner, 0.0, False, ConstraintTag.NONNEG_LAMBDA)
        for k in range(layout.d)
    )
    for a in neurons:
        for b in neurons:
            if a != b:
                cons.append(_entry_constraint(layout.pos(*a), layout.neg(*b),
                                              0.0, False, ConstraintTag.NONNEG_MATRIX))
    return ConicProgram(
        dim=layout.d + 1,
        objective=objective_vector(output, layout),
        constraints=tuple(cons),
        cone=Cone.PSD,
        layout=layout,
    )


def build_triangle_sdr(net: ReluNetwork, poly: InputPolytope,
                       output: OutputHalfspace, bounds: NeuronBounds) -> ConicProgram:
    """SDR baseline plus the upper facet of the ReLU graph's convex hull.

    For each unstable hidden neuron (pre-activation interval straddling
    zero) adds ``lam+ <= (u - l)/(u_hat - l_hat) * ((lam+ - lam-) - l_hat)
    + l`` as a border inequality.  Stable neurons get no cut; the facet
    formula is singular for them.
    """
    prog = build_sdr(net, poly, output, bounds)
    layout = prog.layout
    corner = prog.corner
    cuts = []
    for i in range(1, net.num_layers):
        for j in range(net.dims[i]):
            l_hat = float(bounds.pre_lo[i][j])
            u_hat = float(bounds.pre_hi[i][j])
            if not (l_hat < 0.0 < u_hat) or u_hat - l_hat < 1e-9:
                continue
            lo = float(bounds.post_lo[i][j])
            hi = float(bounds.post_hi[i][j])
            slope = (hi - lo) / (u_hat - l_hat)
            p, q = layout.pos(i, j), layout.neg(i, j)
            cuts.append(MatrixConstraint(
                np.array([p, q]), np.array([corner, corner]),
                np.array([slope - 1.0, -slope]),
                slope * l_hat - lo, False, ConstraintTag.TRIANGLE))
    return replace(prog, constraints=prog.constraints + tuple(cuts))


def add_strengthening_bounds(prog: ConicProgram, bounds: NeuronBounds,
                             paired: bool = False) -> ConicProgram:
    """Add the four per-neuron bound inequalities to an existing program.

    Unpaired, each inequality lands directly on the border.  Paired, each is
    rewritten as ``V lam + s = v`` with a fresh slack column and appended as
    a linear/self-quadratic pair, which is what makes the bound bind every
    factor rather than the aggregate.
    """
    layout = prog.layout
    if layout is None:
        raise ValueError("program carries no layout")
    rows: list[tuple[LiftedRow, str]] = []
    for i in range(1, len(layout.dims)):
        for j in range(layout.dims[i]):
            p, q = layout.pos(i, j), layout.neg(i, j)
            l_hat = float(bounds.pre_lo[i][j])
            u_hat = float(bounds.pre_hi[i][j])
            lo = float(bounds.post_lo[i][j])
            hi = float(bounds.post_hi[i][j])
            rows.append((LiftedRow(np.array([p, q]), np.array([1.0, -1.0]), u_hat), "pre_ub"))
            rows.append((LiftedRow(np.array([p]), np.array([1.0]), hi), "post_ub"))
            rows.append((LiftedRow(np.array([p, q]), np.array([-1.0, 1.0]), -l_hat), "pre_lb"))
            rows.append((LiftedRow(np.array([p]), np.array([-1.0]), -lo), "post_lb"))
    if not paired:
        extra = tuple(
            _linear_constraint(LiftedRow(row.indices, -row.values, -row.rhs),
                               prog.corner, ConstraintTag.BOUND_CUTS, equality=False)
            for row, _ in rows
        )
        return replace(prog, constraints=prog.constraints + extra)
    new_layout = layout.with_extra_slacks(len(rows))
    old_corner, new_corner = prog.corner, new_layout.d
    shifted = tuple(c.shift_corner(old_corner, new_corner) for c in prog.constraints)
    out = replace(prog, dim=new_layout.d + 1, layout=new_layout,
                  constraints=shifted)
    paired_rows = list(prog.paired_rows)
    for offset, (row, _) in enumerate(rows):
        k = layout.num_slacks + offset
        full = LiftedRow(np.append(row.indices, new_layout.slack(k)),
                         np.append(row.values, 1.0), row.rhs)
        out = add_linear_pair(out, full, ConstraintTag.BOUND_CUTS,
                              ConstraintTag.BOUND_CUTS)
        paired_rows.append(row)
    return replace(out, paired_rows=tuple(paired_rows))


def cross_quadratic(row_i: LiftedRow, row_j: LiftedRow, corner: int) -> MatrixConstraint:
    """Linearized product of two slack-free inequality rows.

    Encodes ``(v_i - V_i lam)(v_j - V_j lam) >= 0`` as
    ``<V_i' V_j, Lambda> - v_i V_j lam - v_j V_i lam >= -v_i v_j``.
    """
    rows = list(row_j.indices) + list(row_i.indices)
    cols = [corner] * (row_j.indices.size + row_i.indices.size)
    vals = list(-row_i.rhs * row_j.values) + list(-row_j.rhs * row_i.values)
    for p, vp in zip(row_i.indices, row_i.values):
        for q, vq in zip(row_j.indices, row_j.values):
            rows.append(p)
            cols.append(q)
            vals.append(vp * vq)
    return MatrixConstraint(np.array(rows), np.array(cols), np.array(vals),
                            -row_i.rhs * row_j.rhs, False, ConstraintTag.CROSS_QUAD)


def ablate(prog: ConicProgram, tag) -> ConicProgram:
    """Remove every constraint carrying ``tag``.

    Dropping matrix-wide non-negativity means relaxing the cone to plain PSD;
    the border non-negativity of the lifted variables is reinstated
    explicitly in that case, since only the matrix part is being ablated.
    """
    if isinstance(tag, str):
        try:
            tag = ConstraintTag[tag]
        except KeyError:
            raise ValueError(f"unknown constraint class {tag!r}") from None
    if not isinstance(tag, ConstraintTag):
        raise ValueError(f"unknown constraint class {tag!r}")
    kept = tuple(c for c in prog.constraints if c.tag is not tag)
    out = replace(prog, constraints=kept)
    if tag is ConstraintTag.NONNEG_MATRIX and prog.cone is Cone.DNN:
        border = tuple(
            _entry_constraint(k, prog.corner, 0.0, False, ConstraintTag.NONNEG_LAMBDA)
            for k in range(prog.dim - 1)
        )
        out = replace(out, cone=Cone.PSD, constraints=kept + border)
    return out


def _require_bounded(poly: InputPolytope) -> None:
    # coordinate-wise LPs; the oracle's simplex is independent of this module
    from .oracle import LinearProgram, LpStatus, solve_lp

    k = poly.dim
    for i in range(k):
        for sign in (1.0, -1.0):
            g = np.zeros(k)
            g[i] = sign
            res = solve_lp(LinearProgram(g, poly.A, poly.b))
            if res.status is LpStatus.UNBOUNDED:
                raise ValueError("input polytope is unbounded")
            if res.status is LpStatus.INFEASIBLE:
                raise ValueError("input polytope is empty")


def dump_program(prog: ConicProgram) -> str:
    """Deterministic text serialization for golden tests and debugging."""
    lines = [
        f"dim {prog.dim}",
        f"cone {prog.cone.value if prog.cone else 'UNSET'}",
        f"corner_fix {int(prog.corner_fix)}",
        "objective " + " ".join(
            f"{i}:{v:.17g}" for i, v in zip(prog.objective.indices, prog.objective.values)
        ),
    ]
    for k, c in enumerate(prog.constraints):
        op = "eq" if c.equality else "ge"
        lines.append(f"constraint {k} {op} rhs={c.rhs:.17g} tag={c.tag.value}")
        for i, j, v in zip(c.rows, c.cols, c.vals):
            lines.append(f"  {i} {j} {v:.17g}")
    return "\n".join(lines) + "\n"
