"""First-order ADMM solver for linear programs over moment matrices.

Solves ``min <C, M>`` subject to linear equality/inequality constraints on a
symmetric matrix ``M`` required to lie in the PSD cone, the entrywise
non-negative cone, or their intersection.  The intersection is handled with
one consensus copy of the matrix per cone, so the fixed point is a genuine
intersection point at tolerance rather than an alternating-projection
compromise.

The matrix variable is vectorized with the symmetric (svec) embedding, scaled
by sqrt(2) off the diagonal so Euclidean geometry matches Frobenius geometry.
Inequalities become equalities with non-negative auxiliary scalars inside the
splitting; they never consume lifted matrix columns.  Constraint rows are
scaled to unit norm up front, which makes the iteration invariant to a global
rescaling of the constraint system.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .formulations import Cone, ConicProgram, MatrixConstraint

__all__ = [
    "SolverConfig",
    "SolveStatus",
    "SolveResult",
    "project_psd",
    "project_nonneg",
    "solve",
    "admm_solve",
]


class SolveStatus(enum.Enum):
    OPTIMAL = "OPTIMAL"
    MAX_ITER = "MAX_ITER"
    INFEASIBLE_LIKELY = "INFEASIBLE_LIKELY"


@dataclass
class SolverConfig:
    """Stopping tolerances and ADMM parameters.

    ``eps_abs``/``eps_rel`` enter the standard residual thresholds; both the
    primal and dual test must pass.  ``rho`` is the initial penalty, adapted
    by residual balancing unless ``adaptive_rho`` is off.  ``alpha`` is the
    over-relaxation weight.  ``log`` may be a writable text stream receiving
    ``iter,primal,dual,objective`` CSV lines every ``check_interval``
    iterations.
    """

    eps_abs: float = 1e-5
    eps_rel: float = 1e-5
    max_iter: int = 200_000
    rho: float = 1.0
    adaptive_rho: bool = True
    alpha: float = 1.6
    check_interval: int = 25
    log: object = None

    def __post_init__(self):
        if self.eps_abs <= 0 or self.eps_rel <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class SolveResult:
    """Solver output; ``M`` is the affine-feasible iterate.

    ``objective`` is the objective row applied to ``M``.  ``primal_residual``
    is the worst unnormalized constraint/cone violation of ``M``;
    ``dual_residual`` is the final consensus dual residual.  ``detail`` holds
    the per-category violations from :meth:`ConicProgram.residuals`.
    """

    M: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    status: SolveStatus
    iterations: int
    detail: dict = field(default_factory=dict)


def project_psd(S: np.ndarray) -> np.ndarray:
    """Frobenius-nearest PSD matrix: eigenvalues clipped at zero."""
    S = np.asarray(S, dtype=float)
    S = (S + S.T) / 2.0
    w, Q = np.linalg.eigh(S)
    if w[0] >= 0.0:
        return S
    w = np.maximum(w, 0.0)
    return (Q * w) @ Q.T


def project_nonneg(S: np.ndarray) -> np.ndarray:
    """Entrywise clamp at zero."""
    return np.maximum(np.asarray(S, dtype=float), 0.0)


class _Svec:
    """Symmetric vectorization with sqrt(2) off-diagonal scaling."""

    def __init__(self, n: int):
        self.n = n
        self.iu = np.triu_indices(n)
        w = np.full(self.iu[0].size, np.sqrt(2.0))
        w[self.iu[0] == self.iu[1]] = 1.0
        self.w = w

    @property
    def size(self) -> int:
        return self.iu[0].size

    def vec(self, S: np.ndarray) -> np.ndarray:
        return S[self.iu] * self.w

    def mat(self, x: np.ndarray) -> np.ndarray:
        S = np.zeros((self.n, self.n))
        S[self.iu] = x / self.w
        S = S + S.T
        S[np.diag_indices(self.n)] /= 2.0
        return S


def _dense_objective(dim: int, objective) -> np.ndarray:
    if isinstance(objective, MatrixConstraint):
        return objective.to_dense(dim)
    rows, cols, vals = objective
    return MatrixConstraint(np.asarray(rows), np.asarray(cols), np.asarray(vals),
                            0.0, True, None).to_dense(dim)


def admm_solve(dim: int, objective, constraints, cone: Cone,
               corner_fix: bool = True, config: SolverConfig | None = None,
               program: ConicProgram | None = None) -> SolveResult:
    """Core ADMM loop on a generic moment program.

    ``objective`` is a :class:`MatrixConstraint` (rhs ignored) or a triplet
    tuple ``(rows, cols, vals)`` defining ``<C, M>``.  ``constraints`` is a
    sequence of :class:`MatrixConstraint`.  When ``program`` is given, the
    reported objective and residuals are read from it.
    """
    cfg = config or SolverConfig()
    if cone is None:
        raise ValueError("program has no cone set")
    sv = _Svec(dim)
    nx = sv.size

    eqs = [c for c in constraints if c.equality]
    ineqs = [c for c in constraints if not c.equality]
    rows = []
    rhs = []
    if corner_fix:
        corner_c = MatrixConstraint(np.array([dim - 1]), np.array([dim - 1]),
                                    np.array([1.0]), 1.0, True, None)
        eqs = [corner_c] + eqs
    for c in eqs + ineqs:
        rows.append(sv.vec(c.to_dense(dim)))
        rhs.append(c.rhs)
    m_eq, m_in = len(eqs), len(ineqs)
    L = m_eq + m_in
    G = np.array(rows) if rows else np.zeros((0, nx))
    h = np.array(rhs)

    # unit-norm row equilibration; rhs scaled along so the system is unchanged
    if L:
        norms = np.maximum(np.linalg.norm(G, axis=1), 1e-12)
        G = G / norms[:, None]
        h = h / norms

    c_vec = sv.vec(_dense_objective(dim, objective))

    copies = {Cone.PSD: ("psd",), Cone.NONNEG: ("nonneg",),
              Cone.DNN: ("psd", "nonneg")}[cone]
    J = len(copies)

    if L:
        K = (G @ G.T) / J
        if m_in:
            K[np.arange(m_eq, L), np.arange(m_eq, L)] += 1.0
        jitter = 1e-12 * max(1.0, np.trace(K) / L)
        for _ in range(30):
            try:
                K_fac = cho_factor(K + jitter * np.eye(L), lower=True)
                break
            except np.linalg.LinAlgError:
                jitter *= 100.0
        else:
            raise np.linalg.LinAlgError("constraint Gram matrix is not factorizable")

    rho = cfg.rho
    alpha = cfg.alpha
    z = {name: np.zeros(nx) for name in copies}
    u = {name: np.zeros(nx) for name in copies}
    z_t = np.zeros(m_in)
    u_t = np.zeros(m_in)
    x = np.zeros(nx)
    t = np.zeros(m_in)
    n_total = J * nx + m_in
    sqrt_n = np.sqrt(n_total)
    status = SolveStatus.MAX_ITER
    it = 0
    r_norm = s_norm = np.inf

    def _project(name, S):
        return project_psd(S) if name == "psd" else project_nonneg(S)

    for it in range(1, cfg.max_iter + 1):
        w_x = sum(z[name] - u[name] for name in copies) / J
        y0_x = w_x - c_vec / (J * rho)
        y0_t = z_t - u_t
        if L:
            resid = h - G @ y0_x
            if m_in:
                resid[m_eq:] += y0_t
            nu = cho_solve(K_fac, resid)
            x = y0_x + (G.T @ nu) / J
            t = y0_t - nu[m_eq:]
        else:
            x = y0_x
            t = y0_t

        r_sq = 0.0
        s_sq = 0.0
        for name in copies:
            v = alpha * x + (1.0 - alpha) * z[name]
            z_new = sv.vec(_project(name, sv.mat(v + u[name])))
            s_sq += float(np.sum((z_new - z[name]) ** 2))
            u[name] += v - z_new
            z[name] = z_new
            r_sq += float(np.sum((x - z_new) ** 2))
        if m_in:
            v_t = alpha * t + (1.0 - alpha) * z_t
            z_t_new = np.maximum(v_t + u_t, 0.0)
            s_sq += float(np.sum((z_t_new - z_t) ** 2))
            u_t += v_t - z_t_new
            z_t = z_t_new
            r_sq += float(np.sum((t - z_t) ** 2))

        if it % cfg.check_interval and it != cfg.max_iter:
            continue

        r_norm = np.sqrt(r_sq)
        s_norm = rho * np.sqrt(s_sq)
        x_scale = np.sqrt(J * float(x @ x) + float(t @ t))
        z_scale = np.sqrt(sum(float(z[nm] @ z[nm]) for nm in copies) + float(z_t @ z_t))
        u_scale = rho * np.sqrt(sum(float(u[nm] @ u[nm]) for nm in copies)
                                + float(u_t @ u_t))
        eps_pri = sqrt_n * cfg.eps_abs + cfg.eps_rel * max(x_scale, z_scale)
        eps_dual = sqrt_n * cfg.eps_abs + cfg.eps_rel * u_scale

        if cfg.log is not None:
            obj_now = float(c_vec @ x)
            cfg.log.write(f"{it},{r_norm:.6e},{s_norm:.6e},{obj_now:.12g}\n")

        if r_norm <= eps_pri and s_norm <= eps_dual:
            status = SolveStatus.OPTIMAL
            break
        # dual blow-up with a stubborn primal gap is the standard signature of
        # an empty intersection
        if u_scale > 1e10 * (1.0 + np.linalg.norm(h)) and r_norm > 1e3 * eps_pri:
            status = SolveStatus.INFEASIBLE_LIKELY
            break
        if cfg.adaptive_rho and it < cfg.max_iter:
            if r_norm > 10.0 * s_norm and rho < 1e6:
                rho *= 2.0
                for name in copies:
                    u[name] /= 2.0
                u_t /= 2.0
            elif s_norm > 10.0 * r_norm and rho > 1e-6:
                rho /= 2.0
                for name in copies:
                    u[name] *= 2.0
                u_t *= 2.0

    M = sv.mat(x)
    if program is not None:
        detail = program.residuals(M)
        objective_val = program.objective_value(M)
    else:
        detail = _raw_residuals(M, constraints, cone, corner_fix, dim)
        objective_val = float(c_vec @ x)
    return SolveResult(
        M=M,
        objective=objective_val,
        primal_residual=max(detail.values()),
        dual_residual=float(s_norm) if np.isfinite(s_norm) else float("inf"),
        status=status,
        iterations=it,
        detail=detail,
    )


def _raw_residuals(M, constraints, cone, corner_fix, dim):
    eq = [abs(M[dim - 1, dim - 1] - 1.0)] if corner_fix else [0.0]
    ineq = [0.0]
    for c in constraints:
        (eq if c.equality else ineq).append(c.violation(M))
    out = {"eq": max(eq), "ineq": max(ineq), "psd": 0.0, "nonneg": 0.0}
    if cone in (Cone.PSD, Cone.DNN):
        w = np.linalg.eigvalsh((M + M.T) / 2.0)
        out["psd"] = max(0.0, -float(w[0]))
    if cone in (Cone.NONNEG, Cone.DNN):
        out["nonneg"] = max(0.0, -float(M.min()))
    return out


def solve(prog: ConicProgram, config: SolverConfig | None = None) -> SolveResult:
    """Solve a built conic program; the objective is its border row."""
    corner = prog.corner
    obj = (prog.objective.indices, np.full(prog.objective.indices.shape, corner),
           prog.objective.values)
    return admm_solve(prog.dim, obj, prog.constraints, prog.cone,
                      corner_fix=prog.corner_fix, config=config, program=prog)
