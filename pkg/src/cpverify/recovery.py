"""Non-negative factorization of solved moment matrices and exactness proofs.

A doubly non-negative optimum is only an outer bound; if the matrix happens
to admit an entrywise non-negative factorization whose factors are scaled
forward passes of the network, the relaxation value is certifiably exact.
This module searches for such a factorization with a symmetric projected
gradient NMF, extracts candidate inputs from the factors, and verifies them
against the true network.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .formulations import ConicProgram
from .lifting import LiftingLayout, assemble_lifted, build_layout, expand_input_row
from .network import InputPolytope, OutputHalfspace, ReluNetwork, forward
from .solver import SolveResult

__all__ = [
    "NmfConfig",
    "Factorization",
    "CertifyConfig",
    "Witness",
    "Certificate",
    "nonneg_factorize",
    "extract_inputs",
    "certify",
    "certificate_to_json",
]


@dataclass
class NmfConfig:
    """Restart count, iteration budget and seed for the symmetric NMF."""

    restarts: int = 10
    max_iter: int = 4000
    tol: float = 1e-14
    seed: int = 0


@dataclass(frozen=True)
class Factorization:
    """Non-negative factors X with ``M ~= X @ X.T``.

    ``residual`` is the max entrywise error against the matrix that was
    factorized (recomputable as ``abs(M - X @ X.T).max()``).
    """

    factors: np.ndarray
    residual: float
    K: int


def _pgd(A: np.ndarray, X0: np.ndarray, max_iter: int, tol: float) -> np.ndarray:
    """Projected gradient descent on ||A - XX'||_F^2 over X >= 0.

    Barzilai-Borwein step seeding with Armijo backtracking along the
    projection arc.
    """
    X = X0.copy()
    G = 4.0 * (X @ X.T - A) @ X
    f = float(np.linalg.norm(A - X @ X.T) ** 2)
    step = 1.0 / max(1.0, 4.0 * float(np.linalg.norm(X) ** 2))
    for _ in range(max_iter):
        accepted = False
        eta = step
        for _ in range(40):
            X_new = np.maximum(X - eta * G, 0.0)
            delta = X_new - X
            if not delta.any():
                return X
            f_new = float(np.linalg.norm(A - X_new @ X_new.T) ** 2)
            if f_new <= f + 1e-4 * float(np.sum(G * delta)) or f_new < f:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            return X
        G_new = 4.0 * (X_new @ X_new.T - A) @ X_new
        dG = G_new - G
        denom = float(np.sum(delta * dG))
        step = float(np.sum(delta * delta)) / denom if denom > 1e-30 else eta * 2.0
        step = min(max(step, 1e-12), 1e12)
        if f - f_new <= tol * max(1.0, f):
            return X_new
        X, G, f = X_new, G_new, f_new
    return X


def _eigen_init(A: np.ndarray, K: int) -> np.ndarray:
    w, Q = np.linalg.eigh(A)
    order = np.argsort(w)[::-1][:K]
    cols = []
    for idx in order:
        v = Q[:, idx] * np.sqrt(max(w[idx], 0.0))
        if v.sum() < 0.0:
            v = -v
        cols.append(np.maximum(v, 0.0))
    return np.column_stack(cols)


def nonneg_factorize(M: np.ndarray, K: int, cfg: NmfConfig | None = None) -> Factorization:
    """Best-of-restarts symmetric NMF of a (near) doubly non-negative matrix.

    Restart zero starts from the clipped top-K eigenpairs, the rest from
    seeded random non-negative matrices; the restart with the smallest max
    entrywise residual wins, earliest restart on ties.  Entries of ``M``
    below zero are clipped in the optimization target; the reported residual
    is against ``M`` itself.
    """
    if K <= 0:
        raise ValueError("factorization rank must be positive")
    cfg = cfg or NmfConfig()
    M = np.asarray(M, dtype=float)
    M = (M + M.T) / 2.0
    A = np.maximum(M, 0.0)
    n = M.shape[0]
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    scale = np.sqrt(max(float(A.max()), 1e-12) / K)
    best_X = None
    best_res = np.inf
    for r in range(max(1, cfg.restarts)):
        X0 = _eigen_init(A, K) if r == 0 else rng.uniform(0.0, scale, size=(n, K))
        X = _pgd(A, X0, cfg.max_iter, cfg.tol)
        res = float(np.abs(M - X @ X.T).max())
        if res < best_res:
            best_res = res
            best_X = X
    return Factorization(factors=best_X, residual=best_res, K=K)


def extract_inputs(fac: Factorization, layout: LiftingLayout,
                   weight_floor: float = 1e-6) -> list[tuple[np.ndarray, float]]:
    """Candidate inputs from factors of a bordered moment matrix.

    Each factor's border entry is its weight; the input is the difference of
    the layer-0 split blocks divided by that weight.  Factors with weight
    below ``weight_floor`` are dropped.
    """
    X = fac.factors
    if X.shape[0] != layout.d + 1:
        raise ValueError("factor length does not match the layout dimension")
    out = []
    pos0 = layout.pos_block(0)
    neg0 = layout.neg_block(0)
    for k in range(fac.K):
        xi = float(X[layout.d, k])
        if xi < weight_floor:
            continue
        out.append(((X[pos0, k] - X[neg0, k]) / xi, xi))
    if not out:
        raise ValueError("every factor weight is negligible")
    return out


@dataclass
class CertifyConfig:
    """Thresholds for declaring a relaxation solution exact.

    ``residual_threshold`` caps the NMF max entrywise error;
    ``objective_tol`` the gap between the best witness value and the
    relaxation objective; ``membership_tol`` the input-set violation of raw
    extracted points; ``forward_tol`` how closely a factor must match the
    lifted forward pass at its extracted input.
    """

    residual_threshold: float = 5e-4
    objective_tol: float = 1e-3
    membership_tol: float = 1e-6
    weight_floor: float = 1e-6
    forward_tol: float = 5e-2
    xi_norm_tol: float = 5e-2
    nmf: NmfConfig = field(default_factory=NmfConfig)


@dataclass(frozen=True)
class Witness:
    x: np.ndarray
    value: float
    weight: float
    pattern_consistent: bool


@dataclass(frozen=True)
class Certificate:
    verdict: str
    witnesses: tuple[Witness, ...]
    residual: float
    objective_gap: float
    K: int | None
    xi_norm: float
    reason: str = ""

    @property
    def exact(self) -> bool:
        return self.verdict == "EXACT"


def _default_slack_rows(poly: InputPolytope, layout: LiftingLayout):
    return tuple(expand_input_row(poly.A[k], poly.b[k], layout)
                 for k in range(poly.num_rows))


def certify(net: ReluNetwork, result: SolveResult, poly: InputPolytope,
            output: OutputHalfspace, k_range=range(1, 7),
            cfg: CertifyConfig | None = None,
            program: ConicProgram | None = None) -> Certificate:
    """Try to certify a solved relaxation as exact via factor recovery.

    For each candidate rank: factorize, extract inputs, clamp them into the
    input set, and run true forward passes.  The verdict is EXACT when some
    rank gives a factorization within the residual threshold whose factors
    are feasible, forward-pass-consistent, carry unit total squared weight,
    and whose best witness value matches the relaxation objective.
    Anything else is INCONCLUSIVE: there is deliberately no distinction
    between "no non-negative factorization exists" and "the search missed
    one".
    """
    cfg = cfg or CertifyConfig()
    M = (result.M + result.M.T) / 2.0
    if program is not None:
        layout = program.layout
        slack_rows = program.paired_rows
    else:
        layout = build_layout(net, poly.num_rows)
        slack_rows = _default_slack_rows(poly, layout)
    if M.shape[0] != layout.d + 1:
        raise ValueError("result matrix does not match the layout; pass program=")

    neg_floor = float(M.min())
    if neg_floor < -cfg.residual_threshold:
        return Certificate("INCONCLUSIVE", (), float("inf"), float("nan"), None,
                           float(M[layout.d, layout.d]),
                           reason=f"moment matrix has negative entries ({neg_floor:.3g})")

    best_res = float("inf")
    best_reason = "no factorization within the residual threshold"
    for K in k_range:
        fac = nonneg_factorize(M, K, cfg.nmf)
        best_res = min(best_res, fac.residual)
        if fac.residual > cfg.residual_threshold:
            continue
        try:
            candidates = extract_inputs(fac, layout, cfg.weight_floor)
        except ValueError:
            best_reason = "all factor weights negligible"
            continue
        xi_norm = float(sum(xi ** 2 for _, xi in candidates))
        if abs(xi_norm - 1.0) > cfg.xi_norm_tol:
            best_reason = f"factor weights are not normalized (sum xi^2 = {xi_norm:.4f})"
            continue
        witnesses = []
        feasible = True
        X = fac.factors
        kept = [k for k in range(fac.K) if X[layout.d, k] >= cfg.weight_floor]
        for (x, xi), k in zip(candidates, kept):
            if poly.violation(x) > cfg.membership_tol:
                feasible = False
                break
            x_eval = poly.clip(x) if poly.has_box else x
            value = float(output.c @ forward(net, x_eval).output)
            lifted = assemble_lifted(net, x_eval, layout, slack_rows)
            factor_core = X[:layout.d, k] / xi
            consistent = bool(np.max(np.abs(factor_core - lifted)) <= cfg.forward_tol)
            witnesses.append(Witness(x=x_eval, value=value, weight=xi,
                                     pattern_consistent=consistent))
        if not feasible:
            best_reason = "an extracted input violates the input set"
            continue
        if not all(w.pattern_consistent for w in witnesses):
            best_reason = "a factor is not consistent with a forward pass"
            continue
        gap = abs(min(w.value for w in witnesses) - result.objective)
        if gap > cfg.objective_tol:
            best_reason = f"witness objective mismatch (gap {gap:.3g})"
            continue
        return Certificate("EXACT", tuple(witnesses), fac.residual, gap, K, xi_norm)
    return Certificate("INCONCLUSIVE", (), best_res, float("nan"), None,
                       float(M[layout.d, layout.d]), reason=best_reason)


def certificate_to_json(cert: Certificate) -> str:
    data = {
        "verdict": cert.verdict,
        "residual": cert.residual,
        "objective_gap": cert.objective_gap,
        "rank": cert.K,
        "xi_norm": cert.xi_norm,
        "reason": cert.reason,
        "witnesses": [
            {
                "input": w.x.tolist(),
                "value": w.value,
                "weight": w.weight,
                "pattern_consistent": w.pattern_consistent,
            }
            for w in cert.witnesses
        ],
    }
    return json.dumps(data, indent=2, allow_nan=True)
