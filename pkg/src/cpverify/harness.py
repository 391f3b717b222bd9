"""Experiment pipelines: formulation comparisons, ablations, and a case study.

Every instance is derived deterministically from ``(seed_base, index)``, so
runs can fan out across a worker pool without changing the output.  Results
are emitted as CSV with fixed 12-significant-digit float formatting; the wall
time column is the only non-reproducible field.
"""

from __future__ import annotations

import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .formulations import (
    ConicProgram,
    build_0sos,
    build_qc,
    build_sdr,
    build_triangle_sdr,
    ablate,
)
from .network import (
    InputPolytope,
    OutputHalfspace,
    ReluNetwork,
    propagate_bounds,
    random_network,
)
from .oracle import exact_verify
from .recovery import CertifyConfig, certificate_to_json, certify
from .solver import SolveResult, SolverConfig, SolveStatus, solve

__all__ = [
    "ExperimentConfig",
    "InstanceRecord",
    "FORMULATIONS",
    "ABLATABLE",
    "case_study_network",
    "relative_error",
    "build_formulation",
    "run_comparison",
    "run_ablation",
    "run_case_study",
    "records_to_csv",
    "CSV_HEADER",
]

FORMULATIONS = ("0SOS", "SDR", "QC", "TRIANGLE_SDR")
ABLATABLE = ("INPUT_LIN", "INPUT_SELFQUAD", "NW_LIN", "NW_SELFQUAD", "NONNEG_MATRIX")
CSV_HEADER = "seed,formulation,exact,value,rel_error,status,millis"


def case_study_network() -> ReluNetwork:
    """Bundled 2-4-4-2-1 example whose tightest relaxation is exact but whose
    optimal moment matrix is rank four: the minimum is attained at all four
    corners of the [-1, 1]^2 input box simultaneously."""
    return ReluNetwork(
        weights=(
            np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]),
            np.array([
                [1.0, 0.0, 0.0, 0.0],
                [-1.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, -1.0, 1.0],
            ]),
            np.array([[1.0, 1.0, 0.0, 0.0], [-1.0, -1.0, 1.0, 1.0]]),
            np.array([[-1.0, -1.0]]),
        ),
        biases=(
            np.zeros(4),
            np.array([2.1, 0.0, 2.1, 0.0]),
            np.zeros(2),
            np.array([2.1]),
        ),
    )


def case_study_rule() -> tuple[InputPolytope, OutputHalfspace]:
    return (InputPolytope.from_box([-1.0, -1.0], [1.0, 1.0]),
            OutputHalfspace(c=np.array([1.0]), d=-2.1))


@dataclass
class ExperimentConfig:
    """Instance family and run settings for the comparison/ablation studies."""

    dims: tuple[int, ...] = (2, 10, 1)
    num_instances: int = 100
    seed_base: int = 0
    lo: tuple[float, ...] = (-1.0, -1.0)
    hi: tuple[float, ...] = (0.1, 0.1)
    output_c: tuple[float, ...] = (1.0,)
    output_d: float = 0.0
    solver: SolverConfig = field(default_factory=SolverConfig)
    formulations: tuple[str, ...] = FORMULATIONS
    ablations: tuple[str, ...] = ABLATABLE
    jobs: int = 1

    def __post_init__(self):
        if self.num_instances < 1:
            raise ValueError("need at least one instance")
        if len(self.lo) != len(self.hi) or len(self.lo) != self.dims[0]:
            raise ValueError("box bounds must match the input dimension")
        if any(l >= h for l, h in zip(self.lo, self.hi)):
            raise ValueError("box lower bounds must be strictly below upper bounds")
        unknown = set(self.formulations) - set(FORMULATIONS)
        if unknown:
            raise ValueError(f"unknown formulations: {sorted(unknown)}")
        unknown = set(self.ablations) - set(ABLATABLE)
        if unknown:
            raise ValueError(f"unknown ablations: {sorted(unknown)}")

    def polytope(self) -> InputPolytope:
        return InputPolytope.from_box(self.lo, self.hi)

    def output(self) -> OutputHalfspace:
        return OutputHalfspace(c=np.array(self.output_c), d=self.output_d)

    def instance_seed(self, index: int) -> int:
        return self.seed_base + index


@dataclass(frozen=True)
class InstanceRecord:
    seed: int
    formulation: str
    exact: float
    value: float
    rel_error: float
    status: str
    millis: float


def relative_error(relaxed: float, exact: float) -> float:
    """Absolute gap over |exact|, floored at 1e-9 to keep near-zero optima finite."""
    return abs(relaxed - exact) / max(abs(exact), 1e-9)


def build_formulation(name: str, net: ReluNetwork, poly: InputPolytope,
                      output: OutputHalfspace) -> ConicProgram:
    if name == "0SOS":
        return build_0sos(net, poly, output)
    bounds = propagate_bounds(net, poly)
    if name == "SDR":
        return build_sdr(net, poly, output, bounds)
    if name == "QC":
        return build_qc(net, poly, output)
    if name == "TRIANGLE_SDR":
        return build_triangle_sdr(net, poly, output, bounds)
    raise ValueError(f"unknown formulation {name!r}")


def _timed_solve(prog: ConicProgram, cfg: SolverConfig) -> tuple[SolveResult, float]:
    t0 = time.perf_counter()
    res = solve(prog, cfg)
    return res, (time.perf_counter() - t0) * 1000.0


def _comparison_instance(cfg: ExperimentConfig, index: int) -> list[InstanceRecord]:
    seed = cfg.instance_seed(index)
    net = random_network(cfg.dims, seed)
    poly = cfg.polytope()
    output = cfg.output()
    exact = exact_verify(net, poly, output).opt
    records = []
    for name in cfg.formulations:
        prog = build_formulation(name, net, poly, output)
        res, ms = _timed_solve(prog, cfg.solver)
        records.append(InstanceRecord(
            seed=seed, formulation=name, exact=exact, value=res.objective,
            rel_error=relative_error(res.objective, exact),
            status=res.status.value, millis=ms))
    return records


def _ablation_instance(cfg: ExperimentConfig, index: int) -> list[InstanceRecord]:
    seed = cfg.instance_seed(index)
    net = random_network(cfg.dims, seed)
    poly = cfg.polytope()
    output = cfg.output()
    exact = exact_verify(net, poly, output).opt
    base = build_0sos(net, poly, output)
    records = []
    for name in cfg.ablations:
        prog = ablate(base, name)
        res, ms = _timed_solve(prog, cfg.solver)
        records.append(InstanceRecord(
            seed=seed, formulation=f"ablate:{name}", exact=exact, value=res.objective,
            rel_error=relative_error(res.objective, exact),
            status=res.status.value, millis=ms))
    return records


def _fan_out(worker, cfg: ExperimentConfig) -> list[InstanceRecord]:
    indices = range(cfg.num_instances)
    if cfg.jobs <= 1:
        batches = [worker(cfg, i) for i in indices]
    else:
        serial_cfg = replace(cfg, solver=replace(cfg.solver, log=None))
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            batches = list(pool.map(worker, [serial_cfg] * cfg.num_instances, indices))
    return [rec for batch in batches for rec in batch]


def run_comparison(cfg: ExperimentConfig) -> list[InstanceRecord]:
    """Exact value plus every requested relaxation, per random instance."""
    return _fan_out(_comparison_instance, cfg)


def run_ablation(cfg: ExperimentConfig) -> list[InstanceRecord]:
    """Tightest relaxation with single constraint classes removed, per instance."""
    return _fan_out(_ablation_instance, cfg)


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def records_to_csv(records, include_millis: bool = True) -> str:
    """Render records plus one median-error summary row per formulation.

    With ``include_millis`` off the timing column is left blank, which makes
    the output byte-identical across runs of the same configuration.
    """
    lines = [CSV_HEADER]
    for r in records:
        ms = _fmt(r.millis) if include_millis else ""
        lines.append(",".join([
            str(r.seed), r.formulation, _fmt(r.exact), _fmt(r.value),
            _fmt(r.rel_error), r.status, ms,
        ]))
    by_formulation: dict[str, list[float]] = {}
    for r in records:
        by_formulation.setdefault(r.formulation, []).append(r.rel_error)
    for name in sorted(by_formulation):
        med = statistics.median(by_formulation[name])
        lines.append(f"median,{name},,,{_fmt(med)},,")
    return "\n".join(lines) + "\n"


def median_errors(records) -> dict[str, float]:
    by_formulation: dict[str, list[float]] = {}
    for r in records:
        by_formulation.setdefault(r.formulation, []).append(r.rel_error)
    return {name: statistics.median(v) for name, v in by_formulation.items()}


def run_case_study(out_dir=None, solver: SolverConfig | None = None,
                   k_range=range(1, 7), certify_cfg: CertifyConfig | None = None) -> dict:
    """End-to-end study on the bundled example network.

    Solves the tightest relaxation over the [-1, 1]^2 box, computes the exact
    optimum, and attempts factor recovery.  With ``out_dir`` set, writes the
    certificate JSON and a CSV matching each recovered input to its nearest
    box corner.
    """
    net = case_study_network()
    poly, output = case_study_rule()
    solver = solver or SolverConfig(eps_abs=1e-6, eps_rel=1e-6, max_iter=400_000)
    prog = build_0sos(net, poly, output)
    result, ms = _timed_solve(prog, solver)
    oracle = exact_verify(net, poly, output)
    cert = certify(net, result, poly, output, k_range=k_range, cfg=certify_cfg,
                   program=prog)
    corners = [np.array(c) for c in
               [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)]]
    matches = []
    for w in cert.witnesses:
        dists = [float(np.max(np.abs(w.x - c))) for c in corners]
        k = int(np.argmin(dists))
        matches.append((w, corners[k], dists[k]))
    report = {
        "relaxation_value": result.objective,
        "exact": oracle.opt,
        "status": result.status.value,
        "millis": ms,
        "certificate": cert,
        "corner_matches": matches,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "certificate.json").write_text(certificate_to_json(cert))
        lines = ["input_x0,input_x1,value,weight,corner_x0,corner_x1,max_dev"]
        for w, corner, dist in matches:
            lines.append(",".join([
                _fmt(w.x[0]), _fmt(w.x[1]), _fmt(w.value), _fmt(w.weight),
                _fmt(corner[0]), _fmt(corner[1]), _fmt(dist),
            ]))
        (out / "recovered_inputs.csv").write_text("\n".join(lines) + "\n")
    return report


def any_solver_failure(records) -> bool:
    return any(r.status != SolveStatus.OPTIMAL.value for r in records)
