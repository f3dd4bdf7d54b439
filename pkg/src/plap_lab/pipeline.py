"""One-call orchestration: mesh, solve, traces, identity report."""

from __future__ import annotations

from dataclasses import dataclass

from .geometry import (BoundaryGeometry, DomainSpec, Measures, TriMesh,
                       boundary_geometry, build_mesh, domain_measures,
                       validate_spec)
from .identities import IdentityReport, Tolerances, build_report
from .metric import ConformalMetric, check_nonnegative_ricci
from .solver import SolveConfig, Solution, solve


@dataclass
class CaseResult:
    spec: DomainSpec
    metric: ConformalMetric
    p: float
    h: float
    mesh: TriMesh
    bg: BoundaryGeometry
    measures: Measures
    solution: Solution
    report: IdentityReport


def run_case(spec: DomainSpec, metric: ConformalMetric | None, p: float, h: float,
             solver_overrides: dict | None = None,
             tolerances: Tolerances | None = None,
             mesh: TriMesh | None = None) -> CaseResult:
    """Solve one (domain, metric, p, h) case and evaluate every identity."""
    validate_spec(spec)
    metric = metric if metric is not None else ConformalMetric.flat()
    overrides = dict(solver_overrides or {})
    quad_order = overrides.pop("quadrature_order", 2)
    if mesh is None:
        mesh = build_mesh(spec, h, quad_order=quad_order)
    if metric.nonnegative_ricci and not metric.is_flat:
        check_nonnegative_ricci(metric, mesh.quad_points)
    bg = boundary_geometry(spec, mesh)
    measures = domain_measures(mesh, metric)
    config = SolveConfig(p=p, **overrides)
    sol = solve(mesh, metric, config)
    report = build_report(sol, bg, metric, p, tol=tolerances)
    return CaseResult(spec=spec, metric=metric, p=p, h=h, mesh=mesh, bg=bg,
                      measures=measures, solution=sol, report=report)
