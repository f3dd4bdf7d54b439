"""Shared fixtures: meshes and solved cases are expensive, so one session
cache hands out memoized results keyed by (domain, metric, p, h)."""

from __future__ import annotations

import pytest

from plap_lab import (ConformalMetric, Disk, Ellipse, SolveConfig,
                      boundary_geometry, build_mesh, solve)
from plap_lab.identities import Tolerances
from plap_lab.pipeline import CaseResult, run_case

DOMAINS = {
    "disk": Disk(1.0),
    "ellipse": Ellipse(2.0, 1.0),
}

METRICS = {
    "flat": ConformalMetric.flat(),
    # phi = -(x^2 + y^2)/8 has Delta phi = -1/2, so K > 0 and Ric >= 0
    "cap": ConformalMetric.poly([(2, 0, -0.125), (0, 2, -0.125)], nonnegative_ricci=True),
}


class Lab:
    def __init__(self):
        self._meshes: dict = {}
        self._cases: dict = {}
        self._solutions: dict = {}

    def mesh(self, domain: str, h: float):
        key = (domain, h)
        if key not in self._meshes:
            self._meshes[key] = build_mesh(DOMAINS[domain], h)
        return self._meshes[key]

    def bg(self, domain: str, h: float):
        return boundary_geometry(DOMAINS[domain], self.mesh(domain, h))

    def solution(self, domain: str, p: float, h: float = 0.05, metric: str = "flat"):
        key = (domain, p, h, metric)
        if key not in self._solutions:
            self._solutions[key] = solve(self.mesh(domain, h), METRICS[metric], SolveConfig(p=p))
        return self._solutions[key]

    def case(self, domain: str, p: float, h: float = 0.05, metric: str = "flat",
             tolerances: Tolerances | None = None) -> CaseResult:
        key = (domain, p, h, metric)
        if key not in self._cases:
            self._cases[key] = run_case(
                DOMAINS[domain], METRICS[metric], p, h,
                tolerances=tolerances, mesh=self.mesh(domain, h),
            )
        return self._cases[key]

    def all_cases(self) -> list[CaseResult]:
        return list(self._cases.values())


@pytest.fixture(scope="session")
def lab() -> Lab:
    return Lab()
