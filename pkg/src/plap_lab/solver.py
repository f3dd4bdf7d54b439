"""Finite element solver for -Delta_p u = 1, u = 0 on the boundary.

The discrete problem minimizes the strictly convex regularized energy

    J_eps(u) = int (1/p) e^{(2-p) phi} (eps^2 + |grad u|^2)^{p/2} dx
             - int e^{2 phi} u dx

over P1 fields vanishing on the boundary, with a geometric continuation
eps_0 > eps_0 rho > ... > eps_min and damped Newton at each rung, warm-started
from the previous one.  The conformal weights realize the metric form of the
p-Laplacian; for a flat metric both weights are 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .errors import AssemblyError, SolverError, ValidationError
from .fields import ScalarField, recover_derivatives
from .geometry import TriMesh, boundary_geometry, domain_measures
from .metric import ConformalMetric


@dataclass
class SolveConfig:
    p: float
    eps0: float | None = None          # default 0.1 * gradient scale of the domain
    rho: float = 0.1
    eps_min: float = 1e-8
    newton_tol: float = 1e-10          # relative residual norm
    max_newton_iter: int = 50
    backtrack_factor: float = 0.5
    max_backtracks: int = 30
    quadrature_order: int = 2

    def validate(self) -> None:
        if not (self.p > 1.0):
            raise ValidationError(f"p must exceed 1, got {self.p}")
        if not (0.0 < self.rho < 1.0):
            raise ValidationError(f"continuation factor rho must lie in (0, 1), got {self.rho}")
        if self.eps0 is not None and not (self.eps_min < self.eps0):
            raise ValidationError(f"eps_min must be below eps0, got {self.eps_min} >= {self.eps0}")
        if not (self.eps_min > 0):
            raise ValidationError("eps_min must be positive")
        if self.max_newton_iter < 1 or self.max_backtracks < 1:
            raise ValidationError("iteration limits must be positive")


@dataclass
class RegularizedFlux:
    """G* = (eps^2 + |grad u|^2)^{(p-2)/2} per element and its tangent matrix factor."""

    gstar: np.ndarray      # (M,)
    coeff: np.ndarray      # (M, 2, 2) symmetric positive definite

    @staticmethod
    def from_gradients(grad: np.ndarray, p: float, eps: float) -> "RegularizedFlux":
        m = np.einsum("mi,mi->m", grad, grad)
        denom = eps * eps + m
        gstar = denom ** ((p - 2.0) / 2.0)
        outer = grad[:, :, None] * grad[:, None, :]
        coeff = gstar[:, None, None] * (np.eye(2) + (p - 2.0) * outer / denom[:, None, None])
        return RegularizedFlux(gstar=gstar, coeff=coeff)


@dataclass
class EpsStep:
    eps: float
    iterations: int
    residual_norm: float
    energy: float


@dataclass
class Solution:
    u: np.ndarray
    mesh: TriMesh
    metric: ConformalMetric
    config: SolveConfig
    steps: list[EpsStep]
    final_eps: float
    diagnostics: dict = dc_field(default_factory=dict)

    def field(self) -> ScalarField:
        return ScalarField(self.u, self.mesh)


class _Assembler:
    """Caches mesh/metric data shared across Newton iterations."""

    def __init__(self, mesh: TriMesh, metric: ConformalMetric, p: float):
        self.mesh = mesh
        self.p = p
        phi_q = metric.phi(mesh.quad_points)
        w = mesh.quad_weights
        nq = len(mesh.quad_weights_ref)
        # per-element weight of the gradient term: int_T e^{(2-p) phi}
        self.w_grad = (w * np.exp((2.0 - p) * phi_q)).reshape(-1, nq).sum(axis=1)
        # load vector: int e^{2 phi} lambda_i
        src = (w * np.exp(2.0 * phi_q)).reshape(-1, nq)
        lam = mesh.quad_bary  # (nq, 3)
        elem_load = src @ lam  # (M, 3)
        self.load = np.zeros(mesh.n_vertices)
        np.add.at(self.load, mesh.triangles.ravel(), elem_load.ravel())
        self.free = np.setdiff1d(np.arange(mesh.n_vertices), mesh.boundary_vertices)
        self._rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
        self._cols = np.tile(mesh.triangles, (1, 3)).ravel()

    def gradients(self, u: np.ndarray) -> np.ndarray:
        return np.einsum("mki,mk->mi", self.mesh.basis_grads, u[self.mesh.triangles])

    def energy(self, u: np.ndarray, eps: float) -> float:
        # the eps^p offset makes J(0) = 0 for every eps without touching
        # derivatives
        g = self.gradients(u)
        m = np.einsum("mi,mi->m", g, g)
        dens = ((eps * eps + m) ** (self.p / 2.0) - eps**self.p) / self.p
        return float(np.sum(self.w_grad * dens) - self.load @ u)

    def residual(self, u: np.ndarray, eps: float) -> np.ndarray:
        g = self.gradients(u)
        m = np.einsum("mi,mi->m", g, g)
        gstar = (eps * eps + m) ** ((self.p - 2.0) / 2.0)
        flux = (self.w_grad * gstar)[:, None] * g
        contrib = np.einsum("mki,mi->mk", self.mesh.basis_grads, flux)
        r = -self.load.copy()
        np.add.at(r, self.mesh.triangles.ravel(), contrib.ravel())
        if not np.isfinite(r).all():
            bad = int(np.argmax(~np.isfinite(contrib).all(axis=1)))
            raise AssemblyError("non-finite residual during assembly", element=bad)
        return r

    def tangent(self, u: np.ndarray, eps: float) -> sp.csr_matrix:
        g = self.gradients(u)
        flux = RegularizedFlux.from_gradients(g, self.p, eps)
        coeff = self.w_grad[:, None, None] * flux.coeff
        blocks = np.einsum("mki,mij,mlj->mkl", self.mesh.basis_grads, coeff, self.mesh.basis_grads)
        if not np.isfinite(blocks).all():
            bad = int(np.argmax(~np.isfinite(blocks).reshape(len(blocks), -1).any(axis=1)))
            raise AssemblyError("non-finite tangent during assembly", element=bad)
        n = self.mesh.n_vertices
        return sp.coo_matrix((blocks.ravel(), (self._rows, self._cols)), shape=(n, n)).tocsr()


def assemble_energy_residual(
    u: ScalarField, mesh: TriMesh, metric: ConformalMetric, p: float, eps: float
) -> tuple[float, np.ndarray, sp.csr_matrix]:
    """Energy, residual (its exact gradient) and SPD tangent at the given field."""
    asm = _Assembler(mesh, metric, p)
    return asm.energy(u.values, eps), asm.residual(u.values, eps), asm.tangent(u.values, eps)


def _gradient_scale(mesh: TriMesh, metric: ConformalMetric, p: float) -> float:
    meas = domain_measures(mesh, metric)
    return (meas.volume / meas.perimeter) ** (1.0 / (p - 1.0))


def solve(mesh: TriMesh, metric: ConformalMetric | None, config: SolveConfig) -> Solution:
    """Continuation-in-eps damped Newton solve; raises SolverError with history."""
    config.validate()
    metric = metric if metric is not None else ConformalMetric.flat()
    p = config.p
    asm = _Assembler(mesh, metric, p)
    free = asm.free
    load_norm = float(np.linalg.norm(asm.load[free]))

    eps0 = config.eps0 if config.eps0 is not None else 0.1 * _gradient_scale(mesh, metric, p)
    if not (config.eps_min < eps0):
        raise ValidationError(f"eps_min must be below eps0 = {eps0:.3e}")
    ladder = [eps0]
    while ladder[-1] * config.rho > config.eps_min:
        ladder.append(ladder[-1] * config.rho)
    ladder.append(config.eps_min)

    u = np.zeros(mesh.n_vertices)
    steps: list[EpsStep] = []
    history: list[tuple[float, int, float]] = []
    for eps in ladder:
        energy = asm.energy(u, eps)
        r = asm.residual(u, eps)
        rnorm = float(np.linalg.norm(r[free]))
        it = 0
        while rnorm > config.newton_tol * load_norm:
            if it >= config.max_newton_iter:
                raise SolverError(
                    f"Newton did not converge at eps = {eps:.3e} "
                    f"(residual {rnorm:.3e} after {it} iterations)",
                    history=history + [(eps, it, rnorm)],
                )
            K = asm.tangent(u, eps)
            d = np.zeros_like(u)
            d[free] = spsolve(K[free][:, free].tocsc(), -r[free])
            slope = float(r[free] @ d[free])
            # Newton decrement at rounding level: at sub-resolution eps the
            # degenerate elements keep the evaluated residual above newton_tol
            # although the iterate already minimizes the energy to float
            # precision; no further progress is representable
            if -slope <= 1e-15 * (1.0 + abs(energy)):
                break
            t = 1.0
            accepted = False
            for _ in range(config.max_backtracks):
                trial = u + t * d
                e_trial = asm.energy(trial, eps)
                if e_trial <= energy + 1e-4 * t * slope:
                    u, energy = trial, e_trial
                    accepted = True
                    break
                t *= config.backtrack_factor
            if not accepted:
                raise SolverError(
                    f"line search stagnated at eps = {eps:.3e} (residual {rnorm:.3e})",
                    history=history + [(eps, it, rnorm)],
                )
            r = asm.residual(u, eps)
            rnorm = float(np.linalg.norm(r[free]))
            it += 1
            history.append((eps, it, rnorm))
        steps.append(EpsStep(eps=eps, iterations=it, residual_norm=rnorm, energy=energy))

    u[mesh.boundary_vertices] = 0.0
    sol = Solution(u=u, mesh=mesh, metric=metric, config=config, steps=steps,
                   final_eps=ladder[-1])
    interior = free
    bundle = recover_derivatives(sol.field(), mesh, metric)
    sol.diagnostics = {
        "min_u": float(u.min()),
        "max_u": float(u.max()),
        "min_interior_u": float(u[interior].min()) if len(interior) else 0.0,
        "positive_interior": bool((u[interior] > 0).all()) if len(interior) else True,
        "masked_fraction": bundle.masked_fraction,
    }
    return sol


def variational_p_flux(sol: Solution) -> np.ndarray:
    """Boundary p-flux density |u_nu|^{p-2} u_nu (metric form) from the residual.

    The reaction at a boundary node, divided by its lumped metric arc weight,
    approximates the flux density; the sum over boundary nodes reproduces
    -|Omega| exactly up to quadrature round-off.
    """
    mesh, metric, p = sol.mesh, sol.metric, sol.config.p
    asm = _Assembler(mesh, metric, p)
    r = asm.residual(sol.u, sol.final_eps)
    bg = boundary_geometry(mesh.spec, mesh)
    w = bg.weight * np.exp(metric.phi(bg.position)) if not metric.is_flat else bg.weight
    return r[bg.node_index] / w


@dataclass
class ConvergenceRow:
    h: float
    err_max: float
    err_l2: float
    order_max: float | None
    order_l2: float | None


def convergence_study(spec, metric: ConformalMetric | None, p: float,
                      h_values: list[float], config: SolveConfig | None = None) -> list[ConvergenceRow]:
    """Solve on a radial-oracle domain for each h and tabulate errors and rates."""
    from .geometry import Disk, build_mesh
    from .oracles import radial_exact

    if not isinstance(spec, Disk):
        raise ValidationError("convergence study requires a domain with a radial oracle (disk)")
    if metric is not None and not metric.is_flat:
        raise ValidationError("convergence study compares against the flat radial oracle")
    profile = radial_exact(2, p, spec.radius)
    rows: list[ConvergenceRow] = []
    prev: ConvergenceRow | None = None
    for h in h_values:
        mesh = build_mesh(spec, h)
        cfg = config if config is not None else SolveConfig(p=p)
        cfg = SolveConfig(**{**cfg.__dict__, "p": p})
        sol = solve(mesh, metric, cfg)
        r = np.linalg.norm(mesh.points, axis=1)
        err = sol.u - profile.u(np.minimum(r, spec.radius))
        err_max = float(np.abs(err).max())
        eq = np.abs(np.einsum("qk,mk->mq", mesh.quad_bary, err[mesh.triangles]).reshape(-1))
        err_l2 = float(np.sqrt(np.sum(mesh.quad_weights * eq**2)))
        row = ConvergenceRow(h=h, err_max=err_max, err_l2=err_l2, order_max=None, order_l2=None)
        if prev is not None and h < prev.h:
            factor = np.log(prev.h / h)
            row.order_max = float(np.log(prev.err_max / err_max) / factor)
            row.order_l2 = float(np.log(prev.err_l2 / err_l2) / factor)
        rows.append(row)
        prev = row
    return rows
