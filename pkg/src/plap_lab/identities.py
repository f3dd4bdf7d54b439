"""Both sides of every integral identity and inequality, from solved fields.

All boundary quantities are traces in the metric sense: u_nu is the outward
normal derivative with respect to the g-unit normal, curvature and arc-length
weights carry their conformal factors, and interior integrals use the metric
volume element.  Traces are obtained by sampling the recovered derivative
fields along the inward normal (beyond the one-ring recovery boundary layer)
and extrapolating linearly back to the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import PreconditionError
from .fields import DerivativeBundle, linearized_on_p, recover_derivatives
from .geometry import BoundaryGeometry, Measures, domain_measures
from .metric import ConformalMetric, geodesic_boundary_curvature
from .solver import Solution


# --------------------------------------------------------------------------
# Boundary traces
# --------------------------------------------------------------------------


@dataclass
class BoundaryTrace:
    """Per boundary node: normal derivative data, curvature and metric weights."""

    p: float
    n: int
    position: np.ndarray
    normal: np.ndarray
    arclength: np.ndarray
    curvature: np.ndarray        # H_g (equals Euclidean H when flat)
    weight: np.ndarray           # metric arc-length weight
    u_nu: np.ndarray             # g-normal derivative (negative for torsion fields)
    u_nunu: np.ndarray           # second normal derivative nu . hess_g u . nu
    gnorm: np.ndarray            # |grad u|_g trace
    flagged: np.ndarray          # nodes excluded from pointwise statistics
    loop_slices: list

    def eq_curvature_residual(self) -> np.ndarray:
        """Nodewise residual of |u_nu|^{p-2}((p-1) u_nunu + (n-1) H u_nu) + 1."""
        p, n = self.p, self.n
        return np.abs(self.u_nu) ** (p - 2.0) * (
            (p - 1.0) * self.u_nunu + (n - 1.0) * self.curvature * self.u_nu
        ) + 1.0

    def p_flux(self) -> np.ndarray:
        """|u_nu|^{p-2} u_nu per node."""
        return np.abs(self.u_nu) ** (self.p - 2.0) * self.u_nu


def _extrapolate_to_boundary(q: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Linear least-squares fit of per-node samples q (B, D) over depths d, at 0."""
    A = np.stack([np.ones_like(d), d], axis=1)
    coef, *_ = np.linalg.lstsq(A, q.T, rcond=None)
    return coef[0]


def boundary_trace(sol: Solution, bg: BoundaryGeometry, metric: ConformalMetric,
                   p: float, n: int = 2, bundle: DerivativeBundle | None = None,
                   depths_grad: tuple[float, ...] = (1.2, 1.8, 2.4, 3.0),
                   depths_hess: tuple[float, ...] = (2.5, 3.5, 4.5, 5.5)) -> BoundaryTrace:
    """Extrapolated normal-derivative traces at every boundary node.

    Gradient traces are fit over shallow samples (the recovered gradient is
    reliable one ring in); second-derivative traces use deeper samples, past
    the boundary layer of the recovered Hessian.
    """
    mesh = sol.mesh
    if bundle is None:
        bundle = recover_derivatives(sol.field(), mesh, metric)
    meas = domain_measures(mesh)
    # keep sample segments well inside the domain on coarse meshes
    cap = 0.5 * meas.volume / meas.perimeter
    scale = min(1.0, cap / (max(max(depths_grad), max(depths_hess)) * mesh.h))
    dg = np.asarray(depths_grad) * mesh.h * scale
    dh = np.asarray(depths_hess) * mesh.h * scale
    d_all = np.unique(np.concatenate([dg, dh]))
    ig = np.searchsorted(d_all, dg)
    ih = np.searchsorted(d_all, dh)
    # sample points: x_b - d_k * nu, stacked per node
    pts = bg.position[:, None, :] - d_all[None, :, None] * bg.normal[:, None, :]
    flat_pts = pts.reshape(-1, 2)
    g_s = mesh.interpolate(bundle.nodal_grad, flat_pts)
    h_s = mesh.interpolate(bundle.nodal_hess, flat_pts)

    if metric.is_flat:
        G = g_s
        S = h_s
    else:
        phi = metric.phi(flat_pts)
        dphi = metric.grad_phi(flat_pts)
        dot = np.einsum("ni,ni->n", dphi, g_s)
        S = (
            h_s
            - dphi[:, :, None] * g_s[:, None, :]
            - dphi[:, None, :] * g_s[:, :, None]
            + dot[:, None, None] * np.eye(2)
        )
        G = np.exp(-phi)[:, None] * g_s
        S = np.exp(-2.0 * phi)[:, None, None] * S

    nd = len(d_all)
    nu_rep = np.repeat(bg.normal, nd, axis=0)
    q_nu = np.einsum("ni,ni->n", G, nu_rep).reshape(-1, nd)
    q_nunu = np.einsum("ni,nij,nj->n", nu_rep, S, nu_rep).reshape(-1, nd)
    q_gn = np.linalg.norm(G, axis=1).reshape(-1, nd)

    u_nu = _extrapolate_to_boundary(q_nu[:, ig], d_all[ig])
    gnorm = _extrapolate_to_boundary(q_gn[:, ig], d_all[ig])
    u_nunu = _extrapolate_to_boundary(q_nunu[:, ih], d_all[ih])

    flagged = (q_gn <= bundle.delta_crit).any(axis=1)

    H_g = geodesic_boundary_curvature(metric, bg)
    w = bg.weight if metric.is_flat else bg.weight * np.exp(metric.phi(bg.position))
    return BoundaryTrace(
        p=p, n=n, position=bg.position, normal=bg.normal, arclength=bg.arclength,
        curvature=H_g, weight=w, u_nu=u_nu, u_nunu=u_nunu, gnorm=gnorm,
        flagged=flagged, loop_slices=bg.loop_slices,
    )


# --------------------------------------------------------------------------
# Report entries
# --------------------------------------------------------------------------


@dataclass
class IdentityEntry:
    name: str
    values: dict
    residual: float
    rel_residual: float
    tolerance: float
    passed: bool


def _rel(lhs: float, rhs: float, floor: float) -> float:
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), floor)


def flux_balance(trace: BoundaryTrace, measures: Measures, tolerance: float = 0.01) -> IdentityEntry:
    """Integral of the boundary p-flux against -|Omega| (global balance)."""
    lhs = float(np.sum(trace.p_flux() * trace.weight))
    rhs = -measures.volume
    rel = abs(lhs - rhs) / measures.volume
    return IdentityEntry(
        name="flux",
        values={"boundary_integral": lhs, "volume": measures.volume},
        residual=abs(lhs - rhs), rel_residual=rel, tolerance=tolerance,
        passed=bool(rel <= tolerance),
    )


def _lu_p_integral(sol: Solution, metric: ConformalMetric, p: float, n: int,
                   bundle: DerivativeBundle) -> tuple[float, float]:
    """Metric volume integral of L_u P over unmasked quadrature points."""
    vals = linearized_on_p(bundle, p, n)
    w = sol.mesh.quad_weights
    if not metric.is_flat:
        w = w * np.exp(2.0 * metric.phi(sol.mesh.quad_points))
    keep = ~bundle.mask
    return float(np.sum(w[keep] * vals[keep])), bundle.masked_fraction


def fundamental_identity(sol: Solution, trace: BoundaryTrace, measures: Measures,
                         metric: ConformalMetric, p: float, n: int = 2,
                         bundle: DerivativeBundle | None = None,
                         tolerance: float = 0.02) -> IdentityEntry:
    """Interior L_u P mass against the boundary curvature flux, three ways.

    lhs_volume integrates the pointwise expansion, lhs_boundary converts the
    same integral to a boundary form through the divergence theorem, and rhs
    is |Omega|/n minus the curvature-weighted flux integral.  The volume vs
    boundary discrepancy is the discrete divergence-theorem check.
    """
    if bundle is None:
        bundle = recover_derivatives(sol.field(), sol.mesh, metric)
    integral, masked_fraction = _lu_p_integral(sol, metric, p, n, bundle)
    lhs_volume = integral / ((p - 1.0) * (n - 1.0))
    pf = trace.p_flux()
    lhs_boundary = float(
        np.sum(pf * ((p - 1.0) * np.abs(trace.u_nu) ** (p - 2.0) * trace.u_nunu + 1.0 / n)
               * trace.weight)
    ) / (n - 1.0)
    rhs = measures.volume / n - float(np.sum(trace.curvature * np.abs(trace.u_nu) ** (2.0 * p - 2.0) * trace.weight))
    floor = measures.volume / n
    rel_v = _rel(lhs_volume, rhs, floor)
    rel_b = _rel(lhs_boundary, rhs, floor)
    rel_div = _rel(lhs_volume, lhs_boundary, floor)
    return IdentityEntry(
        name="fundamental",
        values={
            "lhs_volume": lhs_volume,
            "lhs_boundary": lhs_boundary,
            "rhs": rhs,
            "rel_residual_volume": rel_v,
            "rel_residual_boundary": rel_b,
            "divergence_check": rel_div,
            "masked_fraction": masked_fraction,
        },
        residual=abs(lhs_volume - rhs),
        rel_residual=max(rel_v, rel_b),
        tolerance=tolerance,
        passed=bool(rel_v <= tolerance and rel_b <= tolerance and rel_div <= tolerance),
    )


def hk_report(sol: Solution, trace: BoundaryTrace, measures: Measures,
              p: float, n: int = 2, metric: ConformalMetric | None = None,
              bundle: DerivativeBundle | None = None,
              tolerance: float = 0.02) -> IdentityEntry:
    """Heintze-Karcher decomposition T1 + T2 = T3 with T3 = int 1/H - n |Omega|."""
    if (trace.curvature <= 0).any():
        node = int(np.argmin(trace.curvature))
        raise PreconditionError(
            f"mean curvature must be positive on the whole boundary; node {node} has "
            f"H = {trace.curvature[node]:.6g}"
        )
    metric = metric if metric is not None else ConformalMetric.flat()
    if bundle is None:
        bundle = recover_derivatives(sol.field(), sol.mesh, metric)
    integral, _ = _lu_p_integral(sol, metric, p, n, bundle)
    t1 = n * n / ((p - 1.0) * (n - 1.0)) * integral
    pf = trace.p_flux()
    t2 = float(np.sum((1.0 + n * trace.curvature * pf) ** 2 / trace.curvature * trace.weight))
    t3 = float(np.sum(trace.weight / trace.curvature)) - n * measures.volume
    floor = n * measures.volume
    rel = _rel(t1 + t2, t3, floor)
    return IdentityEntry(
        name="hk",
        values={"t1": t1, "t2": t2, "t3": t3,
                "hk_inequality_holds": bool(t3 >= -tolerance * floor)},
        residual=abs(t1 + t2 - t3), rel_residual=rel, tolerance=tolerance,
        passed=bool(rel <= tolerance and t3 >= -tolerance * floor),
    )


def soap_bubble_report(sol: Solution, trace: BoundaryTrace, measures: Measures,
                       p: float, n: int = 2, metric: ConformalMetric | None = None,
                       bundle: DerivativeBundle | None = None,
                       tolerance: float = 0.02) -> IdentityEntry:
    """Constant-mean-curvature form: interior mass plus the H0-deficit equals
    the curvature-deviation flux integral."""
    metric = metric if metric is not None else ConformalMetric.flat()
    if bundle is None:
        bundle = recover_derivatives(sol.field(), sol.mesh, metric)
    integral, _ = _lu_p_integral(sol, metric, p, n, bundle)
    h0 = measures.perimeter / (n * measures.volume)
    lhs1 = integral / ((p - 1.0) * (n - 1.0))
    pf = trace.p_flux()
    lhs2 = float(np.sum((n * pf * h0 + 1.0) ** 2 * trace.weight)) / (n * n * h0)
    rhs = float(np.sum((h0 - trace.curvature) * np.abs(trace.u_nu) ** (2.0 * p - 2.0) * trace.weight))
    floor = measures.volume / n
    rel = _rel(lhs1 + lhs2, rhs, floor)
    return IdentityEntry(
        name="sbt",
        values={"lhs1": lhs1, "lhs2": lhs2, "rhs": rhs, "h0": h0,
                "max_h_deviation": float(np.abs(trace.curvature - h0).max())},
        residual=abs(lhs1 + lhs2 - rhs), rel_residual=rel, tolerance=tolerance,
        passed=bool(rel <= tolerance),
    )


def serrin_deficit(trace: BoundaryTrace, n: int = 2, p: float | None = None,
                   nodewise_tolerance: float = 0.03) -> IdentityEntry:
    """Overdetermined-condition deficit D = int (1 + n H |u_nu|^{p-2} u_nu)^2 / H.

    D vanishes exactly when the boundary p-flux equals -1/(nH) pointwise; it
    is a sum of nonnegative terms whenever H > 0.
    """
    if (trace.curvature <= 0).any():
        node = int(np.argmin(trace.curvature))
        raise PreconditionError(
            f"serrin deficit requires H > 0 on the boundary; node {node} has "
            f"H = {trace.curvature[node]:.6g}"
        )
    p = trace.p if p is None else p
    pf = np.abs(trace.u_nu) ** (p - 2.0) * trace.u_nu
    node_res = n * trace.curvature * pf + 1.0
    deficit = float(np.sum(node_res**2 / trace.curvature * trace.weight))
    ok = ~trace.flagged
    max_node = float(np.abs(node_res[ok]).max()) if ok.any() else np.nan
    # the deficit is a sum of nonnegative terms: D >= 0 is the universal
    # contract; nodewise smallness characterizes balls and is reported as data
    return IdentityEntry(
        name="serrin",
        values={"deficit": deficit, "max_node_residual": max_node,
                "node_residuals": node_res},
        residual=deficit, rel_residual=max_node, tolerance=nodewise_tolerance,
        passed=bool(deficit >= -1e-12),
    )


# --------------------------------------------------------------------------
# Subharmonicity scan
# --------------------------------------------------------------------------


@dataclass
class ScanResult:
    min_value: float
    integral: float
    tol_scan: float
    excluded_fraction: float
    histogram: tuple[np.ndarray, np.ndarray]
    passed: bool


def scan_tolerance(h: float, p: float, n: int) -> float:
    """Recovery-noise allowance for the pointwise subharmonicity scan."""
    return h * (p - 1.0) / n


def _expand_rings(mesh, seed_quad_mask: np.ndarray, rings: int) -> np.ndarray:
    """Grow a quadrature-point mask by whole element rings."""
    if not seed_quad_mask.any():
        return seed_quad_mask
    vmark = np.zeros(mesh.n_vertices, dtype=bool)
    vmark[mesh.triangles[np.unique(mesh.quad_tri[seed_quad_mask])].ravel()] = True
    for _ in range(rings):
        tmark = vmark[mesh.triangles].any(axis=1)
        vmark[mesh.triangles[tmark].ravel()] = True
    tmark = vmark[mesh.triangles].any(axis=1)
    return seed_quad_mask | tmark[mesh.quad_tri]


def _near_critical_exclusion(bundle: DerivativeBundle, p: float, n: int, rings: int = 2) -> np.ndarray:
    """Quadrature points within a few element rings of the discrete critical set.

    Near a critical point of the torsion solution the flux balance forces
    |grad u| ~ (dist / n)^{1/(p-1)}, so thresholding the recovered gradient at
    (3 h / n)^{1/(p-1)} excises an O(h) neighborhood whose measure vanishes
    under refinement; two element rings are added around it.
    """
    mesh = bundle.mesh
    delta_scan = max(bundle.delta_crit, (3.0 * mesh.h / n) ** (1.0 / (p - 1.0)))
    near = (bundle.gnorm <= delta_scan) | bundle.mask
    return _expand_rings(mesh, near, rings)


def _boundary_ring_exclusion(mesh, rings: int = 2) -> np.ndarray:
    """Quadrature points within a few element rings of the domain boundary,
    where recovered second derivatives carry the solution's own edge noise."""
    vmark = np.zeros(mesh.n_vertices, dtype=bool)
    vmark[mesh.boundary_vertices] = True
    for _ in range(rings - 1):
        tmark = vmark[mesh.triangles].any(axis=1)
        vmark[mesh.triangles[tmark].ravel()] = True
    tmark = vmark[mesh.triangles].any(axis=1)
    return tmark[mesh.quad_tri]


def subharmonicity_scan(sol: Solution, metric: ConformalMetric, p: float, n: int = 2,
                        bundle: DerivativeBundle | None = None,
                        bins: int = 60) -> ScanResult:
    """Minimum and distribution of the pointwise L_u P values (requires Ric >= 0)."""
    if not (metric.is_flat or metric.nonnegative_ricci):
        raise PreconditionError("subharmonicity scan requires a nonnegative-Ricci metric")
    if bundle is None:
        bundle = recover_derivatives(sol.field(), sol.mesh, metric)
    vals = linearized_on_p(bundle, p, n)
    excl = _near_critical_exclusion(bundle, p, n) | _boundary_ring_exclusion(sol.mesh)
    keep = ~excl & ~bundle.mask & np.isfinite(vals)
    tol = scan_tolerance(sol.mesh.h, p, n)
    kept_vals = vals[keep]
    w = sol.mesh.quad_weights
    if not metric.is_flat:
        w = w * np.exp(2.0 * metric.phi(sol.mesh.quad_points))
    finite = np.isfinite(vals) & ~bundle.mask
    integral = float(np.sum(w[finite] * vals[finite]))
    hist = np.histogram(kept_vals, bins=bins)
    mn = float(kept_vals.min()) if len(kept_vals) else np.nan
    return ScanResult(
        min_value=mn,
        integral=integral,
        tol_scan=tol,
        excluded_fraction=float(excl.mean()),
        histogram=hist,
        passed=bool(mn >= -tol),
    )


# --------------------------------------------------------------------------
# Equivalence flags
# --------------------------------------------------------------------------


@dataclass
class EquivalenceFlags:
    serrin_b: bool
    cmc_d: bool
    gradient_e: bool
    domain_is_disk: bool
    e_reference_value: float
    details: dict = dc_field(default_factory=dict)


def equivalence_suite(sol: Solution, trace: BoundaryTrace, measures: Measures,
                      p: float, n: int = 2, tol: float = 0.03) -> EquivalenceFlags:
    """Tolerance flags for the ball-characterization statements (flat metric).

    B: boundary p-flux equals -1/(nH) pointwise; D: H is the constant H0;
    E: boundary gradient norm equals (1/(n H0))^{1/(p-1)}.  Whether the domain
    spec is literally a disk is reported as metadata, never inferred.
    """
    if not sol.metric.is_flat:
        raise PreconditionError("equivalence flags are defined for the flat metric")
    from .geometry import Disk

    h0 = measures.perimeter / (n * measures.volume)
    ok = ~trace.flagged
    pf = trace.p_flux()
    b_dev = float(np.abs(n * trace.curvature * pf + 1.0)[ok].max())
    d_dev = float((np.abs(trace.curvature - h0) / h0).max())
    e_ref = (1.0 / (n * h0)) ** (1.0 / (p - 1.0))
    e_dev = float((np.abs(trace.gnorm - e_ref) / e_ref)[ok].max())
    return EquivalenceFlags(
        serrin_b=bool(b_dev <= tol),
        cmc_d=bool(d_dev <= tol),
        gradient_e=bool(e_dev <= tol),
        domain_is_disk=isinstance(sol.mesh.spec, Disk),
        e_reference_value=e_ref,
        details={"b_deviation": b_dev, "d_deviation": d_dev, "e_deviation": e_dev, "h0": h0},
    )


# --------------------------------------------------------------------------
# Full report
# --------------------------------------------------------------------------


@dataclass
class IdentityReport:
    p: float
    n: int
    constants: dict
    entries: dict
    flags: EquivalenceFlags | None = None
    scan: ScanResult | None = None
    skipped: dict = dc_field(default_factory=dict)

    def all_passed(self) -> bool:
        ok = all(e.passed for e in self.entries.values())
        if self.scan is not None:
            ok = ok and self.scan.passed
        return ok

    def to_json_dict(self) -> dict:
        out = {
            "p": self.p,
            "n": self.n,
            "constants": self.constants,
            "skipped": self.skipped,
        }
        for name, e in self.entries.items():
            sec = {k: v for k, v in e.values.items() if not isinstance(v, np.ndarray)}
            sec["residual"] = e.residual
            sec["rel_residual"] = e.rel_residual
            sec["tolerance"] = e.tolerance
            sec["pass"] = e.passed
            out[name] = sec
        if self.scan is not None:
            out["subharmonicity"] = {
                "min": self.scan.min_value,
                "integral": self.scan.integral,
                "tol_scan": self.scan.tol_scan,
                "excluded_fraction": self.scan.excluded_fraction,
                "pass": self.scan.passed,
            }
        if self.flags is not None:
            out["flags"] = {
                "serrin_b": self.flags.serrin_b,
                "cmc_d": self.flags.cmc_d,
                "gradient_e": self.flags.gradient_e,
                "domain_is_disk": self.flags.domain_is_disk,
                "e_reference_value": self.flags.e_reference_value,
                **self.flags.details,
            }
        return out


@dataclass
class Tolerances:
    identity_rel: float = 0.02
    flux_rel: float = 0.01
    eq_curvature_nodewise: float = 0.05
    serrin_nodewise: float = 0.03
    flags_tol: float = 0.03


def build_report(sol: Solution, bg: BoundaryGeometry, metric: ConformalMetric,
                 p: float, n: int = 2, tol: Tolerances | None = None) -> IdentityReport:
    """Run every applicable identity check for one solved case."""
    tol = tol if tol is not None else Tolerances()
    mesh = sol.mesh
    measures = domain_measures(mesh, metric)
    bundle = recover_derivatives(sol.field(), mesh, metric)
    trace = boundary_trace(sol, bg, metric, p, n, bundle=bundle)
    h0 = measures.perimeter / (n * measures.volume)

    entries = {}
    skipped = {}
    entries["fundamental"] = fundamental_identity(
        sol, trace, measures, metric, p, n, bundle=bundle, tolerance=tol.identity_rel)
    entries["sbt"] = soap_bubble_report(
        sol, trace, measures, p, n, metric=metric, bundle=bundle, tolerance=tol.identity_rel)
    entries["flux"] = flux_balance(trace, measures, tolerance=tol.flux_rel)

    eq_res = np.abs(trace.eq_curvature_residual())[~trace.flagged]
    eq_max = float(eq_res.max()) if len(eq_res) else np.nan
    entries["eq_curvature"] = IdentityEntry(
        name="eq_curvature", values={"max_node_residual": eq_max},
        residual=eq_max, rel_residual=eq_max, tolerance=tol.eq_curvature_nodewise,
        passed=bool(eq_max <= tol.eq_curvature_nodewise),
    )

    if (trace.curvature > 0).all():
        entries["hk"] = hk_report(sol, trace, measures, p, n, metric=metric,
                                  bundle=bundle, tolerance=tol.identity_rel)
        entries["serrin"] = serrin_deficit(trace, n, p, nodewise_tolerance=tol.serrin_nodewise)
    else:
        skipped["hk"] = "nonpositive mean curvature on part of the boundary"
        skipped["serrin"] = skipped["hk"]

    scan = None
    if metric.is_flat or metric.nonnegative_ricci:
        scan = subharmonicity_scan(sol, metric, p, n, bundle=bundle)
    else:
        skipped["subharmonicity"] = "metric not declared nonnegative_ricci"

    flags = None
    if metric.is_flat:
        flags = equivalence_suite(sol, trace, measures, p, n, tol=tol.flags_tol)
    else:
        skipped["flags"] = "equivalence statements are Euclidean"

    constants = {
        "volume": measures.volume,
        "perimeter": measures.perimeter,
        "h0": h0,
        "masked_fraction": bundle.masked_fraction,
    }
    return IdentityReport(p=p, n=n, constants=constants, entries=entries,
                          flags=flags, scan=scan, skipped=skipped)
