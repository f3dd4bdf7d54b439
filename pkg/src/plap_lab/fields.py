"""Discrete and analytic scalar fields and their pointwise differential algebra.

All pointwise quantities are stored in components of a local g-orthonormal
frame (e_i = e^{-phi} d_i for a conformal metric), so the flat and conformal
code paths share the same formulas: for a scalar u the frame gradient is
G = e^{-phi} grad(u) and the frame Hessian is

    S = e^{-2 phi} (hess(u) - dphi (x) du - du (x) dphi + <dphi, du> I),

which reduces to the Euclidean gradient/Hessian when phi = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from ._poly import Coeffs, poly_derive, poly_eval
from .errors import ValidationError
from .geometry import TriMesh
from .metric import ConformalMetric, gaussian_curvature

_EYE2 = np.eye(2)


# --------------------------------------------------------------------------
# Basic containers
# --------------------------------------------------------------------------


@dataclass
class ScalarField:
    """One value per mesh vertex."""

    values: np.ndarray
    mesh: TriMesh

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_vertices,):
            raise ValidationError(
                f"field has {self.values.shape} values for {self.mesh.n_vertices} vertices"
            )
        if not np.isfinite(self.values).all():
            raise ValidationError("field contains non-finite values")


@dataclass
class CriticalMask:
    mask: np.ndarray
    delta_crit: float

    @property
    def fraction(self) -> float:
        return float(self.mask.mean()) if len(self.mask) else 0.0


@dataclass
class DerivativeBundle:
    """Frame-component derivative data at sample points.

    grad and hess are components in a g-orthonormal frame; gnorm is the metric
    gradient norm |grad u|_g, a_u the normalized second derivative in the
    gradient direction, grad_gnorm the norm |grad |grad u||_g, ric the value
    Ric(grad u, grad u).  Entries derived from the gradient direction are NaN
    at masked (near-critical) points.
    """

    points: np.ndarray
    u: np.ndarray
    grad: np.ndarray            # (Q, 2) frame components
    hess: np.ndarray            # (Q, 2, 2) frame components, symmetric
    gnorm: np.ndarray
    hess_frob: np.ndarray
    a_u: np.ndarray
    grad_gnorm: np.ndarray
    laplacian: np.ndarray
    ric: np.ndarray
    mask: np.ndarray
    delta_crit: float
    metric: ConformalMetric
    mesh: TriMesh | None = None
    weights: np.ndarray | None = None          # physical quadrature weights (flat)
    nodal_values: np.ndarray | None = None
    nodal_grad: np.ndarray | None = None       # Euclidean components at vertices
    nodal_hess: np.ndarray | None = None

    @property
    def critical(self) -> CriticalMask:
        return CriticalMask(self.mask, self.delta_crit)

    @property
    def masked_fraction(self) -> float:
        return self.critical.fraction


def _derived_scalars(G: np.ndarray, S: np.ndarray, mask: np.ndarray):
    gnorm = np.linalg.norm(G, axis=1)
    safe = np.where(mask, 1.0, np.maximum(gnorm, 1e-300))
    hess_frob = np.sqrt(np.einsum("nij,nij->n", S, S))
    sg = np.einsum("nij,nj->ni", S, G)
    a_u = np.einsum("ni,ni->n", G, sg) / safe**2
    grad_gnorm = np.linalg.norm(sg, axis=1) / safe
    a_u[mask] = np.nan
    grad_gnorm[mask] = np.nan
    lap = np.einsum("nii->n", S)
    return gnorm, hess_frob, a_u, grad_gnorm, lap


def frame_from_scalar(metric: ConformalMetric, pts: np.ndarray,
                      df: np.ndarray, d2f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Frame gradient and covariant frame Hessian of a scalar from Euclidean data."""
    if metric.is_flat:
        return df.copy(), 0.5 * (d2f + np.swapaxes(d2f, -1, -2))
    e = np.exp(-metric.phi(pts))
    dphi = metric.grad_phi(pts)
    G = e[:, None] * df
    dot = np.einsum("ni,ni->n", dphi, df)
    S = (
        d2f
        - dphi[:, :, None] * df[:, None, :]
        - dphi[:, None, :] * df[:, :, None]
        + dot[:, None, None] * _EYE2
    )
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    return G, (e**2)[:, None, None] * S


def _make_bundle(metric, pts, u, df, d2f, delta_crit, mesh=None, weights=None,
                 nodal=None, nodal_grad=None, nodal_hess=None) -> DerivativeBundle:
    G, S = frame_from_scalar(metric, pts, df, d2f)
    gnorm = np.linalg.norm(G, axis=1)
    mask = gnorm <= delta_crit
    gnorm, hess_frob, a_u, grad_gnorm, lap = _derived_scalars(G, S, mask)
    if metric.is_flat:
        ric = np.zeros(len(pts))
    else:
        ric = gaussian_curvature(metric, pts) * gnorm**2
    return DerivativeBundle(
        points=pts, u=u, grad=G, hess=S, gnorm=gnorm, hess_frob=hess_frob,
        a_u=a_u, grad_gnorm=grad_gnorm, laplacian=lap, ric=ric, mask=mask,
        delta_crit=delta_crit, metric=metric, mesh=mesh, weights=weights,
        nodal_values=nodal, nodal_grad=nodal_grad, nodal_hess=nodal_hess,
    )


# --------------------------------------------------------------------------
# Derivative recovery on meshes
# --------------------------------------------------------------------------


def _two_ring_pairs(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray]:
    """(vertex, neighbor) pairs within graph distance two, including self."""
    cached = getattr(mesh, "_recovery_pairs", None)
    if cached is not None:
        return cached
    import scipy.sparse as sp

    tri = mesh.triangles
    n = mesh.n_vertices
    i = np.concatenate([tri[:, 0], tri[:, 1], tri[:, 2], tri[:, 1], tri[:, 2], tri[:, 0]])
    j = np.concatenate([tri[:, 1], tri[:, 2], tri[:, 0], tri[:, 0], tri[:, 1], tri[:, 2]])
    adj = sp.coo_matrix((np.ones(len(i)), (i, j)), shape=(n, n)).tocsr()
    adj.data[:] = 1.0
    one = adj + sp.eye(n, format="csr")
    two = (one @ one).tocoo()
    pairs = (two.row, two.col)
    mesh._recovery_pairs = pairs
    return pairs


def _quadratic_fit(mesh: TriMesh, nodal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nodal gradient and Hessian by weighted local quadratic regression.

    Fits a full quadratic to the nodal values over each vertex's two-ring
    patch (Gaussian distance weights, vertex-centered coordinates scaled by
    h); reproduces quadratic fields exactly up to the boundary, which plain
    averaging of element gradients does not.
    """
    pv, pw = _two_ring_pairs(mesh)
    h = mesh.h
    d = (mesh.points[pw] - mesh.points[pv]) / h
    basis = np.stack(
        [np.ones(len(pv)), d[:, 0], d[:, 1],
         0.5 * d[:, 0] ** 2, d[:, 0] * d[:, 1], 0.5 * d[:, 1] ** 2],
        axis=1,
    )
    w = np.exp(-(d * d).sum(axis=1))
    n = mesh.n_vertices
    mat = np.zeros((n, 6, 6))
    np.add.at(mat, pv, (w[:, None, None] * basis[:, :, None]) * basis[:, None, :])
    vals = nodal.reshape(n, -1)
    rhs = np.zeros((n, 6, vals.shape[1]))
    np.add.at(rhs, pv, (w[:, None] * basis)[:, :, None] * vals[pw][:, None, :])
    try:
        coef = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError:
        mat += 1e-12 * np.trace(mat, axis1=1, axis2=2)[:, None, None] * np.eye(6)
        coef = np.linalg.solve(mat, rhs)
    tail = nodal.shape[1:]
    grad = coef[:, 1:3, :].transpose(0, 2, 1).reshape((n,) + tail + (2,)) / h
    hess = np.empty((n, vals.shape[1], 2, 2))
    hess[:, :, 0, 0] = coef[:, 3, :]
    hess[:, :, 0, 1] = coef[:, 4, :]
    hess[:, :, 1, 0] = coef[:, 4, :]
    hess[:, :, 1, 1] = coef[:, 5, :]
    hess = hess.reshape((n,) + tail + (2, 2)) / (h * h)
    return grad, hess


def _element_gradients(mesh: TriMesh, nodal: np.ndarray) -> np.ndarray:
    """P1 gradient per element of nodal data with arbitrary trailing shape."""
    vals = nodal[mesh.triangles]  # (M, 3, ...)
    return np.einsum("mki,mk...->m...i", mesh.basis_grads, vals)


def _at_quads(mesh: TriMesh, nodal: np.ndarray) -> np.ndarray:
    vals = nodal[mesh.triangles]  # (M, 3, ...)
    out = np.einsum("qk,mk...->mq...", mesh.quad_bary, vals)
    return out.reshape((-1,) + nodal.shape[1:])


def default_delta_crit(h: float, gnorm_max: float) -> float:
    return max(1e-8, 1e-3 * h * gnorm_max)


def recover_derivatives(u: ScalarField, mesh: TriMesh,
                        metric: ConformalMetric | None = None,
                        delta_crit: float | None = None) -> DerivativeBundle:
    """Gradient and Hessian recovery by local quadratic patch regression.

    The nodal values are fit with a quadratic over two-ring vertex patches,
    giving gradient and (symmetric) Hessian in one consistent pass; both are
    then interpolated to the interior quadrature points.
    """
    if u.mesh is not mesh:
        if u.values.shape != (mesh.n_vertices,):
            raise ValidationError("field and mesh sizes do not match")
    metric = metric if metric is not None else ConformalMetric.flat()

    nodal_g, nodal_h = _quadratic_fit(mesh, u.values)
    nodal_h = 0.5 * (nodal_h + np.swapaxes(nodal_h, -1, -2))

    u_q = _at_quads(mesh, u.values)
    g_q = _at_quads(mesh, nodal_g)
    h_q = _at_quads(mesh, nodal_h)

    if delta_crit is None:
        if metric.is_flat:
            gmax = float(np.linalg.norm(g_q, axis=1).max()) if len(g_q) else 0.0
        else:
            gmax = float((np.exp(-metric.phi(mesh.quad_points)) * np.linalg.norm(g_q, axis=1)).max())
        delta_crit = default_delta_crit(mesh.h, gmax)

    return _make_bundle(
        metric, mesh.quad_points, u_q, g_q, h_q, delta_crit,
        mesh=mesh, weights=mesh.quad_weights,
        nodal=u.values, nodal_grad=nodal_g, nodal_hess=nodal_h,
    )


# --------------------------------------------------------------------------
# Analytic fields with exact derivatives through third order
# --------------------------------------------------------------------------


class PolynomialField:
    """Bivariate polynomial up to degree 4, exact derivatives of every order."""

    def __init__(self, coeffs: Coeffs, name: str = "poly"):
        self.coeffs = dict(coeffs)
        self.name = name
        cx = poly_derive(self.coeffs, 0)
        cy = poly_derive(self.coeffs, 1)
        self._d1 = [cx, cy]
        self._d2 = [[poly_derive(c, ax) for ax in (0, 1)] for c in self._d1]
        self._d3 = [[[poly_derive(c, ax) for ax in (0, 1)] for c in row] for row in self._d2]

    def value(self, pts):
        return poly_eval(self.coeffs, np.asarray(pts, dtype=float))

    def grad(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.stack([poly_eval(c, pts) for c in self._d1], axis=-1)

    def hess(self, pts):
        pts = np.asarray(pts, dtype=float)
        out = np.empty(pts.shape[:-1] + (2, 2))
        for i in range(2):
            for j in range(2):
                out[..., i, j] = poly_eval(self._d2[i][j], pts)
        return out

    def third(self, pts):
        pts = np.asarray(pts, dtype=float)
        out = np.empty(pts.shape[:-1] + (2, 2, 2))
        for i in range(2):
            for j in range(2):
                for k in range(2):
                    out[..., i, j, k] = poly_eval(self._d3[i][j][k], pts)
        return out


class RadialField:
    """u(x) = F(|x|) with exact radial derivatives F', F'', F'''."""

    def __init__(self, f: Callable, f1: Callable, f2: Callable, f3: Callable, name: str = "radial"):
        self.f, self.f1, self.f2, self.f3 = f, f1, f2, f3
        self.name = name

    def _r(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.linalg.norm(pts, axis=-1)

    def value(self, pts):
        return self.f(self._r(pts))

    def grad(self, pts):
        pts = np.asarray(pts, dtype=float)
        r = self._r(pts)
        return pts * (self.f1(r) / r)[..., None]

    def hess(self, pts):
        pts = np.asarray(pts, dtype=float)
        r = self._r(pts)
        g1 = self.f1(r) / r
        g2 = (self.f2(r) - g1) / r**2
        outer = pts[..., :, None] * pts[..., None, :]
        return g2[..., None, None] * outer + g1[..., None, None] * _EYE2

    def third(self, pts):
        pts = np.asarray(pts, dtype=float)
        r = self._r(pts)
        g1 = self.f1(r) / r
        a = self.f2(r) - g1
        g2 = a / r**2
        da = self.f3(r) - (self.f2(r) - g1) / r
        g2p = da / r**2 - 2.0 * a / r**3
        x = pts
        cubic = x[..., :, None, None] * x[..., None, :, None] * x[..., None, None, :]
        sym = (
            _EYE2[None, :, :, None] * x[..., None, None, :]
            + _EYE2[None, :, None, :] * x[..., None, :, None]
            + _EYE2[None, None, :, :] * x[..., :, None, None]
        )
        return (g2p / r)[..., None, None, None] * cubic + g2[..., None, None, None] * sym


AnalyticField = Union[PolynomialField, RadialField]


def torsion_profile_field(p: float, radius: float = 1.0, n: int = 2) -> RadialField:
    """Exact radial torsion function of the ball as an analytic field."""
    q = p / (p - 1.0)
    C = (p - 1.0) / p * n ** (-1.0 / (p - 1.0))

    def f(r):
        return C * (radius**q - r**q)

    def f1(r):
        return -C * q * r ** (q - 1.0)

    def f2(r):
        return -C * q * (q - 1.0) * r ** (q - 2.0)

    def f3(r):
        return -C * q * (q - 1.0) * (q - 2.0) * r ** (q - 3.0)

    return RadialField(f, f1, f2, f3, name=f"torsion_p{p}")


def gaussian_radial_field(amplitude: float = 1.0, sigma: float = 1.0) -> RadialField:
    s2 = sigma * sigma

    def f(r):
        return amplitude * np.exp(-r * r / (2 * s2))

    def f1(r):
        return -amplitude * r / s2 * np.exp(-r * r / (2 * s2))

    def f2(r):
        return amplitude * (r * r / s2 - 1.0) / s2 * np.exp(-r * r / (2 * s2))

    def f3(r):
        return amplitude * r * (3.0 - r * r / s2) / s2**2 * np.exp(-r * r / (2 * s2))

    return RadialField(f, f1, f2, f3, name="gaussian")


def field_catalogue(seed: int = 0, n_random: int = 15) -> list[AnalyticField]:
    """Named analytic test fields plus seeded random polynomials (>= 20 total)."""
    fields: list[AnalyticField] = [
        PolynomialField({(4, 0): 1 / 12, (0, 2): 1 / 2}, name="quartic_ridge"),
        PolynomialField({(2, 0): 0.5, (0, 2): 0.5}, name="paraboloid"),
        PolynomialField({(2, 0): 0.5}, name="x_parabola"),
        PolynomialField({(1, 1): 1.0}, name="saddle"),
        PolynomialField({(3, 0): 1 / 6, (0, 3): 1 / 6}, name="cubic_mix"),
        PolynomialField({(1, 0): 0.4, (0, 1): 0.9}, name="tilt"),
        torsion_profile_field(1.5),
        torsion_profile_field(2.0),
        torsion_profile_field(3.0),
        torsion_profile_field(4.0),
        gaussian_radial_field(1.0, 1.2),
    ]
    rng = np.random.default_rng(seed)
    for k in range(n_random):
        deg = 2 + k % 3
        coeffs: Coeffs = {(1, 0): rng.uniform(0.3, 1.0), (0, 1): rng.uniform(0.3, 1.0)}
        for i in range(deg + 1):
            for j in range(deg + 1 - i):
                if i + j >= 2:
                    coeffs[(i, j)] = rng.uniform(-1.0, 1.0) / math.factorial(i + j)
        fields.append(PolynomialField(coeffs, name=f"rand_deg{deg}_{k}"))
    return fields


def analytic_bundle(field: AnalyticField, metric: ConformalMetric, pts: np.ndarray,
                    delta_crit: float = 1e-8) -> DerivativeBundle:
    """Bundle with exact (rather than recovered) derivative data at the points."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    return _make_bundle(metric, pts, field.value(pts), field.grad(pts), field.hess(pts), delta_crit)


# --------------------------------------------------------------------------
# Pointwise operations on bundles
# --------------------------------------------------------------------------


@dataclass
class PFunction:
    quad: np.ndarray
    nodal: ScalarField | None = None


def p_function(bundle: DerivativeBundle, u: ScalarField | None, p: float, n: int) -> PFunction:
    """P = ((p-1)/p) |grad u|_g^p + u/n at quadrature points (and vertices)."""
    if not (p > 1.0):
        raise ValidationError(f"p must exceed 1, got {p}")
    if n < 2:
        raise ValidationError(f"n must be at least 2, got {n}")
    quad = (p - 1.0) / p * bundle.gnorm**p + bundle.u / n
    nodal = None
    if bundle.nodal_grad is not None and u is not None:
        g = np.linalg.norm(bundle.nodal_grad, axis=1)
        if not bundle.metric.is_flat:
            g = np.exp(-bundle.metric.phi(bundle.mesh.points)) * g
        nodal = ScalarField((p - 1.0) / p * g**p + u.values / n, bundle.mesh)
    return PFunction(quad=quad, nodal=nodal)


def p_laplacian(bundle: DerivativeBundle, p: float) -> np.ndarray:
    """Pointwise Delta_p u = |grad u|^{p-2} (Delta u + (p-2) A_u); NaN where masked."""
    with np.errstate(invalid="ignore"):
        out = bundle.gnorm ** (p - 2.0) * (bundle.laplacian + (p - 2.0) * bundle.a_u)
    out[bundle.mask] = np.nan
    return out


def _coerce_eta(u_bundle: DerivativeBundle, eta) -> DerivativeBundle:
    if isinstance(eta, DerivativeBundle):
        if eta.points.shape != u_bundle.points.shape:
            raise ValidationError("eta bundle evaluated at different points")
        return eta
    if isinstance(eta, ScalarField):
        if u_bundle.mesh is None:
            raise ValidationError("discrete eta requires a mesh-based bundle")
        return recover_derivatives(eta, u_bundle.mesh, u_bundle.metric,
                                   delta_crit=u_bundle.delta_crit)
    return analytic_bundle(eta, u_bundle.metric, u_bundle.points)


def linearized_apply(u_bundle: DerivativeBundle, eta, p: float) -> np.ndarray:
    """Apply the linearization of the p-Laplacian at u to a direction eta.

    eta may be a ScalarField, an analytic field, or a prepared bundle; the
    result is NaN at masked points of u.
    """
    eb = _coerce_eta(u_bundle, eta)
    G, S = u_bundle.grad, u_bundle.hess
    gn, mask = u_bundle.gnorm, u_bundle.mask
    safe = np.where(mask, 1.0, np.maximum(gn, 1e-300))
    with np.errstate(invalid="ignore", divide="ignore"):
        dp_u = safe ** (p - 2.0) * (u_bundle.laplacian + (p - 2.0) * np.where(mask, 0.0, u_bundle.a_u))
        t1 = safe ** (p - 2.0) * eb.laplacian
        t2 = (p - 2.0) * safe ** (p - 4.0) * np.einsum("ni,nij,nj->n", G, eb.hess, G)
        t3 = (p - 2.0) * np.einsum("ni,ni->n", G, eb.grad) / safe**2 * dp_u
        ghat = G / safe[:, None]
        w = eb.grad - ghat * np.einsum("ni,ni->n", ghat, eb.grad)[:, None]
        t4 = 2.0 * (p - 2.0) * safe ** (p - 4.0) * np.einsum("ni,nij,nj->n", G, S, w)
    out = t1 + t2 + t3 + t4
    out[mask] = np.nan
    return out


def linearized_on_p(bundle: DerivativeBundle, p: float, n: int) -> np.ndarray:
    """Pointwise value of the linearized operator applied to the P-function.

    Assumes the field solves the unit-source torsion equation, for which the
    source-gradient term drops and

        L_u P = (p-1)|g|^{2(p-2)} (|hess|^2 + (p-2)^2 A^2 + Ric(g, g))
                + 2(p-1)(p-2)|g|^{2(p-2)} |grad|g||^2 - (p-1)/n.

    NaN at masked points.
    """
    gn, mask = bundle.gnorm, bundle.mask
    safe = np.where(mask, 1.0, gn)
    with np.errstate(invalid="ignore"):
        amp = safe ** (2.0 * (p - 2.0))
        val = (p - 1.0) * amp * (bundle.hess_frob**2 + (p - 2.0) ** 2 * bundle.a_u**2 + bundle.ric)
        val += 2.0 * (p - 1.0) * (p - 2.0) * amp * bundle.grad_gnorm**2
        val -= (p - 1.0) / n
    val[mask] = np.nan
    return val


def flux_vector_field(u_bundle: DerivativeBundle, p_bundle: DerivativeBundle,
                      p: float) -> np.ndarray:
    """a = (p-2)|g|^{p-4} <g, grad P> g + |g|^{p-2} grad P; zero on the critical mask."""
    G, gn, mask = u_bundle.grad, u_bundle.gnorm, u_bundle.mask
    gp = p_bundle.grad
    safe = np.where(mask, 1.0, np.maximum(gn, 1e-300))
    with np.errstate(invalid="ignore"):
        inner = np.einsum("ni,ni->n", G, gp)
        a = (p - 2.0) * (safe ** (p - 4.0) * inner)[:, None] * G + (safe ** (p - 2.0))[:, None] * gp
    a[mask] = 0.0
    return a


def flux_divergence_check(u_bundle: DerivativeBundle, p_bundle: DerivativeBundle,
                          p: float, bg) -> tuple[float, float, float]:
    """Discrete divergence theorem for the flux field (flat metric).

    Returns (volume integral of div a, boundary integral of a . nu, relative
    mismatch).  The volume side uses the piecewise-linear interpolant of the
    nodal flux; the boundary side uses exact parametric normals and weights.
    """
    if not u_bundle.metric.is_flat:
        raise ValidationError("divergence check implemented for the flat metric")
    mesh = u_bundle.mesh
    g = u_bundle.nodal_grad
    gp = p_bundle.nodal_grad
    gn = np.linalg.norm(g, axis=1)
    mask = gn <= u_bundle.delta_crit
    safe = np.where(mask, 1.0, gn)
    inner = np.einsum("ni,ni->n", g, gp)
    a = (p - 2.0) * (safe ** (p - 4.0) * inner)[:, None] * g + (safe ** (p - 2.0))[:, None] * gp
    a[mask] = 0.0
    jac = _element_gradients(mesh, a)          # (M, 2, 2): d a_i / d x_j
    div = jac[:, 0, 0] + jac[:, 1, 1]
    vol = float(np.sum(mesh.areas * div))
    bflux = float(np.sum(np.einsum("ni,ni->n", a[bg.node_index], bg.normal) * bg.weight))
    scale = max(abs(vol), abs(bflux), 1e-30)
    return vol, bflux, abs(vol - bflux) / scale


# --------------------------------------------------------------------------
# Exact pointwise algebra on analytic fields
# --------------------------------------------------------------------------


def _u_derivs(field: AnalyticField, pts: np.ndarray):
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    return field.value(pts), field.grad(pts), field.hess(pts), field.third(pts)


def _phi_derivs(metric: ConformalMetric, pts: np.ndarray):
    n = len(pts)
    if metric.is_flat:
        return np.zeros(n), np.zeros((n, 2)), np.zeros((n, 2, 2))
    return metric.phi(pts), metric.grad_phi(pts), metric.hess_phi(pts)


def exact_p_laplacian(field: AnalyticField, metric: ConformalMetric, p: float,
                      pts: np.ndarray) -> np.ndarray:
    """Delta_p u from the divergence form (independent of the frame route)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    _, du, d2u, _ = _u_derivs(field, pts)
    phi, dphi, _ = _phi_derivs(metric, pts)
    m = np.einsum("ni,ni->n", du, du)
    B = np.einsum("nij,ni,nj->n", d2u, du, du)
    T = np.einsum("nii->n", d2u)
    c = np.einsum("ni,ni->n", dphi, du)
    return np.exp(-p * phi) * m ** ((p - 2.0) / 2.0) * (T + (p - 2.0) * (B / m - c))


def _p_laplacian_with_gradient(field, metric, p, pts):
    """Delta_p u and the metric inner product <grad Delta_p u, grad u>_g, exactly."""
    _, du, d2u, d3u = _u_derivs(field, pts)
    phi, dphi, d2phi = _phi_derivs(metric, pts)
    m = np.einsum("ni,ni->n", du, du)
    dm = 2.0 * np.einsum("nij,nj->ni", d2u, du)
    B = np.einsum("nij,ni,nj->n", d2u, du, du)
    dB = np.einsum("nkli,nk,nl->ni", d3u, du, du) + 2.0 * np.einsum("nkl,nki,nl->ni", d2u, d2u, du)
    T = np.einsum("nii->n", d2u)
    dT = np.einsum("nkki->ni", d3u)
    c = np.einsum("ni,ni->n", dphi, du)
    dc = np.einsum("nki,nk->ni", d2phi, du) + np.einsum("nki,nk->ni", d2u, dphi)
    V = T + (p - 2.0) * (B / m - c)
    dV = dT + (p - 2.0) * ((dB * m[:, None] - B[:, None] * dm) / m[:, None] ** 2 - dc)
    W = m ** ((p - 2.0) / 2.0) * V
    dW = ((p - 2.0) / 2.0) * (m ** ((p - 4.0) / 2.0) * V)[:, None] * dm + m[:, None] ** ((p - 2.0) / 2.0) * dV
    ep = np.exp(-p * phi)
    D = ep * W
    dD = ep[:, None] * (-p * dphi * W[:, None] + dW)
    inner = np.exp(-2.0 * phi) * np.einsum("ni,ni->n", dD, du)
    return D, inner


def _gradnorm_power_derivs(field, metric, p, pts):
    """Euclidean derivatives of eta = |grad u|_g^p = e^{-p phi} m^{p/2}."""
    _, du, d2u, d3u = _u_derivs(field, pts)
    phi, dphi, d2phi = _phi_derivs(metric, pts)
    m = np.einsum("ni,ni->n", du, du)
    dm = 2.0 * np.einsum("nij,nj->ni", d2u, du)
    d2m = 2.0 * (np.einsum("nki,nkj->nij", d2u, d2u) + np.einsum("nk,nkij->nij", du, d3u))
    w = m ** (p / 2.0)
    dw = (p / 2.0) * (m ** (p / 2.0 - 1.0))[:, None] * dm
    d2w = (p / 2.0) * (
        (p / 2.0 - 1.0) * (m ** (p / 2.0 - 2.0))[:, None, None] * dm[:, :, None] * dm[:, None, :]
        + (m ** (p / 2.0 - 1.0))[:, None, None] * d2m
    )
    if metric.is_flat:
        return w, dw, d2w
    ep = np.exp(-p * phi)
    eta = ep * w
    deta = ep[:, None] * (dw - p * dphi * w[:, None])
    d2eta = ep[:, None, None] * (
        d2w
        - p * (dphi[:, :, None] * dw[:, None, :] + dphi[:, None, :] * dw[:, :, None])
        - p * d2phi * w[:, None, None]
        + p * p * dphi[:, :, None] * dphi[:, None, :] * w[:, None, None]
    )
    return eta, deta, d2eta


def p_bochner_residual(field: AnalyticField, metric: ConformalMetric, p: float,
                       pts: np.ndarray) -> np.ndarray:
    """Residual of the p-Bochner formula at non-critical points (exact algebra).

    (1/p) L_u^II(|grad u|^p) minus the right-hand side built from
    <grad Delta_p u, grad u>, A_u, |hess u|^2 and Ric(grad u, grad u);
    identically zero in exact arithmetic.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    _, du, d2u, _ = _u_derivs(field, pts)
    G, S = frame_from_scalar(metric, pts, du, d2u)
    gn = np.linalg.norm(G, axis=1)
    if (gn < 1e-12).any():
        raise ValidationError("p-Bochner residual requested at a critical point")
    A = np.einsum("ni,nij,nj->n", G, S, G) / gn**2
    hf2 = np.einsum("nij,nij->n", S, S)
    K = gaussian_curvature(metric, pts)
    _, deta, d2eta = _gradnorm_power_derivs(field, metric, p, pts)
    Ge, Se = frame_from_scalar(metric, pts, deta, d2eta)
    lhs = (1.0 / p) * (
        gn ** (p - 2.0) * np.einsum("nii->n", Se)
        + (p - 2.0) * gn ** (p - 4.0) * np.einsum("ni,nij,nj->n", G, Se, G)
    )
    D, inner = _p_laplacian_with_gradient(field, metric, p, pts)
    rhs = gn ** (2.0 * (p - 2.0)) * (
        gn ** (2.0 - p) * (inner - (p - 2.0) * A * D)
        + hf2 + p * (p - 2.0) * A**2 + K * gn**2
    )
    return lhs - rhs


def lu_p_two_routes(field: AnalyticField, metric: ConformalMetric, p: float, n: int,
                    pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """L_u P two ways: linearized operator applied to P vs. the expanded formula.

    The expansion keeps the <grad Delta_p u, grad u> term, so both routes are
    valid for fields that do not solve the torsion equation.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    _, du, d2u, _ = _u_derivs(field, pts)
    G, S = frame_from_scalar(metric, pts, du, d2u)
    gn = np.linalg.norm(G, axis=1)
    if (gn < 1e-12).any():
        raise ValidationError("L_u P requested at a critical point")
    A = np.einsum("ni,nij,nj->n", G, S, G) / gn**2
    hf2 = np.einsum("nij,nij->n", S, S)
    sg = np.einsum("nij,nj->ni", S, G)
    gg2 = np.einsum("ni,ni->n", sg, sg) / gn**2
    K = gaussian_curvature(metric, pts)
    D, inner = _p_laplacian_with_gradient(field, metric, p, pts)

    _, deta, d2eta = _gradnorm_power_derivs(field, metric, p, pts)
    dP = (p - 1.0) / p * deta + du / n
    d2P = (p - 1.0) / p * d2eta + d2u / n
    Gp, Sp = frame_from_scalar(metric, pts, dP, d2P)
    ghat = G / gn[:, None]
    w = Gp - ghat * np.einsum("ni,ni->n", ghat, Gp)[:, None]
    via_linearized = (
        gn ** (p - 2.0) * np.einsum("nii->n", Sp)
        + (p - 2.0) * gn ** (p - 4.0) * np.einsum("ni,nij,nj->n", G, Sp, G)
        + (p - 2.0) * np.einsum("ni,ni->n", G, Gp) / gn**2 * D
        + 2.0 * (p - 2.0) * gn ** (p - 4.0) * np.einsum("ni,nij,nj->n", G, S, w)
    )
    amp = gn ** (2.0 * (p - 2.0))
    via_expansion = (
        (p - 1.0) * amp * (gn ** (2.0 - p) * inner + hf2 + (p - 2.0) ** 2 * A**2 + K * gn**2)
        + 2.0 * (p - 1.0) * (p - 2.0) * amp * gg2
        + (p - 1.0) * D / n
    )
    return via_linearized, via_expansion


# --------------------------------------------------------------------------
# CSV export
# --------------------------------------------------------------------------


def export_field_csv(points: np.ndarray, values: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("x,y,value\n")
        for (x, y), v in zip(points, values):
            f.write(f"{float(x)!r},{float(y)!r},{float(v)!r}\n")
