"""Planar domains with smooth parametric boundaries and their triangulations.

Domains come from a small catalogue (disk, ellipse, polar star, annulus).
Meshes are generated by a truss-relaxation variant of Delaunay meshing with
boundary vertices pinned exactly on the parametric curve, so boundary data
(normal, curvature, arc-length weights) can be evaluated from closed forms
instead of the polygon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .errors import MeshGenerationError, ValidationError

TWO_PI = 2.0 * math.pi

# --------------------------------------------------------------------------
# Domain specifications
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Disk:
    radius: float = 1.0


@dataclass(frozen=True)
class Ellipse:
    a: float = 1.0
    b: float = 1.0


@dataclass(frozen=True)
class PolarStar:
    """Boundary r(theta) = r0 + sum_k cos_coeffs[k-1] cos(k theta) + sin_coeffs[k-1] sin(k theta)."""

    r0: float = 1.0
    cos_coeffs: tuple[float, ...] = ()
    sin_coeffs: tuple[float, ...] = ()


@dataclass(frozen=True)
class Annulus:
    r_in: float = 0.5
    r_out: float = 1.0


DomainSpec = Union[Disk, Ellipse, PolarStar, Annulus]

_STAR_SAMPLES = 4096


def _star_radius(spec: PolarStar, theta: np.ndarray) -> np.ndarray:
    r = np.full_like(theta, spec.r0, dtype=float)
    for k, c in enumerate(spec.cos_coeffs, start=1):
        r += c * np.cos(k * theta)
    for k, c in enumerate(spec.sin_coeffs, start=1):
        r += c * np.sin(k * theta)
    return r


def validate_spec(spec: DomainSpec) -> None:
    """Raise ValidationError naming the violated invariant."""
    if isinstance(spec, Disk):
        if not (spec.radius > 0):
            raise ValidationError(f"disk radius must be strictly positive, got {spec.radius}")
    elif isinstance(spec, Ellipse):
        if not (spec.b > 0):
            raise ValidationError(f"ellipse semi-axis b must be strictly positive, got {spec.b}")
        if not (spec.a >= spec.b):
            raise ValidationError(f"ellipse requires a >= b > 0, got a={spec.a}, b={spec.b}")
    elif isinstance(spec, PolarStar):
        theta = np.linspace(0.0, TWO_PI, _STAR_SAMPLES, endpoint=False)
        r = _star_radius(spec, theta)
        if not (r.min() > 0):
            raise ValidationError(
                "polar_star radius function must stay strictly positive; "
                f"min r(theta) = {r.min():.6g}"
            )
    elif isinstance(spec, Annulus):
        if not (spec.r_in > 0):
            raise ValidationError(f"annulus inner radius must be strictly positive, got {spec.r_in}")
        if not (spec.r_out > spec.r_in):
            raise ValidationError(
                f"annulus requires r_out > r_in, got r_in={spec.r_in}, r_out={spec.r_out}"
            )
    else:
        raise ValidationError(f"unknown domain spec {spec!r}")


def spec_diameter(spec: DomainSpec) -> float:
    if isinstance(spec, Disk):
        return 2.0 * spec.radius
    if isinstance(spec, Ellipse):
        return 2.0 * spec.a
    if isinstance(spec, PolarStar):
        theta = np.linspace(0.0, TWO_PI, _STAR_SAMPLES, endpoint=False)
        r = _star_radius(spec, theta)
        half = _STAR_SAMPLES // 2
        return float((r[:half] + r[half:]).max())
    if isinstance(spec, Annulus):
        return 2.0 * spec.r_out
    raise ValidationError(f"unknown domain spec {spec!r}")


def spec_to_json(spec: DomainSpec) -> dict:
    if isinstance(spec, Disk):
        return {"variant": "disk", "radius": spec.radius}
    if isinstance(spec, Ellipse):
        return {"variant": "ellipse", "a": spec.a, "b": spec.b}
    if isinstance(spec, PolarStar):
        return {
            "variant": "polar_star",
            "r0": spec.r0,
            "cos_coeffs": list(spec.cos_coeffs),
            "sin_coeffs": list(spec.sin_coeffs),
        }
    if isinstance(spec, Annulus):
        return {"variant": "annulus", "r_in": spec.r_in, "r_out": spec.r_out}
    raise ValidationError(f"unknown domain spec {spec!r}")


def spec_from_json(obj: dict) -> DomainSpec:
    if not isinstance(obj, dict) or "variant" not in obj:
        raise ValidationError("domain spec must be an object with a 'variant' key")
    variant = obj["variant"]
    known = {
        "disk": ({"variant", "radius"}, lambda: Disk(radius=float(obj.get("radius", 1.0)))),
        "ellipse": ({"variant", "a", "b"}, lambda: Ellipse(a=float(obj.get("a", 1.0)), b=float(obj.get("b", 1.0)))),
        "polar_star": (
            {"variant", "r0", "cos_coeffs", "sin_coeffs"},
            lambda: PolarStar(
                r0=float(obj.get("r0", 1.0)),
                cos_coeffs=tuple(float(c) for c in obj.get("cos_coeffs", [])),
                sin_coeffs=tuple(float(c) for c in obj.get("sin_coeffs", [])),
            ),
        ),
        "annulus": (
            {"variant", "r_in", "r_out"},
            lambda: Annulus(r_in=float(obj.get("r_in", 0.5)), r_out=float(obj.get("r_out", 1.0))),
        ),
    }
    if variant not in known:
        raise ValidationError(f"unknown domain variant {variant!r}")
    allowed, build = known[variant]
    extra = set(obj) - allowed
    if extra:
        raise ValidationError(f"unknown keys in domain spec: {sorted(extra)}")
    spec = build()
    validate_spec(spec)
    return spec


# --------------------------------------------------------------------------
# Parametric boundary loops
# --------------------------------------------------------------------------


class BoundaryCurve:
    """One closed C2 boundary loop, parametrized on [0, 2*pi).

    Orientation keeps the domain on the left; normals point out of the domain
    and curvature carries the sign induced by that outward normal.
    """

    def point(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def speed(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def normal(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def curvature(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class _StarCurve(BoundaryCurve):
    """r(theta) graph traversed counter-clockwise (covers disks as well)."""

    def __init__(self, r: Callable[[np.ndarray], np.ndarray],
                 dr: Callable[[np.ndarray], np.ndarray],
                 d2r: Callable[[np.ndarray], np.ndarray]):
        self._r, self._dr, self._d2r = r, dr, d2r

    def point(self, t):
        r = self._r(t)
        return np.stack([r * np.cos(t), r * np.sin(t)], axis=-1)

    def speed(self, t):
        return np.sqrt(self._r(t) ** 2 + self._dr(t) ** 2)

    def normal(self, t):
        r, dr = self._r(t), self._dr(t)
        ct, st = np.cos(t), np.sin(t)
        # rotate the tangent (x', y') by -90 degrees: (y', -x')
        xp = dr * ct - r * st
        yp = dr * st + r * ct
        nu = np.stack([yp, -xp], axis=-1)
        return nu / np.linalg.norm(nu, axis=-1, keepdims=True)

    def curvature(self, t):
        r, dr, d2r = self._r(t), self._dr(t), self._d2r(t)
        return (r * r + 2.0 * dr * dr - r * d2r) / (r * r + dr * dr) ** 1.5


class _EllipseCurve(BoundaryCurve):
    def __init__(self, a: float, b: float):
        self.a, self.b = a, b

    def point(self, t):
        return np.stack([self.a * np.cos(t), self.b * np.sin(t)], axis=-1)

    def speed(self, t):
        return np.sqrt(self.a**2 * np.sin(t) ** 2 + self.b**2 * np.cos(t) ** 2)

    def normal(self, t):
        nu = np.stack([self.b * np.cos(t), self.a * np.sin(t)], axis=-1)
        return nu / np.linalg.norm(nu, axis=-1, keepdims=True)

    def curvature(self, t):
        return self.a * self.b / (self.a**2 * np.sin(t) ** 2 + self.b**2 * np.cos(t) ** 2) ** 1.5


class _InnerCircle(BoundaryCurve):
    """Inner loop of an annulus: clockwise traversal, outward normal points inwards."""

    def __init__(self, radius: float):
        self.radius = radius

    def point(self, t):
        return self.radius * np.stack([np.cos(t), -np.sin(t)], axis=-1)

    def speed(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.radius)

    def normal(self, t):
        return -np.stack([np.cos(t), -np.sin(t)], axis=-1)

    def curvature(self, t):
        return np.full_like(np.asarray(t, dtype=float), -1.0 / self.radius)


def _star_curve_for(spec: DomainSpec) -> _StarCurve:
    if isinstance(spec, Disk):
        R = spec.radius
        return _StarCurve(
            lambda t: np.full_like(np.asarray(t, dtype=float), R),
            lambda t: np.zeros_like(np.asarray(t, dtype=float)),
            lambda t: np.zeros_like(np.asarray(t, dtype=float)),
        )
    assert isinstance(spec, PolarStar)

    def r(t):
        return _star_radius(spec, np.asarray(t, dtype=float))

    def dr(t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for k, c in enumerate(spec.cos_coeffs, start=1):
            out += -c * k * np.sin(k * t)
        for k, c in enumerate(spec.sin_coeffs, start=1):
            out += c * k * np.cos(k * t)
        return out

    def d2r(t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for k, c in enumerate(spec.cos_coeffs, start=1):
            out += -c * k * k * np.cos(k * t)
        for k, c in enumerate(spec.sin_coeffs, start=1):
            out += -c * k * k * np.sin(k * t)
        return out

    return _StarCurve(r, dr, d2r)


def boundary_curves(spec: DomainSpec) -> list[BoundaryCurve]:
    """Ordered boundary loops: outer first, inner (annulus) second."""
    validate_spec(spec)
    if isinstance(spec, (Disk, PolarStar)):
        return [_star_curve_for(spec)]
    if isinstance(spec, Ellipse):
        return [_EllipseCurve(spec.a, spec.b)]
    if isinstance(spec, Annulus):
        outer = _star_curve_for(Disk(radius=spec.r_out))
        return [outer, _InnerCircle(spec.r_in)]
    raise ValidationError(f"unknown domain spec {spec!r}")


def _arclength_table(curve: BoundaryCurve, n: int = 1 << 17) -> tuple[np.ndarray, np.ndarray]:
    t = np.linspace(0.0, TWO_PI, n + 1)
    sp = curve.speed(t)
    ds = 0.5 * (sp[1:] + sp[:-1]) * np.diff(t)
    s = np.concatenate([[0.0], np.cumsum(ds)])
    return t, s


def curve_length(curve: BoundaryCurve) -> float:
    return float(_arclength_table(curve)[1][-1])


def _equal_arclength_params(curve: BoundaryCurve, n_nodes: int) -> np.ndarray:
    t, s = _arclength_table(curve)
    total = s[-1]
    targets = total * np.arange(n_nodes) / n_nodes
    return np.interp(targets, s, t)


# --------------------------------------------------------------------------
# Triangle quadrature
# --------------------------------------------------------------------------

# barycentric points and weights (weights sum to 1)
_QUAD_RULES = {
    1: (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])),
    2: (
        np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
        np.array([1 / 3, 1 / 3, 1 / 3]),
    ),
    4: (
        np.array(
            [
                [0.108103018168070, 0.445948490915965, 0.445948490915965],
                [0.445948490915965, 0.108103018168070, 0.445948490915965],
                [0.445948490915965, 0.445948490915965, 0.108103018168070],
                [0.816847572980459, 0.091576213509771, 0.091576213509771],
                [0.091576213509771, 0.816847572980459, 0.091576213509771],
                [0.091576213509771, 0.091576213509771, 0.816847572980459],
            ]
        ),
        np.array(
            [
                0.223381589678011,
                0.223381589678011,
                0.223381589678011,
                0.109951743655322,
                0.109951743655322,
                0.109951743655322,
            ]
        ),
    ),
}


def quad_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    if order <= 1:
        return _QUAD_RULES[1]
    if order <= 3:
        return _QUAD_RULES[2]
    return _QUAD_RULES[4]


# --------------------------------------------------------------------------
# TriMesh
# --------------------------------------------------------------------------


@dataclass
class TriMesh:
    """Triangulated domain with pinned parametric boundary vertices."""

    spec: DomainSpec
    h: float
    points: np.ndarray                  # (N, 2)
    triangles: np.ndarray               # (M, 3), CCW
    boundary_loops: list[np.ndarray]    # vertex indices, ordered, domain on the left
    boundary_params: list[np.ndarray]   # curve parameter per boundary vertex
    areas: np.ndarray                   # (M,)
    basis_grads: np.ndarray             # (M, 3, 2): gradient of each P1 basis fn
    quad_bary: np.ndarray               # (Q, 3) barycentric coordinates
    quad_weights_ref: np.ndarray        # (Q,) reference weights (sum 1)
    quad_points: np.ndarray             # (M*Q, 2)
    quad_weights: np.ndarray            # (M*Q,) physical weights
    quad_tri: np.ndarray                # (M*Q,) owning triangle
    _locator: "_PointLocator | None" = field(default=None, repr=False)

    @property
    def n_vertices(self) -> int:
        return self.points.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def boundary_vertices(self) -> np.ndarray:
        return np.concatenate(self.boundary_loops)

    def min_angle_deg(self) -> float:
        return float(np.degrees(_triangle_angles(self.points, self.triangles).min()))

    def interpolate(self, nodal: np.ndarray, pts: np.ndarray) -> np.ndarray:
        """P1 interpolation of nodal data (scalar or trailing-dim array) at points."""
        tri, bary = self.locate(pts)
        vals = nodal[self.triangles[tri]]
        return np.einsum("qk,qk...->q...", bary, vals)

    def locate(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self._locator is None:
            self._locator = _PointLocator(self)
        return self._locator.locate(np.atleast_2d(np.asarray(pts, dtype=float)))


class _PointLocator:
    """Nearest-centroid candidate search plus barycentric membership test."""

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        cent = mesh.points[mesh.triangles].mean(axis=1)
        self.tree = cKDTree(cent)

    def locate(self, pts: np.ndarray, k: int = 24) -> tuple[np.ndarray, np.ndarray]:
        mesh = self.mesh
        k = min(k, mesh.n_triangles)
        _, cand = self.tree.query(pts, k=k)
        cand = np.atleast_2d(cand)
        tri_idx = np.empty(len(pts), dtype=int)
        bary_out = np.empty((len(pts), 3))
        for i, p in enumerate(pts):
            best, best_bary, best_min = -1, None, -np.inf
            for t in cand[i]:
                bary = _barycentric(mesh, int(t), p)
                m = bary.min()
                if m > best_min:
                    best, best_bary, best_min = int(t), bary, m
                if m >= -1e-12:
                    break
            tri_idx[i] = best
            bary_out[i] = np.clip(best_bary, 0.0, None)
            s = bary_out[i].sum()
            if s > 0:
                bary_out[i] /= s
        return tri_idx, bary_out


def _barycentric(mesh: TriMesh, tri: int, p: np.ndarray) -> np.ndarray:
    i, j, k = mesh.triangles[tri]
    a, b, c = mesh.points[i], mesh.points[j], mesh.points[k]
    m = np.array([[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]])
    try:
        lam = np.linalg.solve(m, p - a)
    except np.linalg.LinAlgError:
        return np.array([-np.inf, -np.inf, -np.inf])
    return np.array([1.0 - lam[0] - lam[1], lam[0], lam[1]])


def _triangle_angles(points: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = points[triangles]
    angles = np.empty((len(triangles), 3))
    for v in range(3):
        e1 = p[:, (v + 1) % 3] - p[:, v]
        e2 = p[:, (v + 2) % 3] - p[:, v]
        cosang = np.einsum("ij,ij->i", e1, e2) / (
            np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
        )
        angles[:, v] = np.arccos(np.clip(cosang, -1.0, 1.0))
    return angles


# --------------------------------------------------------------------------
# Radial inside tests (all catalogue domains are radial graphs about the origin)
# --------------------------------------------------------------------------


class _RadialDomain:
    """Dense lookup tables for the boundary radius and the ray/normal angle."""

    def __init__(self, spec: DomainSpec):
        self.spec = spec
        self.annular = isinstance(spec, Annulus)
        curve = boundary_curves(spec)[0]
        t = np.linspace(0.0, TWO_PI, _STAR_SAMPLES + 1)
        pts = curve.point(t)
        theta = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), TWO_PI)
        theta[-1] = TWO_PI
        theta[0] = 0.0
        order = np.argsort(theta)
        self._theta = theta[order]
        self._rb = np.linalg.norm(pts, axis=1)[order]
        radial = pts / np.linalg.norm(pts, axis=1, keepdims=True)
        cospsi = np.clip(np.einsum("ij,ij->i", radial, curve.normal(t)), 0.2, 1.0)
        self._cospsi = cospsi[order]
        self.r_in = spec.r_in if self.annular else 0.0

    def boundary_radius(self, theta: np.ndarray) -> np.ndarray:
        return np.interp(np.mod(theta, TWO_PI), self._theta, self._rb)

    def cos_psi(self, theta: np.ndarray) -> np.ndarray:
        return np.interp(np.mod(theta, TWO_PI), self._theta, self._cospsi)

    def inside(self, pts: np.ndarray, margin: float = 0.0) -> np.ndarray:
        rho = np.linalg.norm(pts, axis=-1)
        theta = np.arctan2(pts[..., 1], pts[..., 0])
        ok = rho < self.boundary_radius(theta) - margin / self.cos_psi(theta)
        if self.annular:
            ok &= rho > self.r_in + margin
        return ok

    def clamp(self, pts: np.ndarray, margin: float) -> np.ndarray:
        rho = np.linalg.norm(pts, axis=-1)
        theta = np.arctan2(pts[..., 1], pts[..., 0])
        hi = self.boundary_radius(theta) - margin / self.cos_psi(theta)
        rho_new = np.minimum(rho, hi)
        if self.annular:
            rho_new = np.maximum(rho_new, self.r_in + margin)
        scale = np.where(rho > 0, rho_new / np.maximum(rho, 1e-300), 1.0)
        return pts * scale[..., None]


# --------------------------------------------------------------------------
# Mesh generation
# --------------------------------------------------------------------------


def build_mesh(
    spec: DomainSpec,
    h: float,
    quad_order: int = 2,
    quality_bound_deg: float = 20.0,
    relax_iters: int = 120,
) -> TriMesh:
    """Triangulate the domain with target edge length h.

    Boundary vertices sit exactly on the parametric curve at equal arc-length
    spacing and are pinned; interior vertices start on a hexagonal lattice and
    relax under repulsive edge forces until the triangulation is near-uniform.
    """
    validate_spec(spec)
    diam = spec_diameter(spec)
    if not (0.0 < h < diam / 4.0):
        raise ValidationError(
            f"target edge length must satisfy 0 < h < diameter/4 = {diam / 4.0:.6g}, got {h}"
        )

    curves = boundary_curves(spec)
    loops_params: list[np.ndarray] = []
    loops_xy: list[np.ndarray] = []
    for curve in curves:
        L = curve_length(curve)
        n_nodes = max(8, int(round(L / h)))
        params = _equal_arclength_params(curve, n_nodes)
        loops_params.append(params)
        loops_xy.append(curve.point(params))

    bnd_xy = np.concatenate(loops_xy)
    domain = _RadialDomain(spec)
    interior = _hex_lattice(spec, h, domain)
    interior = _relax(bnd_xy, interior, h, domain, relax_iters)

    points = np.concatenate([bnd_xy, interior]) if len(interior) else bnd_xy.copy()
    triangles = _triangulate_inside(points, domain)
    triangles = _orient_ccw(points, triangles)

    mesh = _assemble_mesh(spec, h, points, triangles, loops_params, quad_order)
    _check_boundary_edges(mesh)
    min_angle = mesh.min_angle_deg()
    if min_angle < quality_bound_deg:
        raise MeshGenerationError(
            f"mesh quality below bound: min angle {min_angle:.2f} deg < {quality_bound_deg} deg",
            achieved_min_angle_deg=min_angle,
        )
    return mesh


def _hex_lattice(spec: DomainSpec, h: float, domain: _RadialDomain) -> np.ndarray:
    lim = spec_diameter(spec) / 2.0 + h
    dy = h * math.sqrt(3.0) / 2.0
    rows = int(math.ceil(lim / dy))
    cols = int(math.ceil(lim / h))
    ys = dy * np.arange(-rows, rows + 1)
    pts = []
    for r, y in enumerate(ys):
        shift = 0.5 * h if (r - rows) % 2 else 0.0
        xs = h * np.arange(-cols, cols + 1) + shift
        pts.append(np.stack([xs, np.full_like(xs, y)], axis=1))
    pts = np.concatenate(pts)
    return pts[domain.inside(pts, margin=0.7 * h)]


def _relax(
    bnd: np.ndarray,
    interior: np.ndarray,
    h: float,
    domain: _RadialDomain,
    iters: int,
    fscale: float = 1.2,
    dt: float = 0.2,
) -> np.ndarray:
    if len(interior) == 0:
        return interior
    n_bnd = len(bnd)
    pts = np.concatenate([bnd, interior])
    for _ in range(iters):
        tri = Delaunay(pts).simplices
        cent = pts[tri].mean(axis=1)
        tri = tri[domain.inside(cent)]
        edges = np.unique(np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1), axis=0)
        vec = pts[edges[:, 0]] - pts[edges[:, 1]]
        lng = np.linalg.norm(vec, axis=1)
        f = np.maximum(fscale * h - lng, 0.0)
        fvec = vec * (f / np.maximum(lng, 1e-12))[:, None]
        force = np.zeros_like(pts)
        np.add.at(force, edges[:, 0], fvec)
        np.add.at(force, edges[:, 1], -fvec)
        force[:n_bnd] = 0.0
        pts[n_bnd:] += dt * force[n_bnd:]
        pts[n_bnd:] = domain.clamp(pts[n_bnd:], margin=0.55 * h)
        if np.abs(dt * force[n_bnd:]).max() < 1e-3 * h:
            break
    return pts[n_bnd:]


def _triangulate_inside(points: np.ndarray, domain: _RadialDomain) -> np.ndarray:
    tri = Delaunay(points).simplices
    cent = points[tri].mean(axis=1)
    return tri[domain.inside(cent)]


def _orient_ccw(points: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = points[triangles]
    signed = 0.5 * (
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    )
    tri = triangles.copy()
    flip = signed < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    return tri


def _assemble_mesh(
    spec: DomainSpec,
    h: float,
    points: np.ndarray,
    triangles: np.ndarray,
    loops_params: list[np.ndarray],
    quad_order: int,
) -> TriMesh:
    p = points[triangles]
    areas = 0.5 * (
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    )
    if not (areas > 0).all():
        raise MeshGenerationError("degenerate triangle with nonpositive area")
    # gradient of barycentric basis function i: perpendicular of opposite edge / (2A)
    grads = np.empty((len(triangles), 3, 2))
    for i in range(3):
        e = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
        grads[:, i, 0] = -e[:, 1]
        grads[:, i, 1] = e[:, 0]
    grads /= (2.0 * areas)[:, None, None]

    bary, wref = quad_rule(quad_order)
    qp = np.einsum("qk,mki->mqi", bary, p).reshape(-1, 2)
    qw = (wref[None, :] * areas[:, None]).reshape(-1)
    qt = np.repeat(np.arange(len(triangles)), len(wref))

    offset = 0
    loops = []
    for params in loops_params:
        loops.append(np.arange(offset, offset + len(params)))
        offset += len(params)

    return TriMesh(
        spec=spec,
        h=h,
        points=points,
        triangles=triangles,
        boundary_loops=loops,
        boundary_params=loops_params,
        areas=areas,
        basis_grads=grads,
        quad_bary=bary,
        quad_weights_ref=wref,
        quad_points=qp,
        quad_weights=qw,
        quad_tri=qt,
    )


def _check_boundary_edges(mesh: TriMesh) -> None:
    tri = mesh.triangles
    edges = np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    mesh_bnd = {tuple(e) for e in uniq[counts == 1]}
    expected = set()
    for loop in mesh.boundary_loops:
        for i in range(len(loop)):
            a, b = int(loop[i]), int(loop[(i + 1) % len(loop)])
            expected.add((min(a, b), max(a, b)))
    if mesh_bnd != expected:
        raise MeshGenerationError(
            "triangulation boundary does not match the parametric loops "
            f"({len(mesh_bnd ^ expected)} mismatched edges); try a smaller h"
        )


# --------------------------------------------------------------------------
# Exact boundary geometry
# --------------------------------------------------------------------------


@dataclass
class BoundaryGeometry:
    """Exact per-node boundary data evaluated on the parametric curve.

    Mean curvature uses the convention (n-1) H = div of the outward normal
    along the boundary, so a disk of radius R has H = 1/R at every node.
    """

    spec: DomainSpec
    node_index: np.ndarray      # (B,) vertex index into the mesh
    position: np.ndarray        # (B, 2)
    normal: np.ndarray          # (B, 2) outward unit normal
    curvature: np.ndarray       # (B,) scalar mean curvature H
    weight: np.ndarray          # (B,) arc-length quadrature weight
    arclength: np.ndarray       # (B,) arc-length coordinate within the loop
    loop_slices: list[slice]

    @property
    def n_nodes(self) -> int:
        return len(self.node_index)

    def perimeter(self) -> float:
        return float(self.weight.sum())


def boundary_geometry(spec: DomainSpec, mesh: TriMesh) -> BoundaryGeometry:
    """Exact normal, curvature and arc-length weights at the mesh boundary nodes."""
    if spec != mesh.spec:
        raise ValidationError("mesh was generated from a different domain spec")
    curves = boundary_curves(spec)
    idx, pos, nor, cur, wgt, arc, slices = [], [], [], [], [], [], []
    offset = 0
    for curve, loop, params in zip(curves, mesh.boundary_loops, mesh.boundary_params):
        L = curve_length(curve)
        n = len(params)
        idx.append(loop)
        pos.append(curve.point(params))
        nor.append(curve.normal(params))
        cur.append(curve.curvature(params))
        # equal arc-length nodes: each dual cell has exact length L/n
        wgt.append(np.full(n, L / n))
        arc.append(L * np.arange(n) / n)
        slices.append(slice(offset, offset + n))
        offset += n
    return BoundaryGeometry(
        spec=spec,
        node_index=np.concatenate(idx),
        position=np.concatenate(pos),
        normal=np.concatenate(nor),
        curvature=np.concatenate(cur),
        weight=np.concatenate(wgt),
        arclength=np.concatenate(arc),
        loop_slices=slices,
    )


@dataclass(frozen=True)
class Measures:
    volume: float
    perimeter: float


def domain_measures(mesh: TriMesh, metric=None) -> Measures:
    """Volume and perimeter, weighted by the conformal metric when given."""
    bg = boundary_geometry(mesh.spec, mesh)
    if metric is None or metric.is_flat:
        return Measures(float(mesh.quad_weights.sum()), float(bg.weight.sum()))
    vol = float(np.sum(mesh.quad_weights * np.exp(2.0 * metric.phi(mesh.quad_points))))
    per = float(np.sum(bg.weight * np.exp(metric.phi(bg.position))))
    return Measures(vol, per)


# --------------------------------------------------------------------------
# Plain-text mesh export (vertex lines "x y", triangle lines "i j k", 0-based)
# --------------------------------------------------------------------------


def export_mesh(mesh: TriMesh, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for x, y in mesh.points:
            f.write(f"{float(x)!r} {float(y)!r}\n")
        for i, j, k in mesh.triangles:
            f.write(f"{i} {j} {k}\n")


def load_mesh_file(path) -> tuple[np.ndarray, np.ndarray]:
    """Read the plain-text format back; lines with 2 floats are vertices, 3 ints triangles."""
    verts, tris = [], []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            parts = line.split()
            if len(parts) == 2:
                verts.append([float(parts[0]), float(parts[1])])
            elif len(parts) == 3:
                tris.append([int(parts[0]), int(parts[1]), int(parts[2])])
    return np.asarray(verts), np.asarray(tris, dtype=int)
