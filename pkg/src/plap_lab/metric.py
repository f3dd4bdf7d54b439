"""Conformally flat 2-D Riemannian metrics g = e^{2 phi} delta.

The conformal exponent phi comes from a small closed-form catalogue (constant,
bivariate polynomial up to degree 4, radial Gaussian bump) so that first and
second derivatives are exact.  In two dimensions Ric >= 0 is equivalent to the
Gaussian curvature K = -e^{-2 phi} (Delta phi) being nonnegative, i.e. to
Delta phi <= 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._poly import Coeffs, poly_degree, poly_derive, poly_eval
from .errors import ValidationError

_EYE2 = np.eye(2)


@dataclass(frozen=True)
class ConformalMetric:
    kind: str                               # flat | constant | poly | bump
    constant: float = 0.0
    coeffs: tuple = ()                      # ((i, j, c), ...) for poly
    bump: tuple = ()                        # (amplitude, x0, y0, sigma)
    nonnegative_ricci: bool = False

    # -- catalogue constructors -------------------------------------------

    @staticmethod
    def flat() -> "ConformalMetric":
        return ConformalMetric(kind="flat", nonnegative_ricci=True)

    @staticmethod
    def const(c: float) -> "ConformalMetric":
        return ConformalMetric(kind="constant", constant=float(c), nonnegative_ricci=True)

    @staticmethod
    def poly(coeffs: Coeffs | list, nonnegative_ricci: bool = False) -> "ConformalMetric":
        if isinstance(coeffs, dict):
            items = tuple(sorted((int(i), int(j), float(c)) for (i, j), c in coeffs.items()))
        else:
            items = tuple(sorted((int(i), int(j), float(c)) for i, j, c in coeffs))
        if poly_degree({(i, j): c for i, j, c in items}) > 4:
            raise ValidationError("conformal polynomial exponent limited to degree 4")
        return ConformalMetric(kind="poly", coeffs=items, nonnegative_ricci=nonnegative_ricci)

    @staticmethod
    def gaussian_bump(amplitude: float, x0: float = 0.0, y0: float = 0.0,
                      sigma: float = 1.0, nonnegative_ricci: bool = False) -> "ConformalMetric":
        if sigma <= 0:
            raise ValidationError("bump width sigma must be positive")
        return ConformalMetric(
            kind="bump",
            bump=(float(amplitude), float(x0), float(y0), float(sigma)),
            nonnegative_ricci=nonnegative_ricci,
        )

    # -- basic queries ------------------------------------------------------

    @property
    def is_flat(self) -> bool:
        return self.kind == "flat"

    def _poly_coeffs(self) -> Coeffs:
        return {(i, j): c for i, j, c in self.coeffs}

    def phi(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        shape = pts.shape[:-1]
        if self.kind == "flat":
            return np.zeros(shape)
        if self.kind == "constant":
            return np.full(shape, self.constant)
        if self.kind == "poly":
            return poly_eval(self._poly_coeffs(), pts)
        A, x0, y0, s = self.bump
        d2 = (pts[..., 0] - x0) ** 2 + (pts[..., 1] - y0) ** 2
        return A * np.exp(-d2 / (2.0 * s * s))

    def grad_phi(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        shape = pts.shape[:-1]
        if self.kind in ("flat", "constant"):
            return np.zeros(shape + (2,))
        if self.kind == "poly":
            c = self._poly_coeffs()
            return np.stack([poly_eval(poly_derive(c, 0), pts), poly_eval(poly_derive(c, 1), pts)], axis=-1)
        A, x0, y0, s = self.bump
        val = self.phi(pts)
        d = np.stack([pts[..., 0] - x0, pts[..., 1] - y0], axis=-1)
        return -d * (val / (s * s))[..., None]

    def hess_phi(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        shape = pts.shape[:-1]
        if self.kind in ("flat", "constant"):
            return np.zeros(shape + (2, 2))
        if self.kind == "poly":
            c = self._poly_coeffs()
            cx = poly_derive(c, 0)
            cy = poly_derive(c, 1)
            hxx = poly_eval(poly_derive(cx, 0), pts)
            hxy = poly_eval(poly_derive(cx, 1), pts)
            hyy = poly_eval(poly_derive(cy, 1), pts)
            out = np.empty(shape + (2, 2))
            out[..., 0, 0] = hxx
            out[..., 0, 1] = hxy
            out[..., 1, 0] = hxy
            out[..., 1, 1] = hyy
            return out
        A, x0, y0, s = self.bump
        val = self.phi(pts)
        d = np.stack([pts[..., 0] - x0, pts[..., 1] - y0], axis=-1)
        outer = d[..., :, None] * d[..., None, :]
        return (val / s**4)[..., None, None] * outer - (val / s**2)[..., None, None] * _EYE2

    def laplacian_phi(self, pts: np.ndarray) -> np.ndarray:
        h = self.hess_phi(pts)
        return h[..., 0, 0] + h[..., 1, 1]

    # -- serialization ------------------------------------------------------

    def to_json(self) -> dict:
        if self.kind == "flat":
            return {"kind": "flat"}
        if self.kind == "constant":
            return {"kind": "constant", "params": [self.constant]}
        if self.kind == "poly":
            out = {"kind": "poly", "params": [[i, j, c] for i, j, c in self.coeffs]}
        else:
            out = {"kind": "bump", "params": list(self.bump)}
        if self.nonnegative_ricci:
            out["nonnegative_ricci"] = True
        return out

    @staticmethod
    def from_json(obj: dict) -> "ConformalMetric":
        if not isinstance(obj, dict) or "kind" not in obj:
            raise ValidationError("metric spec must be an object with a 'kind' key")
        kind = obj["kind"]
        allowed = {"kind", "params", "nonnegative_ricci"}
        extra = set(obj) - allowed
        if extra:
            raise ValidationError(f"unknown keys in metric spec: {sorted(extra)}")
        flag = bool(obj.get("nonnegative_ricci", False))
        params = obj.get("params", [])
        if kind == "flat":
            return ConformalMetric.flat()
        if kind == "constant":
            if len(params) != 1:
                raise ValidationError("constant metric takes params [c]")
            return ConformalMetric.const(params[0])
        if kind == "poly":
            try:
                triples = [(int(i), int(j), float(c)) for i, j, c in params]
            except (TypeError, ValueError) as exc:
                raise ValidationError("poly metric params must be [i, j, c] triples") from exc
            return ConformalMetric.poly(triples, nonnegative_ricci=flag)
        if kind == "bump":
            if len(params) != 4:
                raise ValidationError("bump metric takes params [amplitude, x0, y0, sigma]")
            return ConformalMetric.gaussian_bump(*params, nonnegative_ricci=flag)
        raise ValidationError(f"unknown metric kind {kind!r}")


# --------------------------------------------------------------------------
# Curvature operations
# --------------------------------------------------------------------------


def gaussian_curvature(metric: ConformalMetric, pts: np.ndarray) -> np.ndarray:
    """K = -e^{-2 phi} Delta phi (identically zero for flat and constant)."""
    pts = np.asarray(pts, dtype=float)
    if metric.kind in ("flat", "constant"):
        return np.zeros(pts.shape[:-1])
    return -np.exp(-2.0 * metric.phi(pts)) * metric.laplacian_phi(pts)


def ricci_quadratic(metric: ConformalMetric, pts: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Ric(v, v) for a coordinate tangent vector v: in 2-D this is K * g(v, v)."""
    pts = np.asarray(pts, dtype=float)
    v = np.asarray(v, dtype=float)
    vv = np.sum(v * v, axis=-1)
    if metric.is_flat:
        return np.zeros(pts.shape[:-1]) * vv
    K = gaussian_curvature(metric, pts)
    return K * np.exp(2.0 * metric.phi(pts)) * vv


def geodesic_boundary_curvature(metric: ConformalMetric, bg) -> np.ndarray:
    """Boundary mean curvature under g: H_g = e^{-phi} (H_euclid + d_nu phi)."""
    if metric.is_flat:
        return bg.curvature.copy()
    phi = metric.phi(bg.position)
    dphi = metric.grad_phi(bg.position)
    dn = np.einsum("ij,ij->i", dphi, bg.normal)
    return np.exp(-phi) * (bg.curvature + dn)


def check_nonnegative_ricci(metric: ConformalMetric, pts: np.ndarray, tol: float = 1e-12) -> None:
    """Verify Delta phi <= tol at the given points for a declared Ric >= 0 metric."""
    if not metric.nonnegative_ricci:
        raise ValidationError("metric is not declared nonnegative_ricci")
    if metric.kind in ("flat", "constant"):
        return
    worst = float(metric.laplacian_phi(np.asarray(pts, dtype=float)).max())
    if worst > tol:
        raise ValidationError(
            f"metric declared nonnegative_ricci but Delta phi reaches {worst:.3e} > {tol:.1e}"
        )
