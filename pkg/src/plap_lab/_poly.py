"""Bivariate polynomial evaluation with exact derivatives.

Coefficients are stored as {(i, j): c} meaning c * x**i * y**j.  Used by the
conformal-factor catalogue and the analytic test-field catalogue.
"""

from __future__ import annotations

import numpy as np

Coeffs = dict[tuple[int, int], float]


def poly_derive(coeffs: Coeffs, axis: int) -> Coeffs:
    """Differentiate once along axis 0 (x) or 1 (y)."""
    out: Coeffs = {}
    for (i, j), c in coeffs.items():
        if axis == 0 and i > 0:
            out[(i - 1, j)] = out.get((i - 1, j), 0.0) + c * i
        elif axis == 1 and j > 0:
            out[(i, j - 1)] = out.get((i, j - 1), 0.0) + c * j
    return out


def poly_eval(coeffs: Coeffs, pts: np.ndarray) -> np.ndarray:
    x = pts[..., 0]
    y = pts[..., 1]
    out = np.zeros(x.shape)
    for (i, j), c in coeffs.items():
        out += c * x**i * y**j
    return out


def poly_degree(coeffs: Coeffs) -> int:
    return max((i + j for (i, j) in coeffs), default=0)
