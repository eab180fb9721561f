"""Quadrature rules on the reference triangle and on edges.

The triangle rule is a conical-product (Duffy) rule: Gauss-Legendre in one
direction times Gauss-Jacobi with weight (1-x) in the other.  A rule of
requested order d integrates every bivariate polynomial of total degree <= d
exactly on the reference triangle {(0,0), (1,0), (0,1)}.
"""

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@lru_cache(maxsize=None)
def triangle_rule(order):
    """Points (n, 2) and weights (n,) on the reference triangle.

    Weights sum to 1/2, the reference area.  Exact for total degree <= order.
    """
    if order < 0:
        raise ValueError("quadrature order must be nonnegative")
    n = max(1, (order + 2) // 2)
    xu, wu = roots_legendre(n)
    # map Legendre to [0,1]
    u = 0.5 * (xu + 1.0)
    wu = 0.5 * wu
    # Gauss-Jacobi for weight (1-v) on [0,1]
    xv, wv = roots_jacobi(n, 1.0, 0.0)
    v = 0.5 * (xv + 1.0)
    wv = 0.25 * wv

    uu, vv = np.meshgrid(u, v, indexing="ij")
    x = (uu * (1.0 - vv)).ravel()
    y = vv.ravel()
    w = np.outer(wu, wv).ravel()
    return np.column_stack([x, y]), w


@lru_cache(maxsize=None)
def edge_rule(npts):
    """Gauss-Legendre points and weights on [0, 1] (weights sum to 1)."""
    if npts < 1:
        raise ValueError("need at least one point")
    x, w = roots_legendre(npts)
    return 0.5 * (x + 1.0), 0.5 * w
