"""Reference elements and quadrature rules.

Two element families are supported: 6-node quadratic triangles and 9-node
quadratic quadrilaterals (gmsh node ordering: corners first, then edge
midpoints, then -- for quads -- the cell center).  Boundary edges are 3-node
quadratic lines.  All assembly quadrature points are strictly interior to the
reference element, so integrands containing 1/r are never sampled on the
symmetry axis.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "tri6_shape",
    "quad9_shape",
    "line3_shape",
    "tri_rule",
    "quad_rule",
    "line_rule",
]


def tri6_shape(points):
    """Shape functions and reference gradients of the 6-node triangle.

    Parameters
    ----------
    points : (Q, 2) array of (x, y) in the reference triangle
        {x >= 0, y >= 0, x + y <= 1}.

    Returns
    -------
    N : (Q, 6) values, dN : (Q, 6, 2) gradients w.r.t. (x, y).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    l0 = 1.0 - x - y
    N = np.stack(
        [
            l0 * (2.0 * l0 - 1.0),
            x * (2.0 * x - 1.0),
            y * (2.0 * y - 1.0),
            4.0 * x * l0,
            4.0 * x * y,
            4.0 * y * l0,
        ],
        axis=1,
    )
    zeros = np.zeros_like(x)
    dNdx = np.stack(
        [1.0 - 4.0 * l0, 4.0 * x - 1.0, zeros, 4.0 * (l0 - x), 4.0 * y, -4.0 * y],
        axis=1,
    )
    dNdy = np.stack(
        [1.0 - 4.0 * l0, zeros, 4.0 * y - 1.0, -4.0 * x, 4.0 * x, 4.0 * (l0 - y)],
        axis=1,
    )
    return N, np.stack([dNdx, dNdy], axis=2)


def _lag3(t):
    """1D quadratic Lagrange basis on nodes (-1, +1, 0) and its derivative."""
    t = np.asarray(t, dtype=float)
    vals = np.stack([0.5 * t * (t - 1.0), 0.5 * t * (t + 1.0), 1.0 - t * t], axis=-1)
    ders = np.stack([t - 0.5, t + 0.5, -2.0 * t], axis=-1)
    return vals, ders


# gmsh quad9 node layout in reference coordinates (u, v) on [-1, 1]^2
_QUAD9_UV = np.array(
    [(-1, -1), (1, -1), (1, 1), (-1, 1), (0, -1), (1, 0), (0, 1), (-1, 0), (0, 0)],
    dtype=float,
)
# index into the (-1, +1, 0) 1D node ordering for each quad9 node
_IDX = {-1.0: 0, 1.0: 1, 0.0: 2}


def quad9_shape(points):
    """Shape functions and reference gradients of the 9-node quadrilateral."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    lu, du = _lag3(pts[:, 0])
    lv, dv = _lag3(pts[:, 1])
    iu = [_IDX[a] for a, _ in _QUAD9_UV]
    iv = [_IDX[b] for _, b in _QUAD9_UV]
    N = lu[:, iu] * lv[:, iv]
    dNdu = du[:, iu] * lv[:, iv]
    dNdv = lu[:, iu] * dv[:, iv]
    return N, np.stack([dNdu, dNdv], axis=2)


def line3_shape(points):
    """Shape functions and derivatives of the 3-node edge, t on [-1, 1]."""
    t = np.atleast_1d(np.asarray(points, dtype=float))
    vals, ders = _lag3(t)
    return vals, ders


# 7-point degree-5 rule on the reference triangle; weights sum to 1/2.
_A1 = 0.47014206410511508
_A2 = 0.10128650732345633
_W0 = 0.5 * 9.0 / 40.0
_W1 = 0.5 * 0.13239415278850618
_W2 = 0.5 * 0.12593918054482715
_TRI7_PTS = np.array(
    [
        (1.0 / 3.0, 1.0 / 3.0),
        (_A1, _A1),
        (1.0 - 2.0 * _A1, _A1),
        (_A1, 1.0 - 2.0 * _A1),
        (_A2, _A2),
        (1.0 - 2.0 * _A2, _A2),
        (_A2, 1.0 - 2.0 * _A2),
    ]
)
_TRI7_WTS = np.array([_W0, _W1, _W1, _W1, _W2, _W2, _W2])


def tri_rule(degree: int = 5):
    """Interior quadrature rule on the reference triangle.

    degree <= 5 uses the classic 7-point rule; higher degrees fall back to a
    collapsed (Duffy) tensor-Gauss rule, which also keeps every point strictly
    inside the triangle.
    """
    if degree <= 5:
        return _TRI7_PTS.copy(), _TRI7_WTS.copy()
    n = degree // 2 + 2
    xg, wg = np.polynomial.legendre.leggauss(n)
    a = 0.5 * (xg + 1.0)
    wa = 0.5 * wg
    A, B = np.meshgrid(a, a, indexing="ij")
    WA, WB = np.meshgrid(wa, wa, indexing="ij")
    x = (A * (1.0 - B)).ravel()
    y = B.ravel()
    w = (WA * WB * (1.0 - B)).ravel()
    return np.column_stack([x, y]), w


def quad_rule(degree: int = 5):
    """Tensor Gauss rule on [-1, 1]^2 exact to the given 1D degree."""
    n = max(2, degree // 2 + 1)
    xg, wg = np.polynomial.legendre.leggauss(n)
    U, V = np.meshgrid(xg, xg, indexing="ij")
    WU, WV = np.meshgrid(wg, wg, indexing="ij")
    return np.column_stack([U.ravel(), V.ravel()]), (WU * WV).ravel()


def line_rule(degree: int = 5):
    """Gauss rule on [-1, 1]."""
    n = max(2, degree // 2 + 1)
    return np.polynomial.legendre.leggauss(n)
