"""Exact-arithmetic point-in-mesh parity test.

Near-coplanar queries defeat floating-point sign tests, so inside/outside is
settled by counting ray crossings with rational arithmetic. A vectorized
float pass with a generous error band discards triangles that provably do
not cross; only the uncertain ones are re-evaluated exactly.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np

try:
    from gmpy2 import mpq as _rational
except ImportError:  # pragma: no cover - gmpy2 is a declared dependency
    _rational = Fraction

__all__ = ["point_inside_exact", "orient3d_exact"]

# Candidate ray directions; retried in order when a degeneracy (exact zero
# predicate) is hit. Components are primes so axis-aligned meshes rarely
# produce degenerate hits on the first try.
_DIRECTIONS = [
    (973, 1039, 1103),
    (1033, 907, 997),
    (881, 1087, 941),
    (1109, 827, 1021),
    (799, 1201, 883),
]

# |det| below band * (magnitude scale)^3 is treated as uncertain in floats.
_BAND = 1e-9


def orient3d_exact(a, b, c, d):
    """Sign of det[a-d, b-d, c-d] computed with rational arithmetic."""
    ad = [_rational(a[k]) - _rational(d[k]) for k in range(3)]
    bd = [_rational(b[k]) - _rational(d[k]) for k in range(3)]
    cd = [_rational(c[k]) - _rational(d[k]) for k in range(3)]
    det = (
        ad[0] * (bd[1] * cd[2] - bd[2] * cd[1])
        - ad[1] * (bd[0] * cd[2] - bd[2] * cd[0])
        + ad[2] * (bd[0] * cd[1] - bd[1] * cd[0])
    )
    if det > 0:
        return 1
    if det < 0:
        return -1
    return 0


def _orient_rows(a, b, c, d):
    """Float orient3d for row-stacked triangle corners against points."""
    ad = a - d
    bd = b - d
    cd = c - d
    det = (
        ad[:, 0] * (bd[:, 1] * cd[:, 2] - bd[:, 2] * cd[:, 1])
        - ad[:, 1] * (bd[:, 0] * cd[:, 2] - bd[:, 2] * cd[:, 0])
        + ad[:, 2] * (bd[:, 0] * cd[:, 1] - bd[:, 1] * cd[:, 0])
    )
    mag = (
        (np.abs(ad).max(axis=1) + 1e-300)
        * (np.abs(bd).max(axis=1) + 1e-300)
        * (np.abs(cd).max(axis=1) + 1e-300)
    )
    return det, _BAND * mag


class _Degenerate(Exception):
    pass


def _segment_crosses_exact(a, b, c, p, q):
    """Exact parity contribution of segment pq against triangle abc.

    Raises _Degenerate when any predicate is exactly zero (the ray grazes a
    vertex, edge, or the triangle plane), in which case the caller retries
    with another direction.
    """
    s1 = orient3d_exact(a, b, c, p)
    s2 = orient3d_exact(a, b, c, q)
    if s1 == 0 or s2 == 0:
        raise _Degenerate
    if s1 == s2:
        return False
    t1 = orient3d_exact(p, q, a, b)
    t2 = orient3d_exact(p, q, b, c)
    t3 = orient3d_exact(p, q, c, a)
    if t1 == 0 or t2 == 0 or t3 == 0:
        raise _Degenerate
    return t1 == t2 == t3


def point_inside_exact(mesh, p) -> bool:
    """True iff p lies strictly inside the watertight mesh.

    Odd ray-crossing parity with exact predicates; degenerate hits retry a
    different rational direction.
    """
    p = np.asarray(p, dtype=np.float64)
    A, B, C = mesh.triangle_corners()
    span = float(np.max(np.abs(np.concatenate([mesh.bbox_min, mesh.bbox_max, p])))) + 1.0

    for dx, dy, dz in _DIRECTIONS:
        # Far endpoint outside the bounding box along the rational direction.
        # 4*span/dmin guarantees every component travels past the box.
        dmin = min(dx, dy, dz)
        tfar = Fraction(4 * int(np.ceil(span)), dmin) + 1
        q = np.array(
            [
                p[0] + float(tfar * dx),
                p[1] + float(tfar * dy),
                p[2] + float(tfar * dz),
            ]
        )
        # q's float coordinates are what the exact pass uses too: the segment
        # endpoints must be identical in both passes.
        s1, band1 = _orient_rows(A, B, C, p[None, :])
        s2, band2 = _orient_rows(A, B, C, q[None, :])
        sure_same_side = ((s1 > band1) & (s2 > band2)) | ((s1 < -band1) & (s2 < -band2))
        candidates = np.flatnonzero(~sure_same_side)
        if len(candidates):
            P = np.broadcast_to(p, (len(candidates), 3))
            Q = np.broadcast_to(q, (len(candidates), 3))
            a, b, c = A[candidates], B[candidates], C[candidates]
            t1, e1 = _orient_rows(P, Q, a, b)
            t2, e2 = _orient_rows(P, Q, b, c)
            t3, e3 = _orient_rows(P, Q, c, a)
            pos = (t1 > e1) | (t2 > e2) | (t3 > e3)
            neg = (t1 < -e1) | (t2 < -e2) | (t3 < -e3)
            candidates = candidates[~(pos & neg)]
        try:
            crossings = 0
            for t in candidates:
                if _segment_crosses_exact(A[t], B[t], C[t], p, q):
                    crossings += 1
            return crossings % 2 == 1
        except _Degenerate:
            continue
    raise RuntimeError("all ray directions degenerate; mesh or query pathological")
