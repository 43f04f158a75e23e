"""Signed distance, outward normal, and normal Jacobian for watertight meshes.

The closest-point primitive is written with fixed componentwise arithmetic so
a query through the BVH and a brute-force scan over all triangles produce
bit-identical results: each triangle's candidate is computed by exactly the
same expressions either way, and the winner is the lexicographic minimum of
(squared distance, triangle index).

Sign convention: n(p) = sign * (p - witness) / |p - witness| with sign from an
angle-weighted pseudonormal test (exact rational parity fallback when the
test is marginal). Under this convention grad d(p) = n(p) holds on both sides
of the surface; the normal Jacobian formulas divide by the *signed* distance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exact import point_inside_exact

__all__ = [
    "ClosestFeature",
    "SignedDistanceResult",
    "SignedDistanceBatch",
    "closest_point_triangles",
    "brute_force_closest",
    "brute_force_closest_batch",
    "signed_distance",
    "signed_distance_batch",
    "distance_gradient",
    "normal_jacobian",
    "normal_jacobian_batch",
    "SingularQueryError",
    "NonDifferentiableQueryError",
]

REGION_FACE = 0
REGION_VERTEX_A = 1
REGION_VERTEX_B = 2
REGION_VERTEX_C = 3
REGION_EDGE_AB = 4
REGION_EDGE_BC = 5
REGION_EDGE_CA = 6

# pseudonormal dot products smaller than this times mesh.scale fall back to
# the exact rational parity test
EXACT_FALLBACK_FACTOR = 1e-10
# below this distance (times mesh.scale) the query sits on the surface to
# machine precision: the parity of an exactly coplanar point is ill-defined
# and its sign is irrelevant to any consumer of d
ON_SURFACE_EPS = 4e-16


class SingularQueryError(ValueError):
    """Query on the surface: the distance gradient is undefined."""


class NonDifferentiableQueryError(ValueError):
    """Two distinct closest features tie: only a subgradient exists."""


@dataclass(frozen=True)
class ClosestFeature:
    kind: str  # 'face' | 'edge' | 'vertex'
    triangle: int
    region: int
    vertex_ids: tuple
    bary: np.ndarray  # theta_1..3, witness = sum theta_k v_k
    witness: np.ndarray


@dataclass(frozen=True)
class SignedDistanceResult:
    d: float
    n: np.ndarray
    feature: ClosestFeature


@dataclass
class SignedDistanceBatch:
    d: np.ndarray        # (Q,) signed
    n: np.ndarray        # (Q, 3)
    triangle: np.ndarray
    region: np.ndarray
    bary: np.ndarray
    witness: np.ndarray


def _dot(u, v):
    return (u[..., 0] * v[..., 0] + u[..., 1] * v[..., 1]) + u[..., 2] * v[..., 2]


def _region_masks(a, b, c, p):
    """Shared seven-case classification; returns masks and edge/face weights.

    Per element the arithmetic is independent of the batch shape, which is
    what makes BVH and brute-force results bit-identical.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = _dot(ab, ap)
    d2_ = _dot(ac, ap)
    bp = p - b
    d3 = _dot(ab, bp)
    d4 = _dot(ac, bp)
    cp = p - c
    d5 = _dot(ab, cp)
    d6 = _dot(ac, cp)
    vc = d1 * d4 - d3 * d2_
    vb = d5 * d2_ - d1 * d6
    va = d3 * d6 - d5 * d4

    m_a = (d1 <= 0.0) & (d2_ <= 0.0)
    taken = m_a.copy()
    m_b = ~taken & (d3 >= 0.0) & (d4 <= d3)
    taken |= m_b
    m_ab = ~taken & (vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0)
    taken |= m_ab
    m_c = ~taken & (d6 >= 0.0) & (d5 <= d6)
    taken |= m_c
    m_ca = ~taken & (vb <= 0.0) & (d2_ >= 0.0) & (d6 <= 0.0)
    taken |= m_ca
    m_bc = ~taken & (va <= 0.0) & (d4 - d3 >= 0.0) & (d5 - d6 >= 0.0)
    taken |= m_bc
    m_f = ~taken

    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = d1 / (d1 - d3)
        w_ca = d2_ / (d2_ - d6)
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = 1.0 / (va + vb + vc)
        v_f = vb * denom
        w_f = vc * denom

    return (ab, ac, m_a, m_b, m_ab, m_c, m_ca, m_bc, m_f, v_ab, w_ca, w_bc, v_f, w_f)


def _witness_from_masks(a, b, c, parts):
    ab, ac, m_a, m_b, m_ab, m_c, m_ca, m_bc, m_f, v_ab, w_ca, w_bc, v_f, w_f = parts
    m = lambda mask: mask[..., None]
    witness = np.where(m(m_a), a, 0.0)
    witness = np.where(m(m_b), b, witness)
    witness = np.where(m(m_ab), a + v_ab[..., None] * ab, witness)
    witness = np.where(m(m_c), c, witness)
    witness = np.where(m(m_ca), a + w_ca[..., None] * ac, witness)
    witness = np.where(m(m_bc), b + w_bc[..., None] * (c - b), witness)
    witness = np.where(m(m_f), a + ab * v_f[..., None] + ac * w_f[..., None], witness)
    return witness


def closest_distance_triangles(a, b, c, p):
    """Lean scan kernel: (squared distance, witness) only."""
    parts = _region_masks(a, b, c, p)
    witness = _witness_from_masks(a, b, c, parts)
    diff = p - witness
    return _dot(diff, diff), witness


def closest_point_triangles(a, b, c, p):
    """Closest point on triangles (a, b, c) to query points p.

    Shapes broadcast: (a, b, c) are (..., 3) and p is (..., 3); typical calls
    are (T, 3) corners against a single (3,) point, or (1, T, 3) corners
    against (Q, 1, 3) points. Returns (d2, witness, region, bary) with
    barycentric entries exact zeros off the supporting feature.
    """
    parts = _region_masks(a, b, c, p)
    ab, ac, m_a, m_b, m_ab, m_c, m_ca, m_bc, m_f, v_ab, w_ca, w_bc, v_f, w_f = parts

    region = np.where(
        m_a, np.int64(REGION_VERTEX_A),
        np.where(
            m_b, np.int64(REGION_VERTEX_B),
            np.where(
                m_ab, np.int64(REGION_EDGE_AB),
                np.where(
                    m_c, np.int64(REGION_VERTEX_C),
                    np.where(
                        m_ca, np.int64(REGION_EDGE_CA),
                        np.where(m_bc, np.int64(REGION_EDGE_BC), np.int64(REGION_FACE)),
                    ),
                ),
            ),
        ),
    )
    zero = np.zeros_like(v_ab)
    one = np.ones_like(v_ab)
    pick = lambda xa, xb, xab, xc, xca, xbc, xf: np.where(
        m_a, xa, np.where(m_b, xb, np.where(m_ab, xab, np.where(
            m_c, xc, np.where(m_ca, xca, np.where(m_bc, xbc, xf)))))
    )
    bary0 = pick(one, zero, 1.0 - v_ab, zero, 1.0 - w_ca, zero, 1.0 - v_f - w_f)
    bary1 = pick(zero, one, v_ab, zero, zero, 1.0 - w_bc, v_f)
    bary2 = pick(zero, zero, zero, one, w_ca, w_bc, w_f)
    bary = np.stack([bary0, bary1, bary2], axis=-1)

    witness = _witness_from_masks(a, b, c, parts)
    diff = p - witness
    d2 = _dot(diff, diff)
    return d2, witness, region, bary


def _classify_winners(mesh, P, d2, t):
    """Full feature data for per-point winning triangles (one vectorized call).

    The recomputation uses the same expressions as the scan, so d2, witness,
    region, and bary are the values any path would have produced in place.
    """
    tri = mesh.triangles[t]
    v = mesh.vertices
    d2f, wit, region, bary = closest_point_triangles(
        v[tri[:, 0]], v[tri[:, 1]], v[tri[:, 2]], P
    )
    return d2f, t, region, bary, wit


def brute_force_closest(mesh, p):
    """Exhaustive scan; ties resolved to the lowest triangle index."""
    a, b, c = mesh.triangle_corners()
    p = np.asarray(p, dtype=np.float64)
    d2, _ = closest_distance_triangles(a, b, c, p)
    t = int(np.argmin(d2))  # argmin returns the first (lowest-index) minimum
    tri = mesh.triangles[t]
    v = mesh.vertices
    d2f, wit, region, bary = closest_point_triangles(v[tri[0]], v[tri[1]], v[tri[2]], p)
    return float(d2f), t, int(region), bary, wit


def brute_force_closest_batch(mesh, P, chunk=512):
    """Vectorized exhaustive scan for many query points."""
    P = np.asarray(P, dtype=np.float64)
    Q = len(P)
    a, b, c = mesh.triangle_corners()
    a, b, c = a[None], b[None], c[None]
    out_d2 = np.empty(Q)
    out_t = np.empty(Q, dtype=np.int64)
    for s in range(0, Q, chunk):
        e = min(Q, s + chunk)
        d2, _ = closest_distance_triangles(a, b, c, P[s:e, None, :])
        t = np.argmin(d2, axis=1)
        out_d2[s:e] = d2[np.arange(e - s), t]
        out_t[s:e] = t
    return _classify_winners(mesh, P, out_d2, out_t)


_EDGE_LOCALS = {REGION_EDGE_AB: (0, 1), REGION_EDGE_BC: (1, 2), REGION_EDGE_CA: (2, 0)}
_VERTEX_LOCALS = {REGION_VERTEX_A: 0, REGION_VERTEX_B: 1, REGION_VERTEX_C: 2}


def _reclassify_flat_edges(mesh, tri, region):
    """Edges between coplanar triangles (fan diagonals) behave as faces."""
    is_edge = region >= REGION_EDGE_AB
    if not np.any(is_edge):
        return region
    local = region[is_edge] - REGION_EDGE_AB
    rows = mesh.tri_edge_index[tri[is_edge], local]
    out = region.copy()
    sel = np.flatnonzero(is_edge)
    out[sel[mesh.edge_flat[rows]]] = REGION_FACE
    return out


def _make_feature(mesh, t, region, bary, witness) -> ClosestFeature:
    tri = mesh.triangles[t]
    if region in _EDGE_LOCALS:
        i, j = _EDGE_LOCALS[region]
        row = mesh.edge_index[(min(int(tri[i]), int(tri[j])), max(int(tri[i]), int(tri[j])))]
        if mesh.edge_flat[row]:
            region = REGION_FACE
    if region == REGION_FACE:
        kind, vids = "face", tuple(int(v) for v in tri)
    elif region in _EDGE_LOCALS:
        i, j = _EDGE_LOCALS[region]
        kind, vids = "edge", (int(tri[i]), int(tri[j]))
    else:
        kind, vids = "vertex", (int(tri[_VERTEX_LOCALS[region]]),)
    return ClosestFeature(
        kind=kind, triangle=int(t), region=int(region), vertex_ids=vids,
        bary=np.asarray(bary), witness=np.asarray(witness),
    )


def _feature_pseudonormal(mesh, feature: ClosestFeature):
    if feature.kind == "face":
        return mesh.face_normals[feature.triangle]
    if feature.kind == "edge":
        i, j = feature.vertex_ids
        return mesh.edge_normals[mesh.edge_index[(min(i, j), max(i, j))]]
    return mesh.vertex_normals[feature.vertex_ids[0]]


def _pseudonormals_batch(mesh, tri, region):
    """Gather the per-feature pseudonormal for arrays of (triangle, region)."""
    out = mesh.face_normals[tri].copy()
    is_edge = region >= REGION_EDGE_AB
    if np.any(is_edge):
        local = region[is_edge] - REGION_EDGE_AB  # 0: AB, 1: BC, 2: CA
        rows = mesh.tri_edge_index[tri[is_edge], local]
        out[is_edge] = mesh.edge_normals[rows]
    is_vert = (region >= REGION_VERTEX_A) & (region <= REGION_VERTEX_C)
    if np.any(is_vert):
        local = region[is_vert] - REGION_VERTEX_A
        vids = mesh.triangles[tri[is_vert], local]
        out[is_vert] = mesh.vertex_normals[vids]
    return out


def signed_distance(mesh, p, bvh=None) -> SignedDistanceResult:
    """Signed distance with outward normal; negative strictly inside.

    Identical through the BVH and by brute force (same primitive, same
    tie-break). The inside/outside decision uses the angle-weighted
    pseudonormal of the closest feature; when the pseudonormal dot product is
    within EXACT_FALLBACK_FACTOR * mesh.scale of zero the sign is recomputed
    with exact rational arithmetic.
    """
    p = np.asarray(p, dtype=np.float64)
    if bvh is not None:
        d2, t, region, bary, witness = bvh.closest(p)
    else:
        d2, t, region, bary, witness = brute_force_closest(mesh, p)
    feature = _make_feature(mesh, t, region, bary, witness)
    u = p - witness
    dist = float(np.sqrt(d2))
    pseudo = _feature_pseudonormal(mesh, feature)
    if dist == 0.0:
        return SignedDistanceResult(d=0.0, n=np.array(pseudo), feature=feature)
    dot = float(pseudo[0] * u[0] + pseudo[1] * u[1] + pseudo[2] * u[2])
    if (abs(dot) < EXACT_FALLBACK_FACTOR * mesh.scale
            and dist > ON_SURFACE_EPS * mesh.scale):
        sign = -1.0 if point_inside_exact(mesh, p) else 1.0
    else:
        sign = 1.0 if dot > 0.0 else -1.0
    return SignedDistanceResult(d=sign * dist, n=(sign / dist) * u, feature=feature)


def signed_distance_batch(mesh, P, bvh=None) -> SignedDistanceBatch:
    """Vectorized signed distance for many points (same results as the scalar op).

    On-surface points (exact zero distance) get the pseudonormal as n.
    """
    P = np.asarray(P, dtype=np.float64)
    if bvh is not None:
        d2, tri, region, bary, witness = bvh.closest_batch(P)
    else:
        d2, tri, region, bary, witness = brute_force_closest_batch(mesh, P)
    region = _reclassify_flat_edges(mesh, tri, region)
    u = P - witness
    dist = np.sqrt(d2)
    pseudo = _pseudonormals_batch(mesh, tri, region)
    dot = _dot(pseudo, u)
    sign = np.where(dot > 0.0, 1.0, -1.0)
    marginal = np.flatnonzero(
        (np.abs(dot) < EXACT_FALLBACK_FACTOR * mesh.scale)
        & (dist > ON_SURFACE_EPS * mesh.scale)
    )
    for k in marginal:
        sign[k] = -1.0 if point_inside_exact(mesh, P[k]) else 1.0
    on_surface = dist == 0.0
    safe = np.where(on_surface, 1.0, dist)
    n = (sign / safe)[:, None] * u
    n[on_surface] = pseudo[on_surface]
    return SignedDistanceBatch(
        d=sign * dist, n=n, triangle=tri, region=region, bary=bary, witness=witness
    )


def distance_gradient(result: SignedDistanceResult, d_tol: float = 1e-15):
    """grad d(p) = n(p); undefined on the surface."""
    if abs(result.d) <= d_tol:
        raise SingularQueryError(f"query is on the surface (d={result.d!r})")
    return result.n


def _find_feature_ties(mesh, p, d2_best, witness, rel=1e-9):
    """Indices of triangles whose closest point ties d2_best at a distinct witness."""
    a, b, c = mesh.triangle_corners()
    d2, wit, _, _ = closest_point_triangles(a, b, c, np.asarray(p, dtype=np.float64))
    slack = 2.0 * rel * d2_best + (rel * mesh.scale) ** 2
    close = np.flatnonzero(d2 <= d2_best + slack)
    dvw = wit[close] - witness
    distinct = _dot(dvw, dvw) > (rel * mesh.scale) ** 2
    return close[distinct]


def normal_jacobian(mesh, result: SignedDistanceResult, p, d_tol=None, check_ties=True):
    """partial n / partial p, by closest-feature kind.

    face   -> 0
    vertex -> (I - n n^T) / d
    edge   -> (I - n n^T - e e^T) / d    (e = unit edge direction)

    d is the *signed* distance, which makes the formulas agree with central
    finite differences of n(p) on both sides of the surface.
    """
    p = np.asarray(p, dtype=np.float64)
    if d_tol is None:
        d_tol = 1e-12 * mesh.scale
    if abs(result.d) <= d_tol:
        raise SingularQueryError(f"query is on the surface (d={result.d!r})")
    if check_ties:
        ties = _find_feature_ties(mesh, p, result.d * result.d, result.feature.witness)
        if len(ties):
            raise NonDifferentiableQueryError(
                f"closest feature tied with triangles {ties.tolist()}"
            )
    n = result.n
    if result.feature.kind == "face":
        return np.zeros((3, 3))
    if result.feature.kind == "vertex":
        return (np.eye(3) - np.outer(n, n)) / result.d
    i, j = result.feature.vertex_ids
    e = mesh.vertices[j] - mesh.vertices[i]
    e = e / np.linalg.norm(e)
    return (np.eye(3) - np.outer(n, n) - np.outer(e, e)) / result.d


def normal_jacobian_batch(mesh, batch: SignedDistanceBatch):
    """(Q, 3, 3) feature-wise normal Jacobians; subgradients at degeneracies.

    Loss evaluation treats ties and on-surface hits (measure zero along an
    optimization path) as subgradient points: face-case zero is used there.
    """
    Q = len(batch.d)
    out = np.zeros((Q, 3, 3))
    d = batch.d
    ok = np.abs(d) > 1e-12 * mesh.scale
    eye = np.eye(3)

    is_vert = ok & (batch.region >= REGION_VERTEX_A) & (batch.region <= REGION_VERTEX_C)
    if np.any(is_vert):
        n = batch.n[is_vert]
        out[is_vert] = (eye[None] - n[:, :, None] * n[:, None, :]) / d[is_vert, None, None]

    is_edge = ok & (batch.region >= REGION_EDGE_AB)
    if np.any(is_edge):
        local = batch.region[is_edge] - REGION_EDGE_AB
        tri = mesh.triangles[batch.triangle[is_edge]]
        rows = np.arange(len(tri))
        i = tri[rows, local]
        j = tri[rows, (local + 1) % 3]
        e = mesh.vertices[j] - mesh.vertices[i]
        e /= np.linalg.norm(e, axis=1, keepdims=True)
        n = batch.n[is_edge]
        out[is_edge] = (
            eye[None] - n[:, :, None] * n[:, None, :] - e[:, :, None] * e[:, None, :]
        ) / d[is_edge, None, None]
    return out
