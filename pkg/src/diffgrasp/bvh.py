"""Bounding volume hierarchy for closest-triangle queries.

Median split on the longest axis, leaf size <= 4. Queries prune nodes whose
box is strictly farther than the current best and accept candidates by the
lexicographic rule (squared distance, triangle index), so the result --
distance, feature, and witness -- is bit-identical to a brute-force scan.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distance import _classify_winners, closest_distance_triangles

__all__ = ["Bvh", "build_bvh"]

LEAF_SIZE = 4


@dataclass
class _Node:
    lo: tuple
    hi: tuple
    left: int = -1
    right: int = -1
    leaf: int = -1  # index into the leaf table, -1 for internal nodes


@dataclass
class Bvh:
    nodes: list = field(repr=False)
    leaves: list = field(repr=False)  # (indices, A, B, C) per leaf
    num_triangles: int = 0
    mesh: object = field(default=None, repr=False)

    def closest(self, p):
        """Returns (d2, triangle, region, bary, witness), identical to brute force."""
        p = np.asarray(p, dtype=np.float64)
        px, py, pz = float(p[0]), float(p[1]), float(p[2])
        best_d2 = np.inf
        best_t = -1
        stack = [0]
        nodes = self.nodes
        while stack:
            ni = stack.pop()
            node = nodes[ni]
            lo, hi = node.lo, node.hi
            dx = lo[0] - px if px < lo[0] else (px - hi[0] if px > hi[0] else 0.0)
            dy = lo[1] - py if py < lo[1] else (py - hi[1] if py > hi[1] else 0.0)
            dz = lo[2] - pz if pz < lo[2] else (pz - hi[2] if pz > hi[2] else 0.0)
            if dx * dx + dy * dy + dz * dz > best_d2:
                continue
            if node.leaf >= 0:
                idx, A, B, C = self.leaves[node.leaf]
                d2, _ = closest_distance_triangles(A, B, C, p)
                k = int(np.argmin(d2))  # first minimum: lowest index inside the leaf
                cand_d2 = float(d2[k])
                cand_t = int(idx[k])
                if cand_d2 < best_d2 or (cand_d2 == best_d2 and cand_t < best_t):
                    best_d2 = cand_d2
                    best_t = cand_t
            else:
                # push the farther child first so the nearer one is popped first
                l, r = node.left, node.right
                dl = _box_d2(nodes[l], px, py, pz)
                dr = _box_d2(nodes[r], px, py, pz)
                if dl <= dr:
                    stack.append(r)
                    stack.append(l)
                else:
                    stack.append(l)
                    stack.append(r)
        d2f, t, region, bary, wit = _classify_winners(
            self.mesh, p[None, :], np.array([best_d2]), np.array([best_t])
        )
        return float(d2f[0]), int(t[0]), int(region[0]), bary[0], wit[0]

    def closest_batch(self, P):
        """Vectorized packet traversal; per point identical to closest()."""
        return _closest_batch(self, P)


def _box_d2(node, px, py, pz):
    lo, hi = node.lo, node.hi
    dx = lo[0] - px if px < lo[0] else (px - hi[0] if px > hi[0] else 0.0)
    dy = lo[1] - py if py < lo[1] else (py - hi[1] if py > hi[1] else 0.0)
    dz = lo[2] - pz if pz < lo[2] else (pz - hi[2] if pz > hi[2] else 0.0)
    return dx * dx + dy * dy + dz * dz


def _box_d2_vec(node, P):
    lo = np.asarray(node.lo)
    hi = np.asarray(node.hi)
    d = np.maximum(np.maximum(lo - P, P - hi), 0.0)
    return (d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]) + d[:, 2] * d[:, 2]


def _closest_batch(bvh, P):
    """Packet traversal: all points descend the tree together.

    Per point the accepted candidate is still the lexicographic minimum of
    (squared distance, triangle index), so results match the scalar query and
    brute force bit for bit.
    """
    P = np.asarray(P, dtype=np.float64)
    Q = len(P)
    best_d2 = np.full(Q, np.inf)
    best_t = np.full(Q, np.iinfo(np.int64).max, dtype=np.int64)
    nodes = bvh.nodes
    stack = [(0, np.arange(Q))]
    while stack:
        ni, pts = stack.pop()
        node = nodes[ni]
        alive = pts[_box_d2_vec(node, P[pts]) <= best_d2[pts]]
        if not len(alive):
            continue
        if node.leaf >= 0:
            idx, A, B, C = bvh.leaves[node.leaf]
            d2, _ = closest_distance_triangles(A[None], B[None], C[None], P[alive][:, None, :])
            k = np.argmin(d2, axis=1)  # first minimum: lowest index inside the leaf
            cd2 = d2[np.arange(len(alive)), k]
            ct = idx[k]
            take = (cd2 < best_d2[alive]) | ((cd2 == best_d2[alive]) & (ct < best_t[alive]))
            upd = alive[take]
            best_d2[upd] = cd2[take]
            best_t[upd] = ct[take]
        else:
            l, r = node.left, node.right
            dl = _box_d2_vec(nodes[l], P[alive]).min()
            dr = _box_d2_vec(nodes[r], P[alive]).min()
            if dl <= dr:
                stack.append((r, alive))
                stack.append((l, alive))
            else:
                stack.append((l, alive))
                stack.append((r, alive))
    return _classify_winners(bvh.mesh, P, best_d2, best_t)


def build_bvh(mesh) -> Bvh:
    A, B, C = mesh.triangle_corners()
    tri_lo = np.minimum(np.minimum(A, B), C)
    tri_hi = np.maximum(np.maximum(A, B), C)
    centroids = (A + B + C) / 3.0

    nodes = []
    leaves = []

    def rec(indices) -> int:
        lo = tri_lo[indices].min(axis=0)
        hi = tri_hi[indices].max(axis=0)
        node = _Node(lo=tuple(float(x) for x in lo), hi=tuple(float(x) for x in hi))
        ni = len(nodes)
        nodes.append(node)
        if len(indices) <= LEAF_SIZE:
            idx = np.sort(indices)  # ascending: in-leaf argmin picks lowest index
            node.leaf = len(leaves)
            leaves.append((idx, A[idx].copy(), B[idx].copy(), C[idx].copy()))
            return ni
        axis = int(np.argmax(hi - lo))
        order = np.argsort(centroids[indices, axis], kind="stable")
        half = len(indices) // 2
        left_idx = indices[order[:half]]
        right_idx = indices[order[half:]]
        node.left = rec(left_idx)
        node.right = rec(right_idx)
        return ni

    rec(np.arange(mesh.num_triangles))
    return Bvh(nodes=nodes, leaves=leaves, num_triangles=mesh.num_triangles, mesh=mesh)
