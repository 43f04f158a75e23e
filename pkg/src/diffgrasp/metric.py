"""Generalized grasp-quality upper bound over a discrete wrench-direction set.

Quality is the radius of the largest origin-centered ball, in the metric
Diag(1,1,1,m,m,m), inscribed in the admissible wrench space. Per direction s
the support of each contact's capped friction cone has the closed form

    weight * (w_perp + mu * w_par),        clamped at 0 for the standalone op,
    w_perp = s^T M [I; p x] n,   w_par = ||s^T M [I; p x] (I - n n^T)||,

the maximum being attained on the rim where the friction boundary meets the
force-cap plane. Each contact's force cap is scaled by the admissibility
weight exp(-alpha*|d| - beta*(1 + n.n_g)), which extends the metric to
grasp points off the object surface.

Directions are compared against the ball radius, so every per-direction
support is divided by sqrt(s^T M s); with m = 1 this is a no-op. Minimizing
over any finite direction set then upper-bounds the true quality, and
refining the set never increases the value.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MetricParams",
    "ContactPoint",
    "DirectionSet",
    "Q1UpperResult",
    "ContactGradient",
    "contact_weight",
    "support_in_cone",
    "make_directions",
    "q1_upper",
    "q1_dense_oracle",
    "q1_upper_unweighted",
]

EXP_UNDERFLOW = -700.0  # exponent arguments below this evaluate to weight 0


@dataclass(frozen=True)
class MetricParams:
    """Table of metric parameters; defaults are the reference configuration."""

    alpha: float = 6.0
    beta: float = 8.0
    mu: float = 0.7
    m: float = 0.001

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if self.m <= 0:
            raise ValueError("m must be > 0")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")

    @property
    def M_diag(self):
        return np.array([1.0, 1.0, 1.0, self.m, self.m, self.m])


@dataclass(frozen=True)
class ContactPoint:
    p: np.ndarray
    d: float
    n: np.ndarray
    n_g: np.ndarray

    @classmethod
    def make(cls, p, d, n, n_g):
        return cls(
            p=np.asarray(p, dtype=np.float64),
            d=float(d),
            n=np.asarray(n, dtype=np.float64),
            n_g=np.asarray(n_g, dtype=np.float64),
        )


@dataclass(frozen=True)
class DirectionSet:
    vectors: np.ndarray  # (D, 6) unit rows
    seed: int

    def __len__(self):
        return len(self.vectors)


@dataclass
class ContactGradient:
    dp: np.ndarray
    dd: float
    dn: np.ndarray
    dng: np.ndarray


@dataclass
class Q1UpperResult:
    value: float
    argmin_direction: int
    argmax_contact: int
    per_direction: np.ndarray  # signed normalized supports, before clamping
    weights: np.ndarray
    gradients: list  # ContactGradient per contact (zero when clamped at 0)


def make_directions(count: int, seed: int = 0) -> DirectionSet:
    """Deterministic unit 6-vectors; streams are prefix-stable in count.

    Gaussian rows normalized to unit length: the first k rows of
    make_directions(D) equal make_directions(k) for k <= D, which gives the
    nested-set monotonicity used by the dense oracle.
    """
    if count < 1:
        raise ValueError("need at least one direction")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((count, 6))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    return DirectionSet(vectors=v / norms, seed=seed)


def contact_weight(d, n, n_g, alpha, beta):
    """exp(-alpha*|d| - beta*(1 + n.n_g)) in (0, 1] for unit normals.

    Returns (w, dw/dd, dw/dn, dw/dn_g); the d-derivative at d = 0 is the
    zero subgradient.
    """
    n = np.asarray(n, dtype=np.float64)
    n_g = np.asarray(n_g, dtype=np.float64)
    arg = -alpha * abs(d) - beta * (1.0 + float(n @ n_g))
    if arg < EXP_UNDERFLOW:
        return 0.0, 0.0, np.zeros(3), np.zeros(3)
    w = float(np.exp(arg))
    sgn = 0.0 if d == 0.0 else (1.0 if d > 0.0 else -1.0)
    return w, -alpha * sgn * w, -beta * w * n_g, -beta * w * n


def _support_terms(s, p, n, m):
    """w_perp, w_par and intermediates for a single direction/contact pair."""
    s = np.asarray(s, dtype=np.float64)
    sf, st = s[:3], m * s[3:]
    v = sf - np.cross(p, st)  # ([I; p x]^T M s)
    w_perp = float(v @ n)
    u = v - w_perp * n
    w_par = float(np.linalg.norm(u))
    return v, w_perp, u, w_par


def support_in_cone(s, contact: ContactPoint, params: MetricParams):
    """Support of one weighted friction cone in wrench direction s.

    Returns (value, ContactGradient). The support of a set containing the
    origin is nonnegative, so the value is clamped at 0 (with the zero
    subgradient on the clamped branch).
    """
    w, dw_dd, dw_dn, dw_dng, base, g = _support_signed(s, contact, params)
    val = w * base
    if val <= 0.0:
        return 0.0, ContactGradient(np.zeros(3), 0.0, np.zeros(3), np.zeros(3))
    return val, g


def _support_signed(s, contact, params):
    """Unclamped weighted support and its gradient pieces."""
    w, dw_dd, dw_dn, dw_dng = contact_weight(
        contact.d, contact.n, contact.n_g, params.alpha, params.beta
    )
    v, w_perp, u, w_par = _support_terms(s, contact.p, contact.n, params.m)
    mu = params.mu
    base = w_perp + mu * w_par
    st = params.m * np.asarray(s, dtype=np.float64)[3:]
    n = contact.n
    uhat = u / w_par if w_par > 0.0 else np.zeros(3)
    # d(base)/dp = m*(n x s_t) + mu*m*(uhat x s_t)  [with st = m*s_tau]
    dbase_dp = np.cross(n, st) + mu * np.cross(uhat, st)
    dbase_dn = v - mu * w_perp * uhat
    grad = ContactGradient(
        dp=w * dbase_dp,
        dd=dw_dd * base,
        dn=w * dbase_dn + dw_dn * base,
        dng=dw_dng * base,
    )
    return w, dw_dd, dw_dn, dw_dng, base, grad


def _support_matrix(contacts, dirs, params, weights=None):
    """(N, D) signed supports weight_i * (w_perp + mu*w_par), vectorized."""
    S = dirs.vectors
    D = len(S)
    N = len(contacts)
    H = np.empty((N, D))
    sf = S[:, :3]
    st = params.m * S[:, 3:]
    for i, c in enumerate(contacts):
        if weights is None:
            w, _, _, _ = contact_weight(c.d, c.n, c.n_g, params.alpha, params.beta)
        else:
            w = weights[i]
        v = sf - np.cross(np.broadcast_to(c.p, (D, 3)), st)
        w_perp = v @ c.n
        u = v - np.outer(w_perp, c.n)
        w_par = np.sqrt((u[:, 0] * u[:, 0] + u[:, 1] * u[:, 1]) + u[:, 2] * u[:, 2])
        H[i] = w * (w_perp + params.mu * w_par)
    return H


def _ball_norms(dirs, params):
    S = dirs.vectors
    Md = params.M_diag
    return np.sqrt(
        (S[:, 0] ** 2 + S[:, 1] ** 2 + S[:, 2] ** 2)
        + params.m * (S[:, 3] ** 2 + S[:, 4] ** 2 + S[:, 5] ** 2)
    )


def q1_upper(contacts, dirs: DirectionSet, params: MetricParams,
             _weights=None) -> Q1UpperResult:
    """max(0, min over directions of the per-direction support of the hull).

    The admissible wrench space is the convex hull of the per-contact cones,
    so its support per direction is the max over contacts. Subgradients flow
    through the single argmin direction and its argmax contact (lowest index
    on ties); the gradient is zero when the value clamps at 0.
    """
    N = len(contacts)
    weights = np.array(
        [
            contact_weight(c.d, c.n, c.n_g, params.alpha, params.beta)[0]
            for c in contacts
        ]
    ) if _weights is None else np.asarray(_weights, dtype=np.float64)
    if N == 0:
        return Q1UpperResult(
            value=0.0, argmin_direction=-1, argmax_contact=-1,
            per_direction=np.zeros(len(dirs)), weights=np.zeros(0), gradients=[],
        )
    H = _support_matrix(contacts, dirs, params, weights=weights)
    per_dir = H.max(axis=0) / _ball_norms(dirs, params)
    j = int(np.argmin(per_dir))
    i = int(np.argmax(H[:, j]))
    raw = float(per_dir[j])
    grads = [ContactGradient(np.zeros(3), 0.0, np.zeros(3), np.zeros(3)) for _ in range(N)]
    value = max(0.0, raw)
    if raw > 0.0:
        s = dirs.vectors[j]
        _, _, _, _, _, g = _support_signed(s, contacts[i], params)
        scale = 1.0 / float(_ball_norms(DirectionSet(s[None, :], dirs.seed), params)[0])
        grads[i] = ContactGradient(
            dp=g.dp * scale, dd=g.dd * scale, dn=g.dn * scale, dng=g.dng * scale
        )
    return Q1UpperResult(
        value=value, argmin_direction=j, argmax_contact=i,
        per_direction=per_dir, weights=weights, gradients=grads,
    )


def q1_dense_oracle(contacts, params: MetricParams, n_dirs: int = 100_000,
                    seed: int = 0) -> float:
    """Reference estimator: the upper bound over a very large direction set.

    Shares the seeded stream with make_directions, so for the same seed it is
    monotone non-increasing in n_dirs.
    """
    if len(contacts) == 0:
        return 0.0
    dirs = make_directions(n_dirs, seed)
    H = _support_matrix(contacts, dirs, params)
    per_dir = H.max(axis=0) / _ball_norms(dirs, params)
    return max(0.0, float(per_dir.min()))


def q1_upper_unweighted(contacts, dirs: DirectionSet, params: MetricParams) -> float:
    """Exact-contact metric: the same bound with every force cap at 1.

    Implemented without touching the weight machinery at all, as the
    independent reference for the exact-contact reduction (weights that are
    identically 1.0 multiply bitwise-exactly).
    """
    if len(contacts) == 0:
        return 0.0
    S = dirs.vectors
    D = len(S)
    sf = S[:, :3]
    st = params.m * S[:, 3:]
    best = np.full(D, -np.inf)
    for c in contacts:
        v = sf - np.cross(np.broadcast_to(c.p, (D, 3)), st)
        w_perp = v @ c.n
        u = v - np.outer(w_perp, c.n)
        w_par = np.sqrt((u[:, 0] * u[:, 0] + u[:, 1] * u[:, 1]) + u[:, 2] * u[:, 2])
        best = np.maximum(best, w_perp + params.mu * w_par)
    per_dir = best / _ball_norms(dirs, params)
    return max(0.0, float(per_dir.min()))
