"""Grasp-quality lower bound via a sum-of-squares certificate, with analytic
gradients from sensitivity analysis of the induced SDP.

Dual-cone reduction: the metric ball of radius r fits inside the admissible
wrench cone iff every (a, b) in the dual wrench cone

    K_W* = { (a, b) : V_i_perp.a + b >= mu * sqrt((V_i_t1.a)^2 + (V_i_t2.a)^2) }

satisfies b^2 >= r^2 * a^T M^-1 a. Writing rt = r^2, that implication is
certified by the homogeneous degree-2 identity

    b^2 - rt * a^T M^-1 a  =  y^T Q y  +  sum_i rho_i * g_i2(y)
                              +  sum_{i<=j} c_ij * g_i1(y) * g_j1(y),

with y = (a, b), Q PSD (the conditional-positivity Gram block), scalars
rho_i >= 0 on the squared-cone forms g_i2 = g_i1^2/mu^2 - (V_t1.a)^2 -
(V_t2.a)^2, and scalars c_ij >= 0 on products of the cone half-spaces
g_i1 = V_i_perp.a + b. Every term is nonnegative on K_W*, so the certified
rt is a true lower bound; maximizing rt is a single SDP in which rt enters
linearly. Coefficient matching determines Q affinely from (rt, rho, c), so
the SDP variables split into x1 = (rt), touching only the Gram block, and
the multipliers, each also owning a 1x1 positivity block.

Gradients: totally differentiating the KKT system (stationarity plus
per-block complementarity F^j Z^j = 0) and eliminating the components fixed
by strict complementarity -- via the simultaneous eigenbasis of each (F, Z)
pair -- leaves a reduced symmetric saddle system, factored once with the
pivoted LDL^T decomposition and back-solved per cone-data parameter.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .metric import ContactPoint, MetricParams, contact_weight
from .sdp import SdpProblem, SdpSolution, SdpSolverError, solve_sdp, svec

__all__ = [
    "ConeData",
    "SensitivityResult",
    "LowerBoundResult",
    "NonDifferentiableSolutionError",
    "tangent_frame",
    "build_cone_data",
    "build_lower_bound_sdp",
    "q1_lower",
    "q1_lower_full",
    "q1_lower_gradient",
    "sos_certificate_residual",
    "COMPLEMENTARITY_THRESHOLD",
]

COMPLEMENTARITY_THRESHOLD = 1e-8


class NonDifferentiableSolutionError(RuntimeError):
    """Strict complementarity fails: the bound is not differentiable here."""


@dataclass
class ConeData:
    """Weighted wrench-basis columns per contact (before the M^-1/2 scaling)."""

    V_perp: np.ndarray  # (N, 6)
    V_t1: np.ndarray
    V_t2: np.ndarray
    t1: np.ndarray      # (N, 3) tangent frames
    t2: np.ndarray
    axis_pick: np.ndarray  # (N,) which coordinate axis seeded the frame
    weights: np.ndarray


@dataclass
class SensitivityResult:
    value: float
    dV_perp: np.ndarray  # (N, 6) dQ1/dV
    dV_t1: np.ndarray
    dV_t2: np.ndarray
    dp: np.ndarray       # (N, 3) chained input gradients
    dd: np.ndarray       # (N,)
    dn: np.ndarray
    dng: np.ndarray
    dorigin: np.ndarray  # (3,) derivative w.r.t. the torque reference point
    margin: float


@dataclass
class LowerBoundResult:
    value: float
    rt: float
    problem: SdpProblem
    solution: SdpSolution
    cone: ConeData
    normal_only: bool


def tangent_frame(n):
    """Deterministic frame: axis of the smallest |n| component, crossed twice."""
    n = np.asarray(n, dtype=np.float64)
    k = int(np.argmin(np.abs(n)))
    e = np.zeros(3)
    e[k] = 1.0
    c = np.cross(n, e)
    t1 = c / np.linalg.norm(c)
    t2 = np.cross(n, t1)
    return t1, t2, k


def build_cone_data(contacts, params: MetricParams, torque_origin=None) -> ConeData:
    N = len(contacts)
    o = np.zeros(3) if torque_origin is None else np.asarray(torque_origin, dtype=np.float64)
    V_perp = np.zeros((N, 6))
    V_t1 = np.zeros((N, 6))
    V_t2 = np.zeros((N, 6))
    T1 = np.zeros((N, 3))
    T2 = np.zeros((N, 3))
    picks = np.zeros(N, dtype=np.int64)
    weights = np.zeros(N)
    for i, c in enumerate(contacts):
        w, _, _, _ = contact_weight(c.d, c.n, c.n_g, params.alpha, params.beta)
        t1, t2, k = tangent_frame(c.n)
        arm = c.p - o
        V_perp[i] = w * np.concatenate([c.n, np.cross(arm, c.n)])
        V_t1[i] = w * np.concatenate([t1, np.cross(arm, t1)])
        V_t2[i] = w * np.concatenate([t2, np.cross(arm, t2)])
        T1[i], T2[i], picks[i] = t1, t2, k
        weights[i] = w
    return ConeData(V_perp=V_perp, V_t1=V_t1, V_t2=V_t2, t1=T1, t2=T2,
                    axis_pick=picks, weights=weights)


def _sqrtM(params):
    s = np.sqrt(params.m)
    return np.array([1.0, 1.0, 1.0, s, s, s])


def build_lower_bound_sdp(contacts, params: MetricParams, cone: ConeData = None,
                          torque_origin=None) -> SdpProblem:
    """Assembles the certificate SDP (variables rt, rho_i, c_ij).

    Internally the wrench variable is rescaled by M^1/2 so the ball metric
    becomes the identity; the certified rt is unchanged and the scaling is
    undone when chaining gradients. With mu = 0 the quadratic cone
    degenerates to the half-space-only (normal-only) formulation and the
    rho blocks are dropped; the problem is flagged via meta['normal_only'].
    """
    if len(contacts) < 1:
        raise ValueError("need at least one contact")
    if cone is None:
        cone = build_cone_data(contacts, params, torque_origin=torque_origin)
    N = len(cone.weights)
    mu = params.mu
    normal_only = mu == 0.0
    sq = _sqrtM(params)
    g_hat = np.concatenate([cone.V_perp * sq, np.ones((N, 1))], axis=1)  # (N, 7)
    h1 = np.concatenate([cone.V_t1 * sq, np.zeros((N, 1))], axis=1)
    h2 = np.concatenate([cone.V_t2 * sq, np.zeros((N, 1))], axis=1)

    # diagonal products g_i1^2 are omitted: they are plain squares, absorbable
    # into the Gram block without changing the optimum, and keeping them as
    # variables makes the optimal certificate non-unique (which destroys the
    # differentiability the sensitivity analysis needs)
    nvars = 1 + (0 if normal_only else N) + N * (N - 1) // 2
    rho_index = {}
    c_index = {}
    blocks = [7]
    coeffs = []

    F_rt = np.zeros((7, 7))
    F_rt[:6, :6] = -np.eye(6)
    coeffs.append({0: F_rt})

    if not normal_only:
        for i in range(N):
            G2 = (np.outer(g_hat[i], g_hat[i]) / mu**2
                  - np.outer(h1[i], h1[i]) - np.outer(h2[i], h2[i]))
            rho_index[i] = len(coeffs)
            coeffs.append({0: -G2, len(blocks): np.array([[1.0]])})
            blocks.append(1)
    for i in range(N):
        for j in range(i + 1, N):
            Gij = 0.5 * (np.outer(g_hat[i], g_hat[j]) + np.outer(g_hat[j], g_hat[i]))
            c_index[(i, j)] = len(coeffs)
            coeffs.append({0: -Gij, len(blocks): np.array([[1.0]])})
            blocks.append(1)
    assert len(coeffs) == nvars

    F0 = [np.zeros((n, n)) for n in blocks]
    F0[0][6, 6] = 1.0  # the b^2 coefficient of the target polynomial

    c_obj = np.zeros(nvars)
    c_obj[0] = -1.0  # maximize rt
    return SdpProblem(
        c=c_obj, block_dims=blocks, F0=F0, coeffs=coeffs,
        meta={
            "normal_only": normal_only,
            "rho_index": rho_index,
            "c_index": c_index,
            "g_hat": g_hat,
            "h1": h1,
            "h2": h2,
            "mu": mu,
            "num_contacts": N,
        },
    )


def q1_lower_full(contacts, params: MetricParams, tol: float = 1e-9,
                  torque_origin=None) -> LowerBoundResult:
    cone = build_cone_data(contacts, params, torque_origin=torque_origin)
    problem = build_lower_bound_sdp(contacts, params, cone=cone)
    solution = solve_sdp(problem, tol=tol)
    rt = float(solution.x[0])
    value = float(np.sqrt(rt)) if rt > 0.0 else 0.0
    return LowerBoundResult(
        value=value, rt=rt, problem=problem, solution=solution, cone=cone,
        normal_only=problem.meta["normal_only"],
    )


def q1_lower(contacts, params: MetricParams, tol: float = 1e-9) -> float:
    """Certified lower bound of the generalized grasp quality (0 = no closure)."""
    return q1_lower_full(contacts, params, tol=tol).value


def sos_certificate_residual(result: LowerBoundResult, n_probe: int = 64,
                             seed: int = 0) -> float:
    """Max mismatch of the polynomial identity at the returned optimum.

    Checks  b^2 - rt |a|^2 - y'Qy - sum rho g2 - sum c g1 g1 = 0  both
    coefficient-wise (independent re-expansion) and at random probe points.
    """
    meta = result.problem.meta
    sol = result.solution
    Q = sol.S[0]
    rt = result.rt
    g_hat, h1, h2, mu = meta["g_hat"], meta["h1"], meta["h2"], meta["mu"]
    N = meta["num_contacts"]
    x = sol.x

    target = np.zeros((7, 7))
    target[:6, :6] = -rt * np.eye(6)
    target[6, 6] = 1.0
    recon = Q.copy()
    if not meta["normal_only"]:
        for i in range(N):
            G2 = (np.outer(g_hat[i], g_hat[i]) / mu**2
                  - np.outer(h1[i], h1[i]) - np.outer(h2[i], h2[i]))
            recon += x[meta["rho_index"][i]] * G2
    for (i, j), vi in meta["c_index"].items():
        recon += x[vi] * 0.5 * (np.outer(g_hat[i], g_hat[j]) + np.outer(g_hat[j], g_hat[i]))
    coeff_resid = float(np.abs(recon - target).max())

    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((n_probe, 7))
    lhs = Y[:, 6] ** 2 - rt * np.einsum("ij,ij->i", Y[:, :6], Y[:, :6])
    rhs = np.einsum("ij,jk,ik->i", Y, Q, Y)
    g1 = Y @ g_hat.T
    if not meta["normal_only"]:
        rho = np.array([x[meta["rho_index"][i]] for i in range(N)])
        g2 = (g1**2) / mu**2 - (Y @ h1.T) ** 2 - (Y @ h2.T) ** 2
        rhs += g2 @ rho
    for (i, j), vi in meta["c_index"].items():
        rhs += x[vi] * g1[:, i] * g1[:, j]
    probe_resid = float(np.abs(lhs - rhs).max() / max(1.0, np.abs(lhs).max()))
    return max(coeff_resid, probe_resid)


# --- sensitivity ------------------------------------------------------------

def _pair_basis(U, idx_a, idx_b=None):
    """svec'd orthonormal eigen-pair basis columns for the given index groups."""
    cols = []
    pairs = []
    if idx_b is None:
        for ai, k in enumerate(idx_a):
            for l in idx_a[ai:]:
                pairs.append((k, l))
    else:
        for k in idx_a:
            for l in idx_b:
                pairs.append((k, l))
    for k, l in pairs:
        u, v = U[:, k], U[:, l]
        if k == l:
            Bkl = np.outer(u, u)
        else:
            Bkl = (np.outer(u, v) + np.outer(v, u)) / np.sqrt(2.0)
        cols.append(svec(Bkl))
    if not cols:
        return np.zeros((U.shape[0] * (U.shape[0] + 1) // 2, 0)), pairs
    return np.stack(cols, axis=1), pairs


def _simultaneous_eigs(F, Z):
    """Common eigenbasis of a complementarity pair (F Z ~ 0).

    F and Z nearly commute, so the eigenvectors of F - Z diagonalize both;
    the groups are separated by the sign of the F - Z eigenvalue (collisions
    only happen when strict complementarity is about to fail).
    """
    lam, U = scipy.linalg.eigh(F - Z)
    lamF = np.einsum("ji,jk,ki->i", U, F, U)
    lamZ = np.einsum("ji,jk,ki->i", U, Z, U)
    return U, lamF, lamZ


def complementarity_margin(result: LowerBoundResult) -> float:
    """Smallest paired eigenvalue sum over all blocks."""
    sol = result.solution
    margin = np.inf
    U, lamF, lamZ = _simultaneous_eigs(sol.S[0], sol.Z[0])
    margin = min(margin, float((lamF + lamZ).min()))
    for j in range(1, len(sol.S)):
        margin = min(margin, float(sol.S[j][0, 0] + sol.Z[j][0, 0]))
    return margin


def _reduced_system(problem: SdpProblem, sol: SdpSolution):
    """Assembles the reduced symmetric sensitivity system.

    Unknowns: (dx, kernel components of dZ for the Gram block, dz of the
    active 1x1 multiplier blocks). Eliminating the mixed eigen-pair rows of
    the Gram complementarity equation leaves the symmetric saddle matrix
    that is factored with the pivoted LDL^T decomposition.
    """
    m = problem.num_vars
    F, Z = sol.S[0], sol.Z[0]
    U, lamF, lamZ = _simultaneous_eigs(F, Z)
    A_set = [k for k in range(7) if lamZ[k] > lamF[k]]  # kernel of F
    B_set = [k for k in range(7) if lamZ[k] <= lamF[k]]

    V1, _ = _pair_basis(U, A_set)
    V2, pairs2 = _pair_basis(U, A_set, B_set)
    d_F1 = np.array([(lamF[k] + lamF[l]) / 2.0 for k, l in pairs2])
    d_Z2 = np.array([(lamZ[k] + lamZ[l]) / 2.0 for k, l in pairs2])
    D2 = d_Z2 / d_F1 if len(pairs2) else d_Z2

    # Gram-block coefficient matrix (28 x m)
    A = np.zeros((28, m))
    for i, coeff in enumerate(problem.coeffs):
        if 0 in coeff:
            A[:, i] = svec(coeff[0])

    active = []
    for j in range(1, problem.num_blocks):
        # block j is owned by the variable whose coeff dict contains it
        owner = next(i for i, coeff in enumerate(problem.coeffs) if j in coeff)
        if sol.S[j][0, 0] < sol.Z[j][0, 0]:  # multiplier pinned at 0
            active.append(owner)
    E = np.zeros((m, len(active)))
    for col, i in enumerate(active):
        E[i, col] = 1.0

    n1 = V1.shape[1]
    na = len(active)
    dim = m + n1 + na
    K = np.zeros((dim, dim))
    AtV2 = A.T @ V2
    K[:m, :m] = -(AtV2 * D2) @ AtV2.T if len(pairs2) else 0.0
    K[:m, m:m + n1] = A.T @ V1
    K[m:m + n1, :m] = V1.T @ A
    K[:m, m + n1:] = E
    K[m + n1:, :m] = E.T

    # rank-revealing pivoted LDL^T: tiny pivot blocks of D are pseudo-inverted,
    # and each solve is validated against its residual
    lu, d, perm = scipy.linalg.ldl(K)
    L = lu[perm]
    d_pinv = np.linalg.pinv(0.5 * (d + d.T), rcond=1e-12)
    scale = max(1.0, float(np.abs(K).max()))

    def solve(rhs):
        y = scipy.linalg.solve_triangular(L, rhs[perm], lower=True)
        z = d_pinv @ y
        w = scipy.linalg.solve_triangular(L.T, z, lower=False)
        out = np.empty_like(rhs)
        out[perm] = w
        resid = float(np.abs(K @ out - rhs).max())
        if resid > 1e-6 * scale * max(1.0, float(np.abs(rhs).max())):
            raise NonDifferentiableSolutionError(
                f"sensitivity system inconsistent (residual {resid:.3e}); "
                "the optimum is degenerate here"
            )
        return out

    return {
        "K": K, "solve": solve, "A": A, "V1": V1, "V2": V2, "D2": D2,
        "m": m, "n1": n1, "na": na, "Z0": Z,
    }


def _chain_to_inputs(contacts, params, cone: ConeData, gperp, gt1, gt2):
    """Chains dQ1/dV (weighted columns) back to (p, d, n, n_g)."""
    N = len(contacts)
    dp = np.zeros((N, 3))
    dd = np.zeros(N)
    dn = np.zeros((N, 3))
    dng = np.zeros((N, 3))
    dorigin = np.zeros(3)
    alpha, beta = params.alpha, params.beta
    for i, c in enumerate(contacts):
        w = cone.weights[i]
        t1, t2 = cone.t1[i], cone.t2[i]
        dirs = (c.n, t1, t2)
        gs = (gperp[i], gt1[i], gt2[i])
        # base columns B_k = [dir; (p-o) x dir]; V_k = w * B_k
        sum_Vg = 0.0
        for d6, g in zip(
            (np.concatenate([c.n, np.cross(c.p, c.n)]),
             np.concatenate([t1, np.cross(c.p, t1)]),
             np.concatenate([t2, np.cross(c.p, t2)])),
            gs,
        ):
            sum_Vg += w * float(d6 @ g)
        for dvec, g in zip(dirs, gs):
            torque_pull = w * np.cross(dvec, g[3:])
            dp[i] += torque_pull
            dorigin -= torque_pull
        sgn = 0.0 if c.d == 0.0 else (1.0 if c.d > 0.0 else -1.0)
        dd[i] = -alpha * sgn * sum_Vg
        dng[i] = -beta * c.n * sum_Vg

        # weight path through n, plus the direct n and frame paths
        dn[i] += -beta * c.n_g * sum_Vg
        g = gperp[i]
        dn[i] += w * (g[:3] - np.cross(c.p, g[3:]))
        e = np.zeros(3)
        e[cone.axis_pick[i]] = 1.0
        cvec = np.cross(c.n, e)
        cnorm = np.linalg.norm(cvec)
        P1 = (np.eye(3) - np.outer(t1, t1)) / cnorm
        dt1_dn = -P1 @ _skew(e)
        dt2_dn = -_skew(t1) + _skew(c.n) @ dt1_dn
        for tk, dtk_dn, g in ((t1, dt1_dn, gt1[i]), (t2, dt2_dn, gt2[i])):
            eff = w * (g[:3] - np.cross(c.p, g[3:]))
            dn[i] += dtk_dn.T @ eff
    return dp, dd, dn, dng, dorigin


def _skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def q1_lower_gradient(contacts, params: MetricParams,
                      result: LowerBoundResult = None,
                      tol: float = 1e-9) -> SensitivityResult:
    """dQ1/d(cone data) via the reduced sensitivity equation, chained to the
    contact inputs. Requires strict complementarity margin above threshold.
    """
    if result is None:
        result = q1_lower_full(contacts, params, tol=tol)
    margin = complementarity_margin(result)
    if margin <= COMPLEMENTARITY_THRESHOLD:
        raise NonDifferentiableSolutionError(
            f"complementarity margin {margin:.3e} below threshold; "
            "the lower bound is not differentiable here (fall back to the "
            "upper-bound gradient)"
        )
    N = len(contacts)
    if result.rt <= 0.0:
        zeros6 = np.zeros((N, 6))
        return SensitivityResult(
            value=0.0, dV_perp=zeros6, dV_t1=zeros6.copy(), dV_t2=zeros6.copy(),
            dp=np.zeros((N, 3)), dd=np.zeros(N), dn=np.zeros((N, 3)),
            dng=np.zeros((N, 3)), dorigin=np.zeros(3), margin=margin,
        )

    problem, sol = result.problem, result.solution
    meta = problem.meta
    red = _reduced_system(problem, sol)
    A, V1, V2, D2 = red["A"], red["V1"], red["V2"], red["D2"]
    m, n1, na = red["m"], red["n1"], red["na"]
    Z0 = red["Z0"]
    x = sol.x
    g_hat, h1, h2, mu = meta["g_hat"], meta["h1"], meta["h2"], meta["mu"]
    normal_only = meta["normal_only"]

    e7 = np.eye(7)

    def rhs_for(dF_per_var):
        """dF_per_var: {var_index: dF^1/d eps}; returns the stacked RHS."""
        r_eps = np.zeros((7, 7))
        b1 = np.zeros(m)
        for vi, dF in dF_per_var.items():
            r_eps += x[vi] * dF
            b1[vi] = float(np.tensordot(dF, Z0))
        sv = svec(r_eps)
        top = (A.T @ V2) @ (D2 * (V2.T @ sv)) - b1 if V2.shape[1] else -b1
        mid = -(V1.T @ sv)
        return np.concatenate([top, mid, np.zeros(na)])

    def dvar_matrices(i, t, which):
        """d(F-matrices)/d(eps) for component t of contact i's scaled column."""
        out = {}
        et = e7[t]
        if which == 0:  # g_hat component
            if not normal_only:
                dG2 = (np.outer(et, g_hat[i]) + np.outer(g_hat[i], et)) / mu**2
                out[meta["rho_index"][i]] = -dG2
            for j in range(N):
                if j == i:
                    continue
                vi = meta["c_index"][(min(i, j), max(i, j))]
                dG = 0.5 * (np.outer(et, g_hat[j]) + np.outer(g_hat[j], et))
                out[vi] = out.get(vi, 0.0) + (-dG)
        else:
            if normal_only:
                return out
            hk = h1 if which == 1 else h2
            dG2 = -(np.outer(et, hk[i]) + np.outer(hk[i], et))
            out[meta["rho_index"][i]] = -dG2
        return out

    sq = _sqrtM(params)
    drt_dVp = np.zeros((N, 6))
    drt_dVt1 = np.zeros((N, 6))
    drt_dVt2 = np.zeros((N, 6))
    for i in range(N):
        for t in range(6):
            for which, store in ((0, drt_dVp), (1, drt_dVt1), (2, drt_dVt2)):
                sel = dvar_matrices(i, t, which)
                if not sel:
                    continue
                du = red["solve"](rhs_for(sel))
                # scaled column: V~ = sqrtM * V, so d/dV = sqrtM[t] * d/dV~
                store[i, t] = du[0] * sq[t]

    r = result.value
    scale = 1.0 / (2.0 * r)
    gperp = drt_dVp * scale
    gt1 = drt_dVt1 * scale
    gt2 = drt_dVt2 * scale
    dp, dd, dn, dng, dorigin = _chain_to_inputs(contacts, params, result.cone, gperp, gt1, gt2)
    return SensitivityResult(
        value=r, dV_perp=gperp, dV_t1=gt1, dV_t2=gt2,
        dp=dp, dd=dd, dn=dn, dng=dng, dorigin=dorigin, margin=margin,
    )
