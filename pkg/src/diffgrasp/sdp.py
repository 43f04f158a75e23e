"""Primal-dual interior-point solver for small block-diagonal SDPs.

Problem form:  min c^T x  s.t.  F^j(x) = F_0^j + sum_i x_i F_i^j  PSD,
one constraint per block j. Infeasible-start path following with
Nesterov-Todd scaling and a Mehrotra-style adaptive centering parameter.
Built for the grasp lower-bound programs (blocks of size <= ~8, up to a few
hundred variables); robustness at tight tolerances matters, large-scale
performance does not.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, eigh

__all__ = ["SdpProblem", "SdpSolution", "SdpSolverError", "solve_sdp", "svec", "smat"]

_SQRT2 = np.sqrt(2.0)


class SdpSolverError(RuntimeError):
    def __init__(self, message, status="failed"):
        super().__init__(message)
        self.status = status


@dataclass
class SdpProblem:
    """c, F_0 per block, and per-variable sparse block coefficients.

    coeffs[i] maps block index -> symmetric matrix F_i^j (blocks the variable
    does not touch are omitted).
    """

    c: np.ndarray
    block_dims: list
    F0: list
    coeffs: list
    meta: dict = field(default_factory=dict)

    @property
    def num_vars(self):
        return len(self.c)

    @property
    def num_blocks(self):
        return len(self.block_dims)

    def eval_blocks(self, x):
        S = [f.copy() for f in self.F0]
        for i, coeff in enumerate(self.coeffs):
            for j, F in coeff.items():
                S[j] = S[j] + x[i] * F
        return S


@dataclass
class SdpSolution:
    x: np.ndarray
    S: list  # F^j(x)
    Z: list  # dual blocks
    objective: float
    gap: float
    primal_residual: float
    dual_residual: float
    complementarity: float  # max_j ||F^j Z^j||_F
    iterations: int
    status: str
    eig_S: list = None  # per-block eigendecompositions, filled on demand
    eig_Z: list = None

    def block_eigs(self):
        if self.eig_S is None:
            self.eig_S = [np.linalg.eigvalsh(s) for s in self.S]
            self.eig_Z = [np.linalg.eigvalsh(z) for z in self.Z]
        return self.eig_S, self.eig_Z


def svec(A):
    """Scaled upper-triangle vectorization: <A, B> = svec(A) . svec(B)."""
    n = A.shape[0]
    out = np.empty(n * (n + 1) // 2)
    k = 0
    for i in range(n):
        out[k] = A[i, i]
        k += 1
        for j in range(i + 1, n):
            out[k] = _SQRT2 * A[i, j]
            k += 1
    return out


def smat(v, n):
    A = np.zeros((n, n))
    k = 0
    for i in range(n):
        A[i, i] = v[k]
        k += 1
        for j in range(i + 1, n):
            A[i, j] = A[j, i] = v[k] / _SQRT2
            k += 1
    return A


def _data_scale(problem):
    s = max(1.0, float(np.abs(problem.c).max(initial=0.0)))
    for f in problem.F0:
        s = max(s, float(np.abs(f).max(initial=0.0)))
    for coeff in problem.coeffs:
        for F in coeff.values():
            s = max(s, float(np.abs(F).max(initial=0.0)))
    return s


def _adjoint(problem, mats):
    out = np.zeros(problem.num_vars)
    for i, coeff in enumerate(problem.coeffs):
        acc = 0.0
        for j, F in coeff.items():
            acc += float(np.tensordot(F, mats[j]))
        out[i] = acc
    return out


def _apply(problem, dx):
    out = [np.zeros((n, n)) for n in problem.block_dims]
    for i, coeff in enumerate(problem.coeffs):
        if dx[i] == 0.0:
            continue
        for j, F in coeff.items():
            out[j] += dx[i] * F
    return out


def _max_step(X_chol, dX):
    """sup alpha with X + alpha dX PSD, given the Cholesky factor of X."""
    L = X_chol
    Y = np.linalg.solve(L, np.linalg.solve(L, dX).T)
    lam = np.linalg.eigvalsh(0.5 * (Y + Y.T)).min()
    if lam >= 0.0:
        return np.inf
    return -1.0 / lam


def solve_sdp(problem: SdpProblem, tol: float = 1e-9, max_iter: int = 200,
              feas_tol: float = None, comp_tol: float = None) -> SdpSolution:
    """Path-following solve to duality gap <= tol (absolute, data scaled to O(1)).

    Convergence also requires max_j ||S^j Z^j||_F <= comp_tol: the trace gap
    alone can hide large non-normal products on an uncentered iterate, and
    downstream sensitivity analysis needs genuinely complementary blocks.

    Raises SdpSolverError when the iteration stalls, diverges (a certificate
    of an infeasible or unbounded problem at these scales), or hits the
    iteration cap before reaching the tolerances.
    """
    if feas_tol is None:
        # Schur-complement conditioning puts a ~1e-8 noise floor on the dual
        # residual regardless of how far the gap is pushed
        feas_tol = max(tol * 10.0, 5e-9)
    if comp_tol is None:
        comp_tol = max(tol * 10.0, 1e-8)
    m = problem.num_vars
    dims = problem.block_dims
    ntot = sum(dims)
    scale = _data_scale(problem)

    x = np.zeros(m)
    S = [np.eye(n) * scale for n in dims]
    Z = [np.eye(n) * scale for n in dims]

    status = "max_iterations"
    it = 0
    for it in range(1, max_iter + 1):
        Fx = problem.eval_blocks(x)
        rp = [Fx[j] - S[j] for j in range(len(dims))]
        rd = problem.c - _adjoint(problem, Z)
        gap = sum(float(np.tensordot(S[j], Z[j])) for j in range(len(dims)))
        mu = gap / ntot
        rp_norm = max((float(np.abs(r).max(initial=0.0)) for r in rp), default=0.0)
        rd_norm = float(np.abs(rd).max(initial=0.0))

        if gap <= tol and rp_norm <= feas_tol and rd_norm <= feas_tol:
            comp = max(
                (float(np.linalg.norm(S[j] @ Z[j])) for j in range(len(dims))),
                default=0.0,
            )
            if comp <= comp_tol:
                status = "optimal"
                break
        if not np.isfinite(gap) or gap > 1e16 * scale:
            raise SdpSolverError("iterates diverged (problem infeasible or unbounded?)",
                                 status="diverged")

        # NT scaling per block
        Winv = []
        Ls_list = []
        Lz_list = []
        ok = True
        for j, n in enumerate(dims):
            try:
                Ls = cholesky(S[j], lower=True)
                Lz = cholesky(Z[j], lower=True)
            except np.linalg.LinAlgError:
                ok = False
                break
            G = Ls.T @ Z[j] @ Ls
            lam, U = eigh(0.5 * (G + G.T))
            lam = np.maximum(lam, 1e-300)
            # W^-1 = Ls^-T U diag(lam^1/2) U^T Ls^-1
            LsinvT = np.linalg.solve(Ls.T, U)  # Ls^-T U
            Winv_j = (LsinvT * np.sqrt(lam)) @ LsinvT.T
            Winv.append(0.5 * (Winv_j + Winv_j.T))
            Ls_list.append(Ls)
            Lz_list.append(Lz)
        if not ok:
            status = "numerical_limit"
            break

        # Schur complement B_ik = sum_j <F_i, W^-1 F_k W^-1>
        svecF = {}
        svecT = {}
        for i, coeff in enumerate(problem.coeffs):
            for j, F in coeff.items():
                svecF.setdefault(j, {})[i] = F
        B = np.zeros((m, m))
        for j, entries in svecF.items():
            idx = sorted(entries)
            Fs = np.stack([svec(entries[i]) for i in idx])
            Ts = np.stack([svec(Winv[j] @ entries[i] @ Winv[j]) for i in idx])
            Bj = Fs @ Ts.T
            B[np.ix_(idx, idx)] += 0.5 * (Bj + Bj.T)

        try:
            Bf = cho_factor(B + np.eye(m) * (1e-14 * max(1.0, np.abs(B).max())))
        except np.linalg.LinAlgError:
            status = "numerical_limit"
            break

        Sinv = [cho_solve((Ls_list[j], True), np.eye(dims[j])) for j in range(len(dims))]
        AstarSinv = _adjoint(problem, Sinv)
        WrpW = [Winv[j] @ rp[j] @ Winv[j] for j in range(len(dims))]
        AstarWrpW = _adjoint(problem, WrpW)

        def directions(nu):
            rhs = nu * AstarSinv - problem.c - AstarWrpW
            dx = cho_solve(Bf, rhs)
            Adx = _apply(problem, dx)
            dZ = []
            dS = []
            for j in range(len(dims)):
                dz = nu * Sinv[j] - Z[j] - Winv[j] @ (rp[j] + Adx[j]) @ Winv[j]
                dZ.append(0.5 * (dz + dz.T))
                dS.append(Adx[j] + rp[j])
            return dx, dS, dZ

        # predictor
        dx_a, dS_a, dZ_a = directions(0.0)
        ap = min((_max_step(Ls_list[j], dS_a[j]) for j in range(len(dims))), default=np.inf)
        ad = min((_max_step(Lz_list[j], dZ_a[j]) for j in range(len(dims))), default=np.inf)
        ap = min(1.0, 0.99 * ap)
        ad = min(1.0, 0.99 * ad)
        gap_aff = sum(
            float(np.tensordot(S[j] + ap * dS_a[j], Z[j] + ad * dZ_a[j]))
            for j in range(len(dims))
        )
        sigma = min(0.99, max(1e-8, (max(gap_aff, 0.0) / gap) ** 3))

        # corrector (centering)
        dx, dS, dZ = directions(sigma * mu)
        ap = min((_max_step(Ls_list[j], dS[j]) for j in range(len(dims))), default=np.inf)
        ad = min((_max_step(Lz_list[j], dZ[j]) for j in range(len(dims))), default=np.inf)
        ap = min(1.0, 0.99 * ap)
        ad = min(1.0, 0.99 * ad)

        x = x + ap * dx
        for j in range(len(dims)):
            S[j] = S[j] + ap * dS[j]
            Z[j] = Z[j] + ad * dZ[j]

    Fx = problem.eval_blocks(x)
    rp_norm = max(
        (float(np.abs(Fx[j] - S[j]).max(initial=0.0)) for j in range(len(dims))),
        default=0.0,
    )
    rd_norm = float(np.abs(problem.c - _adjoint(problem, Z)).max(initial=0.0))
    gap = sum(float(np.tensordot(S[j], Z[j])) for j in range(len(dims)))
    comp = max(
        (float(np.linalg.norm(Fx[j] @ Z[j])) for j in range(len(dims))), default=0.0
    )
    sol = SdpSolution(
        x=x,
        S=Fx,
        Z=Z,
        objective=float(problem.c @ x),
        gap=gap,
        primal_residual=rp_norm,
        dual_residual=rd_norm,
        complementarity=comp,
        iterations=it,
        status=status,
    )
    if status not in ("optimal",):
        if gap <= tol and rp_norm <= feas_tol and rd_norm <= feas_tol and comp <= comp_tol:
            sol.status = "optimal"  # tolerances reached right at the exit point
            return sol
        if gap <= tol * 100 and rp_norm <= feas_tol * 100 and rd_norm <= feas_tol * 100:
            sol.status = "near_optimal"
            return sol
        raise SdpSolverError(
            f"no convergence: status={status} gap={gap:.3e} rp={rp_norm:.3e} rd={rd_norm:.3e}",
            status=status,
        )
    return sol
