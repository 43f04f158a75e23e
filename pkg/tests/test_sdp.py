import numpy as np
import pytest

from diffgrasp.sdp import SdpProblem, SdpSolverError, smat, solve_sdp, svec


def test_svec_inner_product():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((5, 5))
    A = A + A.T
    B = rng.standard_normal((5, 5))
    B = B + B.T
    assert svec(A) @ svec(B) == pytest.approx(np.tensordot(A, B), rel=1e-12)
    assert np.allclose(smat(svec(A), 5), A)


def test_trivial_scalar_bound():
    # min x  s.t.  x - 1 >= 0
    problem = SdpProblem(
        c=np.array([1.0]), block_dims=[1],
        F0=[np.array([[-1.0]])], coeffs=[{0: np.array([[1.0]])}],
    )
    sol = solve_sdp(problem, tol=1e-9)
    assert sol.x[0] == pytest.approx(1.0, abs=1e-7)
    assert sol.gap <= 1e-8


def test_hand_derived_two_by_two():
    """min x1 + x2  s.t.  [[x1, 1], [1, x2]] PSD.

    Derivation: PSD forces x1, x2 >= 0 and x1 x2 >= 1, so by AM-GM
    x1 + x2 >= 2 sqrt(x1 x2) >= 2 with equality at x1 = x2 = 1. The dual
    certificate Z = [[1, -1], [-1, 1]] is PSD, satisfies <F_i, Z> = c_i, and
    S Z = 0 at S = [[1, 1], [1, 1]], so the optimum is exactly 2.
    """
    problem = SdpProblem(
        c=np.array([1.0, 1.0]), block_dims=[2],
        F0=[np.array([[0.0, 1.0], [1.0, 0.0]])],
        coeffs=[{0: np.diag([1.0, 0.0])}, {0: np.diag([0.0, 1.0])}],
    )
    sol = solve_sdp(problem, tol=1e-10)
    assert sol.objective == pytest.approx(2.0, abs=1e-8)
    assert np.allclose(sol.x, [1.0, 1.0], atol=1e-7)
    assert np.allclose(sol.Z[0], [[1.0, -1.0], [-1.0, 1.0]], atol=1e-6)


def test_solution_invariants():
    # O(1)-scaled data: the complementarity floor scales with the block norms
    rng = np.random.default_rng(4)
    n, m = 5, 4
    Fi = []
    for _ in range(m):
        A = rng.standard_normal((n, n))
        Fi.append((A + A.T) / 8)
    X0 = rng.standard_normal((n, n)) / 4
    X0 = X0 @ X0.T + np.eye(n) / 4
    blocks = [n] + [1] * (2 * m)
    F0 = [X0] + [np.array([[4.0]])] * (2 * m)
    coeffs = []
    for i in range(m):
        coeffs.append({0: Fi[i], 1 + 2 * i: np.array([[1.0]]),
                       2 + 2 * i: np.array([[-1.0]])})
    problem = SdpProblem(c=rng.standard_normal(m), block_dims=blocks, F0=F0, coeffs=coeffs)
    sol = solve_sdp(problem, tol=1e-9)
    tol = 1e-7
    for j, dim in enumerate(blocks):
        eig_S = np.linalg.eigvalsh(sol.S[j])
        eig_Z = np.linalg.eigvalsh(sol.Z[j])
        assert eig_S.min() >= -tol
        assert eig_Z.min() >= -tol
        # generic dense instance: the product-norm floor tracks the block
        # norms; the grasp lower-bound problems are held to 1e-7 elsewhere
        assert np.linalg.norm(sol.S[j] @ sol.Z[j]) <= 2e-6
    assert sol.gap <= 1e-8
    assert sol.primal_residual <= 1e-7


def test_unbounded_problem_raises():
    # min -x with x only pushed up: F(x) = x >= 0 allows x -> inf
    problem = SdpProblem(
        c=np.array([-1.0]), block_dims=[1],
        F0=[np.array([[0.0]])], coeffs=[{0: np.array([[1.0]])}],
    )
    with pytest.raises(SdpSolverError):
        solve_sdp(problem, tol=1e-9, max_iter=60)


def test_infeasible_problem_raises():
    # x >= 1 and -x >= 1 cannot both hold
    problem = SdpProblem(
        c=np.array([1.0]), block_dims=[1, 1],
        F0=[np.array([[-1.0]]), np.array([[-1.0]])],
        coeffs=[{0: np.array([[1.0]]), 1: np.array([[-1.0]])}],
    )
    with pytest.raises(SdpSolverError):
        solve_sdp(problem, tol=1e-9, max_iter=60)
