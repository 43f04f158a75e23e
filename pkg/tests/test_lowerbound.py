import numpy as np
import pytest

from diffgrasp.lowerbound import (NonDifferentiableSolutionError, build_cone_data,
                                  build_lower_bound_sdp, complementarity_margin,
                                  q1_lower, q1_lower_full, q1_lower_gradient,
                                  sos_certificate_residual, tangent_frame)
from diffgrasp.metric import (ContactPoint, MetricParams, make_directions,
                              q1_dense_oracle, q1_upper)

from conftest import rel_err


def sphere6_contacts(scale=1.0, d=0.0):
    P = [np.array(v, float) for v in
         [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]]
    return [ContactPoint.make(p * scale, d, p, -p) for p in P]


def random_contacts(rng, n, dmax=0.05):
    p = rng.standard_normal((n, 3))
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    return [ContactPoint.make(p[i], float(rng.uniform(0, dmax)), p[i], -p[i])
            for i in range(n)]


def perturbed_sphere6(d=0.02):
    """The exactly symmetric grasp sits on a degenerate face of the SDP; a
    tiny symmetry break restores a differentiable optimum. Contacts sit a
    little off the surface so |d| is differentiable too."""
    contacts = sphere6_contacts(d=d)
    bump = np.array([0.0017, -0.0011, 0.0013])
    return [ContactPoint.make(c.p + (bump if i == 0 else 0.0), c.d, c.n, c.n_g)
            for i, c in enumerate(contacts)]


def test_block_structure_single_contact():
    params = MetricParams(m=1.0)
    problem = build_lower_bound_sdp([sphere6_contacts()[0]], params)
    # Gram block + quadratic-cone multiplier; pairwise product blocks start at N = 2
    assert problem.block_dims == [7, 1]
    assert problem.num_vars == 2


def test_block_structure_scaling():
    params = MetricParams(m=1.0)
    for n in (2, 4, 6):
        problem = build_lower_bound_sdp(sphere6_contacts()[:n], params)
        expected = 1 + n + n * (n - 1) // 2
        assert problem.num_blocks == expected
        assert problem.block_dims[0] == 7
        assert all(d == 1 for d in problem.block_dims[1:])


def test_variable_partition_structure():
    """rt touches only the Gram block; each multiplier owns one identity block."""
    params = MetricParams(m=1.0)
    problem = build_lower_bound_sdp(sphere6_contacts()[:3], params)
    assert set(problem.coeffs[0].keys()) == {0}
    for i, coeff in enumerate(problem.coeffs[1:], start=1):
        own = [j for j in coeff if j != 0]
        assert len(own) == 1
        assert np.array_equal(coeff[own[0]], np.array([[1.0]]))


def test_sphere_value_in_dense_bracket():
    params = MetricParams(m=1.0)
    contacts = sphere6_contacts()
    res = q1_lower_full(contacts, params)
    dense = q1_dense_oracle(contacts, params, 100_000, 0)
    assert 0.0 < res.value <= dense + 1e-6
    assert res.solution.gap <= 1e-8
    assert sos_certificate_residual(res) < 1e-7


def test_single_contact_no_closure():
    params = MetricParams(m=1.0)
    assert q1_lower([sphere6_contacts()[0]], params) == 0.0


def test_weights_halve_value_halves():
    params = MetricParams(m=1.0)
    # d chosen so exp(-alpha d) = 1/2
    d_half = float(np.log(2.0) / params.alpha)
    v1 = q1_lower(sphere6_contacts(d=0.0), params)
    v2 = q1_lower(sphere6_contacts(d=d_half), params)
    assert v2 / v1 == pytest.approx(0.5, abs=1e-5)


def test_sandwich_random_sets():
    params = MetricParams()  # table defaults, m = 0.001
    rng = np.random.default_rng(123)
    dirs = make_directions(64, 0)
    for _ in range(10):
        contacts = random_contacts(rng, int(rng.integers(2, 9)))
        lower = q1_lower(contacts, params)
        dense = q1_dense_oracle(contacts, params, 100_000, 0)
        upper = q1_upper(contacts, dirs, params).value
        assert lower - 1e-6 <= dense <= upper + 1e-9


def test_antipodal_pair_three_way():
    """True quality of an exactly antipodal pair is 0 (no torque resistance
    about the contact axis); recorded three-way values keep the sandwich."""
    params = MetricParams(m=1.0)
    contacts = sphere6_contacts()[:2]
    lower = q1_lower(contacts, params)
    dense = q1_dense_oracle(contacts, params, 100_000, 0)
    upper = q1_upper(contacts, make_directions(64, 0), params).value
    assert lower - 1e-6 <= dense <= upper + 1e-9
    assert lower <= 1e-4  # certifies (near) zero
    assert dense < 0.2  # finite-direction artifact, decaying with D


def test_mu_zero_normal_only_flagged():
    params = MetricParams(mu=0.0, m=1.0)
    problem = build_lower_bound_sdp(sphere6_contacts(), params)
    assert problem.meta["normal_only"]
    # radial frictionless contacts produce no torque: no closure
    assert q1_lower(sphere6_contacts(), params) == 0.0


def test_tangent_frame_orthonormal():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = rng.standard_normal(3)
        n /= np.linalg.norm(n)
        t1, t2, _ = tangent_frame(n)
        for a, b in ((t1, t1), (t2, t2)):
            assert a @ b == pytest.approx(1.0, abs=1e-12)
        assert abs(t1 @ t2) < 1e-12
        assert abs(t1 @ n) < 1e-12
        assert abs(t2 @ n) < 1e-12


def test_frame_invariance_of_value():
    """Rotating the tangent frame must not move the certified value."""
    params = MetricParams(m=1.0)
    contacts = perturbed_sphere6()
    base = q1_lower_full(contacts, params)
    cone = build_cone_data(contacts, params)
    theta = 0.7
    R2 = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    t1 = R2[0, 0] * cone.V_t1 + R2[0, 1] * cone.V_t2
    t2 = R2[1, 0] * cone.V_t1 + R2[1, 1] * cone.V_t2
    cone.V_t1, cone.V_t2 = t1, t2
    from diffgrasp.sdp import solve_sdp

    problem = build_lower_bound_sdp(contacts, params, cone=cone)
    sol = solve_sdp(problem, tol=1e-9)
    assert float(sol.x[0]) == pytest.approx(base.rt, abs=1e-7)


def test_dual_cone_lemma_sampling():
    """Pairings of admissible wrench-cone points with dual-cone points are
    nonnegative; violating (a, b) admits the constructed negative witness."""
    params = MetricParams(m=1.0)
    rng = np.random.default_rng(3)
    contacts = random_contacts(rng, 4)
    cone = build_cone_data(contacts, params)
    N = len(contacts)
    mu = params.mu

    # sample K_W: lambda_i >= 0, |(alpha, beta)| <= mu * lambda_i
    count = 10_000
    lam = rng.uniform(0, 1, (count, N))
    ang = rng.uniform(0, 2 * np.pi, (count, N))
    rad = np.sqrt(rng.uniform(0, 1, (count, N))) * mu * lam
    V = (lam @ cone.V_perp
         + (rad * np.cos(ang)) @ cone.V_t1
         + (rad * np.sin(ang)) @ cone.V_t2)
    t = lam.sum(axis=1)

    # sample K_W*: a free, b at least the cone requirement
    a = rng.standard_normal((count, 6))
    req = mu * np.sqrt((a @ cone.V_t1.T) ** 2 + (a @ cone.V_t2.T) ** 2) - a @ cone.V_perp.T
    b = req.max(axis=1) + rng.uniform(0, 1, count)
    pairings = np.einsum("ij,ij->i", V, a) + t * b
    assert pairings.min() >= -1e-10

    # violating pairs: pick b strictly below the requirement of some contact
    violated = 0
    for k in range(200):
        av = rng.standard_normal(6)
        reqs = [mu * np.hypot(av @ cone.V_t1[i], av @ cone.V_t2[i]) - av @ cone.V_perp[i]
                for i in range(N)]
        i = int(np.argmax(reqs))
        bv = reqs[i] - abs(rng.uniform(0.05, 0.5))
        tang = np.hypot(av @ cone.V_t1[i], av @ cone.V_t2[i])
        if tang < 1e-12:
            continue
        # lemma witness: full normal force, friction opposing the tangential pull
        alpha = -mu * (av @ cone.V_t1[i]) / tang
        beta = -mu * (av @ cone.V_t2[i]) / tang
        Vw = cone.V_perp[i] + alpha * cone.V_t1[i] + beta * cone.V_t2[i]
        assert Vw @ av + 1.0 * bv < 0.0
        violated += 1
    assert violated > 100


def test_gradient_matches_fd_random_sets():
    params = MetricParams(m=1.0)
    rng = np.random.default_rng(7)
    checked = 0
    h = 3e-4
    while checked < 4:
        contacts = random_contacts(rng, int(rng.integers(3, 7)))
        res = q1_lower_full(contacts, params, tol=1e-11)
        if res.value <= 0.05 or complementarity_margin(res) < 1e-6:
            continue
        try:
            g = q1_lower_gradient(contacts, params, res)
        except NonDifferentiableSolutionError:
            continue
        gscale = max(np.abs(g.dp).max(), 1e-3)
        for i in range(min(3, len(contacts))):
            for k in range(3):
                dp = np.zeros(3)
                dp[k] = h
                cp = [ContactPoint.make(c.p + (dp if j == i else 0), c.d, c.n, c.n_g)
                      for j, c in enumerate(contacts)]
                cm = [ContactPoint.make(c.p - (dp if j == i else 0), c.d, c.n, c.n_g)
                      for j, c in enumerate(contacts)]
                fd = (q1_lower_full(cp, params, tol=1e-10).value
                      - q1_lower_full(cm, params, tol=1e-10).value) / (2 * h)
                assert abs(fd - g.dp[i][k]) < 1e-3 * max(abs(fd), abs(g.dp[i][k]), gscale)
        checked += 1


def test_gradient_signs_and_families():
    params = MetricParams(m=1.0)
    contacts = perturbed_sphere6()
    res = q1_lower_full(contacts, params, tol=1e-10)
    g = q1_lower_gradient(contacts, params, res)

    # d_i increases -> weight drops -> value drops
    assert np.all(g.dd < 0.0)

    # radial inflation with weights fixed grows the torque arms: the realized
    # derivative is positive, confirmed by the FD oracle
    dinfl = sum(float(g.dp[i] @ contacts[i].p) for i in range(len(contacts)))
    h = 1e-4
    cp = [ContactPoint.make(c.p * (1 + h), c.d, c.n, c.n_g) for c in contacts]
    cm = [ContactPoint.make(c.p * (1 - h), c.d, c.n, c.n_g) for c in contacts]
    fd = (q1_lower_full(cp, params, tol=1e-10).value
          - q1_lower_full(cm, params, tol=1e-10).value) / (2 * h)
    assert rel_err(dinfl, fd) < 1e-3
    assert dinfl > 0.0 and fd > 0.0

    # translating contacts and the torque origin together changes nothing
    delta = np.array([0.3, -0.2, 0.1])
    analytic = sum(float(g.dp[i] @ delta) for i in range(len(contacts)))
    analytic += float(g.dorigin @ delta)
    assert abs(analytic) < 1e-6
    cp = [ContactPoint.make(c.p + h * delta, c.d, c.n, c.n_g) for c in contacts]
    cm = [ContactPoint.make(c.p - h * delta, c.d, c.n, c.n_g) for c in contacts]
    vp = q1_lower_full(cp, params, tol=1e-10, torque_origin=h * delta).value
    vm = q1_lower_full(cm, params, tol=1e-10, torque_origin=-h * delta).value
    assert abs((vp - vm) / (2 * h)) < 1e-6


def test_symmetric_sphere_signals_degeneracy():
    """The perfectly symmetric grasp has a zero Gram optimum (rank-deficient
    coefficient span); the sensitivity path must refuse, not fabricate."""
    params = MetricParams(m=1.0)
    contacts = sphere6_contacts()
    res = q1_lower_full(contacts, params)
    with pytest.raises(NonDifferentiableSolutionError):
        q1_lower_gradient(contacts, params, res)


def test_reduced_system_symmetric():
    from diffgrasp.lowerbound import _reduced_system

    params = MetricParams(m=1.0)
    contacts = perturbed_sphere6()
    res = q1_lower_full(contacts, params, tol=1e-10)
    red = _reduced_system(res.problem, res.solution)
    K = red["K"]
    assert np.linalg.norm(K - K.T) < 1e-10 * max(1.0, np.linalg.norm(K))


def test_solver_health_on_lower_bound_problems():
    params = MetricParams()
    rng = np.random.default_rng(17)
    for _ in range(5):
        contacts = random_contacts(rng, int(rng.integers(2, 7)))
        res = q1_lower_full(contacts, params, tol=1e-8)
        sol = res.solution
        assert sol.gap <= 1e-8
        for j in range(len(sol.S)):
            assert np.linalg.norm(sol.S[j] @ sol.Z[j]) <= 1e-7
        assert sos_certificate_residual(res) < 1e-7
