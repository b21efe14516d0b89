import numpy as np
import pytest

from qmc_feedback.errors import SolverError
from qmc_feedback.riccati import (
    OffsetTrajectory,
    RiccatiTrajectory,
    TimeGrid,
    feedback_from,
    optimal_cost_homogeneous,
    optimal_cost_nonhomogeneous,
    solve_offset,
    solve_offset_batch,
    solve_riccati,
    solve_riccati_batch,
    solve_riccati_dense,
)
from qmc_feedback.spatial_model import (
    DiffusionField,
    ProblemData,
    SpatialGrid,
    adjoint_control,
    assemble_family,
    evaluate_operator,
    evaluate_operators,
)

# pi(1) for pidot = -2 pi - 0.5 pi^2 + 1, pi(0) = 0: frozen from an adaptive
# DOP853 integration at rtol 1e-12 and the tanh-type closed form (agree to 3e-14)
SCALAR_PI_AT_ONE = 0.40713092015815


def family(n=16, smax=8, cbar=0.5, q_obs=1.0, p_ter=0.1):
    grid = SpatialGrid(n)
    fld = DiffusionField(a0=1.0, cbar=cbar, qdec=2.0, smax=smax)
    return assemble_family(grid, fld, [(0.2, 0.4), (0.6, 0.8)], q_obs, p_ter)


def zero_data(n, T=1.0):
    z = np.zeros(n)
    return ProblemData(T=T, f=lambda t: z, g=lambda t: z, gdot=lambda t: z, gT=z, y0=z)


# ----------------------------------------------------------------------------
# TimeGrid
# ----------------------------------------------------------------------------

def test_time_grid():
    g = TimeGrid(nt=8, T=2.0)
    assert g.dt == pytest.approx(0.25)
    assert g.nodes[-1] == pytest.approx(2.0)
    with pytest.raises(ValueError):
        TimeGrid(nt=1, T=1.0)


# ----------------------------------------------------------------------------
# DRE solves
# ----------------------------------------------------------------------------

def test_zero_control_zero_drift_exact():
    # A = 0, B = 0: DRE degenerates to Pidot = q^2 I, Pi(t) = (p^2 + t q^2) I
    n, q, p = 6, 1.3, 0.7
    grid = TimeGrid(nt=32, T=1.0)
    traj = solve_riccati_dense(np.zeros((n, n)), np.zeros((n, n)), q, p, grid)
    for k in (0, 7, 32):
        t = k * grid.dt
        expect = (p**2 + t * q**2) * np.eye(n)
        assert traj.Pis[k] == pytest.approx(expect, abs=1e-12 * (1 + p**2 + q**2))


def test_scalar_model_matches_reference_integration():
    # n=1 scalar model: A=-1, B=1, B*=hx*B with hx=1/2, q=1, p=0, T=1.
    # Richardson-extrapolating two implicit-Euler solves removes the scheme's
    # O(dt) bias; the limit must match the adaptive reference to 1e-6.
    A, S = np.array([[-1.0]]), np.array([[0.5]])
    v1 = solve_riccati_dense(A, S, 1.0, 0.0, TimeGrid(nt=2048, T=1.0)).Pis[-1][0, 0]
    v2 = solve_riccati_dense(A, S, 1.0, 0.0, TimeGrid(nt=4096, T=1.0)).Pis[-1][0, 0]
    assert 2 * v2 - v1 == pytest.approx(SCALAR_PI_AT_ONE, abs=1e-6)
    # and the raw scheme closes in at first order
    assert abs(v1 - SCALAR_PI_AT_ONE) < 1e-4
    assert abs(v2 - SCALAR_PI_AT_ONE) < abs(v1 - SCALAR_PI_AT_ONE)


def test_scalar_model_first_order_in_dt():
    vals = []
    for nt in (256, 512, 1024):
        traj = solve_riccati_dense(np.array([[-1.0]]), np.array([[0.5]]), 1.0, 0.0,
                                   TimeGrid(nt=nt, T=1.0))
        vals.append(traj.Pis[-1][0, 0])
    errs = [abs(v - SCALAR_PI_AT_ONE) for v in vals]
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.2)
    assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.2)


def test_symmetry_and_psd_random_sigma():
    fam = family()
    grid = TimeGrid(nt=16, T=0.5)
    rng = np.random.default_rng(0)
    for _ in range(5):
        sigma = rng.uniform(-0.5, 0.5, size=fam.smax)
        traj = solve_riccati(evaluate_operator(fam, sigma), fam, grid)
        for Pi in traj.Pis:
            assert np.abs(Pi - Pi.T).max() <= 1e-10 * (1 + np.abs(Pi).max())
            w = np.linalg.eigvalsh(Pi)
            assert w.min() >= -1e-8 * max(w.max(), 1e-30)


def test_newton_residual_tolerance_met():
    fam = family(n=12)
    grid = TimeGrid(nt=8, T=1.0)
    A = evaluate_operator(fam, np.zeros(1))
    traj = solve_riccati(A, fam, grid)
    S = fam.Bmat @ adjoint_control(fam)
    q2 = fam.q_obs**2
    dt = grid.dt
    for k in range(grid.nt):
        X, Pk = traj.Pis[k + 1], traj.Pis[k]
        R = X - Pk - dt * (X @ A + A @ X - X @ S @ X + q2 * np.eye(fam.n))
        assert np.linalg.norm(R, "fro") <= 1e-9 * (1 + np.linalg.norm(X, "fro"))


def test_midpoint_residual_within_invariant():
    # ||(Pi_{k+1}-Pi_k)/dt - RHS(Pi_{k+1})|| <= 1e-9 (1 + ||Pi_{k+1}||): Newton's
    # quadratic convergence overshoots its stopping tolerance by orders
    fam = family(n=16)
    grid = TimeGrid(nt=64, T=1.0)
    A = evaluate_operator(fam, np.full(4, 0.3))
    traj = solve_riccati(A, fam, grid)
    S = fam.Bmat @ adjoint_control(fam)
    q2, dt = fam.q_obs**2, grid.dt
    for k in range(grid.nt):
        X, Pk = traj.Pis[k + 1], traj.Pis[k]
        R = X - Pk - dt * (X @ A + A @ X - X @ S @ X + q2 * np.eye(fam.n))
        assert (np.linalg.norm(R, "fro") / dt
                <= 1e-9 * (1 + np.linalg.norm(X, "fro")))


def test_step_size_convergence_first_order():
    # short horizon keeps the DRE transient alive at T; for diffusive A and
    # T = O(1) every discretization has already hit the dt-independent
    # stationary solution and the comparison degenerates to the Newton floor
    fam = family(n=16)
    A = evaluate_operator(fam, np.full(4, 0.3))
    finals = {}
    for nt in (32, 64, 128, 256, 512):
        finals[nt] = solve_riccati(A, fam, TimeGrid(nt=nt, T=0.125)).Pis[-1]
    errs = [np.linalg.norm(finals[nt] - finals[2 * nt], "fro")
            for nt in (32, 64, 128, 256)]
    slope = np.polyfit(np.log([32, 64, 128, 256]), np.log(errs), 1)[0]
    assert -1.2 <= slope <= -0.8


def test_horizon_consistency_bitwise():
    # solving on [0, T/2] with nt/2 steps reproduces Pi_{nt/2} bit for bit
    fam = family(n=8)
    A = evaluate_operator(fam, np.full(2, -0.4))
    full = solve_riccati(A, fam, TimeGrid(nt=64, T=1.0))
    half = solve_riccati(A, fam, TimeGrid(nt=32, T=0.5))
    assert np.array_equal(half.Pis[-1], full.Pis[32])


def test_parametric_derivative_decay():
    # central differences D_j = |Pi_{+d e_j}(T) - Pi_{-d e_j}(T)| / 2d at sigma=0
    fam = family(n=32, smax=16)
    grid = TimeGrid(nt=16, T=1.0)
    delta = 1e-3
    b = fam.bseq

    def fd(j):
        e = np.zeros(fam.smax)
        e[j - 1] = delta
        Pp = solve_riccati(evaluate_operator(fam, e), fam, grid).Pis[-1]
        Pm = solve_riccati(evaluate_operator(fam, -e), fam, grid).Pis[-1]
        return np.linalg.norm(Pp - Pm, 2) / (2 * delta)

    d1 = fd(1)
    for j in (2, 4, 8, 16):
        assert fd(j) / d1 <= 2.0 * b[j - 1] / b[0]


def test_batch_matches_single_solver():
    fam = family(n=10)
    grid = TimeGrid(nt=12, T=1.0)
    rng = np.random.default_rng(1)
    sigmas = rng.uniform(-0.5, 0.5, size=(6, fam.smax))
    As = evaluate_operators(fam, sigmas)
    batch = solve_riccati_batch(As, fam, grid)
    for i in range(6):
        single = solve_riccati(As[i], fam, grid)
        assert batch[i] == pytest.approx(single.Pis, abs=1e-9)


def test_batch_large_n_fallback():
    fam = family(n=16)  # above the Kronecker cutoff
    grid = TimeGrid(nt=8, T=0.5)
    sigmas = np.array([[0.1], [-0.2]])
    As = evaluate_operators(fam, sigmas)
    batch = solve_riccati_batch(As, fam, grid)
    assert batch[1] == pytest.approx(solve_riccati(As[1], fam, grid).Pis, abs=1e-10)


def test_asymmetric_input_rejected():
    fam = family(n=8)
    A = np.triu(np.ones((8, 8)))
    with pytest.raises(ValueError):
        solve_riccati(A, fam, TimeGrid(nt=4, T=1.0))


def test_newton_nonconvergence_reports_step_and_residual(monkeypatch):
    import qmc_feedback.riccati as rmod

    monkeypatch.setattr(rmod, "NEWTON_MAX_ITER", 1)
    fam = family(n=8)
    with pytest.raises(SolverError) as exc:
        rmod.solve_riccati(evaluate_operator(fam, np.zeros(1)), fam,
                           TimeGrid(nt=4, T=1.0))
    assert exc.value.step == 1
    assert exc.value.residual is not None and exc.value.residual > 0


# ----------------------------------------------------------------------------
# offset equation
# ----------------------------------------------------------------------------

def test_offset_zero_forcing_gives_zero():
    fam = family(n=12)
    grid = TimeGrid(nt=16, T=1.0)
    A = evaluate_operator(fam, np.zeros(2))
    traj = solve_riccati(A, fam, grid)
    hs = solve_offset(A, fam, traj, zero_data(fam.n), np.zeros(2), grid)
    assert np.all(hs.hs == 0.0)
    assert np.all(hs.hs[-1] == 0.0)


def test_offset_zero_riccati_gives_zero():
    # q_obs = p_ter = 0 -> Pi == 0 -> h == 0 regardless of r
    fam = family(n=12, q_obs=0.0, p_ter=0.0)
    grid = TimeGrid(nt=16, T=1.0)
    A = evaluate_operator(fam, np.zeros(2))
    traj = solve_riccati(A, fam, grid)
    assert np.abs(traj.Pis).max() == 0.0
    x = fam.grid.nodes
    svec = np.sin(np.pi * x)
    z = np.zeros(fam.n)
    data = ProblemData(T=1.0, f=lambda t: svec, g=lambda t: t * svec,
                       gdot=lambda t: svec, gT=svec, y0=z)
    hs = solve_offset(A, fam, traj, data, np.zeros(2), grid)
    assert np.abs(hs.hs).max() == 0.0


def test_offset_grid_mismatch_rejected():
    fam = family(n=8)
    A = evaluate_operator(fam, np.zeros(1))
    traj = solve_riccati(A, fam, TimeGrid(nt=8, T=1.0))
    with pytest.raises(ValueError):
        solve_offset(A, fam, traj, zero_data(fam.n), np.zeros(1), TimeGrid(nt=16, T=1.0))


def test_offset_batch_matches_single():
    fam = family(n=10)
    grid = TimeGrid(nt=12, T=1.0)
    x = fam.grid.nodes
    svec = np.sin(np.pi * x)
    z = np.zeros(fam.n)
    data = ProblemData(T=1.0, f=lambda t: 0.2 * svec, g=lambda t: t * svec,
                       gdot=lambda t: svec, gT=svec, y0=z)
    rng = np.random.default_rng(2)
    sigmas = rng.uniform(-0.5, 0.5, size=(4, fam.smax))
    As = evaluate_operators(fam, sigmas)
    Pis_b = solve_riccati_batch(As, fam, grid)
    hs_b = solve_offset_batch(As, fam, Pis_b, data, sigmas, grid)
    for i in range(4):
        traj = RiccatiTrajectory(Pis=Pis_b[i], grid=grid, hx=fam.grid.hx)
        single = solve_offset(As[i], fam, traj, data, sigmas[i], grid)
        assert hs_b[i] == pytest.approx(single.hs, abs=1e-12)


# ----------------------------------------------------------------------------
# feedback assembly
# ----------------------------------------------------------------------------

def test_feedback_time_reversal_indexing():
    fam = family(n=12, p_ter=0.5)
    grid = TimeGrid(nt=8, T=1.0)
    A = evaluate_operator(fam, np.zeros(1))
    traj = solve_riccati(A, fam, grid)
    law = feedback_from(traj, None, fam)
    Bs = adjoint_control(fam)
    # K(T) = -B* Pi(0) = -p_ter^2 B*
    assert law.gains[-1] == pytest.approx(-fam.p_ter**2 * Bs, rel=1e-12)
    # K(0) = -B* Pi(T)
    assert law.gains[0] == pytest.approx(-Bs @ traj.Pis[-1], rel=1e-12)
    assert np.all(law.offsets == 0.0)


def test_feedback_constant_pis_gives_constant_gains():
    fam = family(n=8)
    grid = TimeGrid(nt=4, T=1.0)
    Pi = np.eye(8) * 0.3
    traj = RiccatiTrajectory(Pis=np.repeat(Pi[None], 5, axis=0), grid=grid,
                             hx=fam.grid.hx)
    law = feedback_from(traj, None, fam)
    for k in range(1, 5):
        assert law.gains[k] == pytest.approx(law.gains[0])


def test_feedback_grid_mismatch():
    fam = family(n=8)
    traj = solve_riccati(evaluate_operator(fam, np.zeros(1)), fam, TimeGrid(nt=4, T=1.0))
    hs = OffsetTrajectory(hs=np.zeros((9, 8)), grid=TimeGrid(nt=8, T=1.0))
    with pytest.raises(ValueError):
        feedback_from(traj, hs, fam)


# ----------------------------------------------------------------------------
# optimal-cost functionals
# ----------------------------------------------------------------------------

def test_cost_homogeneous_zero_state():
    fam = family(n=8)
    traj = solve_riccati(evaluate_operator(fam, np.zeros(1)), fam, TimeGrid(nt=4, T=1.0))
    assert optimal_cost_homogeneous(traj, np.zeros(8)) == 0.0


def test_cost_homogeneous_identity_pi():
    n, c = 8, 0.7
    grid = TimeGrid(nt=4, T=1.0)
    hx = 1.0 / (n + 1)
    traj = RiccatiTrajectory(Pis=np.repeat(c * np.eye(n)[None], 5, axis=0),
                             grid=grid, hx=hx)
    y0 = np.linspace(0, 1, n)
    assert optimal_cost_homogeneous(traj, y0) == pytest.approx(
        0.5 * c * hx * np.sum(y0**2), rel=1e-14)


def test_cost_nonhomogeneous_reductions():
    fam = family(n=10)
    grid = TimeGrid(nt=8, T=1.0)
    A = evaluate_operator(fam, np.zeros(1))
    traj = solve_riccati(A, fam, grid)
    data = zero_data(fam.n)
    hs = solve_offset(A, fam, traj, data, np.zeros(1), grid)
    x0 = np.sin(np.pi * fam.grid.nodes)
    # r == 0 -> h == 0 -> cost reduces to the quadratic term
    val = optimal_cost_nonhomogeneous(traj, hs, data, fam, np.zeros(1), x0)
    assert val == pytest.approx(optimal_cost_homogeneous(traj, x0), rel=1e-13)
    # x0 = 0 and h == 0 -> 0
    assert optimal_cost_nonhomogeneous(traj, hs, data, fam, np.zeros(1),
                                       np.zeros(fam.n)) == 0.0
