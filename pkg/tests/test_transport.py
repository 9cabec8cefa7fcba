import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spindd import poisson
from spindd.errors import StepFailure, ValidationError
from spindd.grid import CellField, Grid1D
from spindd.model import (BoundaryData, ScaledParams, SpinState, four_component_matrix,
                          from_spin_state, to_spin_state)
from spindd.stationary import solve_stationary
from spindd.transport import (SolverOptions, bernoulli, initial_potential, oracle_flux_matrix,
                              precession_block, run_transient, sg_flux, sg_operator,
                              step_matrix_oracle, step_nperp, step_npm, step_spinless)


def sp(p=0.5, **kw):
    base = dict(gamma=1.0, tau=0.1, diff=1.0, lambda2=0.27, p=p, mu=np.array([0.0, 0.0, 1.0]))
    base.update(kw)
    return ScaledParams(**base)


def bump_state(grid, n0_scale=1.0, pol=0.2, perp=0.1):
    x = grid.cell_centers
    n0 = n0_scale * (1 + 0.3 * np.sin(np.pi * x))
    par = 0.5 * pol * np.sin(2 * np.pi * x) * n0
    nperp = np.zeros((grid.n_cells, 3))
    nperp[:, 0] = perp * np.sin(np.pi * x)
    nperp[:, 1] = -0.5 * perp * np.sin(3 * np.pi * x)
    return SpinState(0.5 * n0 + par, 0.5 * n0 - par, nperp)


# ---- Bernoulli / SG flux --------------------------------------------------------------

def test_bernoulli_values():
    assert bernoulli(0.0) == 1.0
    assert bernoulli(1.0) == pytest.approx(1 / (math.e - 1), rel=1e-15)
    assert bernoulli(1.0) == pytest.approx(0.5819767, abs=1e-7)


@pytest.mark.parametrize("x", [0.5, 5.0, 50.0])
def test_bernoulli_identity(x):
    assert bernoulli(x) - bernoulli(-x) == pytest.approx(-x, rel=1e-14)


@given(st.floats(-700, 700))
def test_bernoulli_identity_property(x):
    assert bernoulli(x) - bernoulli(-x) == pytest.approx(-x, rel=1e-12, abs=1e-15)


def test_bernoulli_continuous_at_series_cutoff():
    for x in (1e-4 * (1 - 1e-9), 1e-4 * (1 + 1e-9), -1e-4):
        assert bernoulli(x) == pytest.approx(x / math.expm1(x), rel=1e-15)


def test_sg_flux_examples():
    assert sg_flux(1.0, 3.0, 0.0, 2.0, 0.5) == pytest.approx(8.0)
    VL, VR = 0.3, -1.2
    assert abs(sg_flux(math.exp(-VL), math.exp(-VR), VR - VL, 1.0, 0.1)) <= 1e-12
    expect = (2 * math.e - 1) / (math.e - 1)
    assert sg_flux(1.0, 2.0, 1.0, 1.0, 1.0) == pytest.approx(expect, rel=1e-14)
    assert expect == pytest.approx(2.5819767, abs=1e-7)


def test_sg_operator_exact_on_gibbs_state():
    g = Grid1D(30)
    V = CellField.from_function(g, lambda x: 3 * np.sin(4 * x) - x)
    n = np.exp(-V.values)
    lower, diag, upper, sl, sr = sg_operator(g, V)
    r = diag * n
    r[1:] += lower[1:] * n[:-1]
    r[:-1] += upper[:-1] * n[1:]
    r[0] -= sl * math.exp(-V.bc_left)
    r[-1] -= sr * math.exp(-V.bc_right)
    assert np.max(np.abs(r)) <= 1e-10


def test_sg_operator_m_matrix():
    g = Grid1D(20)
    V = CellField.from_function(g, lambda x: 5 * x**2)
    lower, diag, upper, _, _ = sg_operator(g, V)
    assert np.all(diag > 0) and np.all(lower[1:] < 0) and np.all(upper[:-1] < 0)
    # column sums of I + dt L vanish in the operator part on interior columns
    col = diag.copy()
    col[:-1] += lower[1:]
    col[1:] += upper[:-1]
    np.testing.assert_allclose(col[1:-1], 0.0, atol=1e-9)


# ---- spin-up / spin-down stepper ------------------------------------------------------

def test_step_npm_symmetric_without_relaxation():
    g = Grid1D(40)
    params = sp(tau=math.inf)
    bc = BoundaryData.from_phi(1.0, 1.0, 0.0, 0.1)
    x = g.cell_centers
    state = SpinState(0.5 + 0.2 * x, 0.5 + 0.2 * x, np.zeros((40, 3)))
    params = sp(tau=math.inf, p=0.0)
    V = initial_potential(g, state, params, bc)
    for _ in range(5):
        npl, nmi, V, _ = step_npm(g, state, V, params, bc, 0.02)
        state = SpinState(npl, nmi, state.n_perp)
        np.testing.assert_allclose(npl, nmi, atol=1e-12)


def test_step_npm_uniform_relaxation_ode():
    # reflecting faces + neutral doping keep the state uniform; only relaxation acts
    n = 10
    g = Grid1D(n)
    a, b = 0.8, 0.2
    tau, dt = 0.5, 0.01
    params = sp(tau=tau, doping=a + b)
    bc = BoundaryData(1.0, 1.0, 0.0, 0.0)
    state = SpinState(np.full(n, a), np.full(n, b), np.zeros((n, 3)))
    V = initial_potential(g, state, params, bc)
    t = 0.0
    for k in range(1, 51):
        npl, nmi, V, _ = step_npm(g, state, V, params, bc, dt, reflecting=True)
        state = SpinState(npl, nmi, state.n_perp)
        t += dt
        diff = npl - nmi
        np.testing.assert_allclose(diff, (a - b) / (1 + dt / tau) ** k, rtol=1e-12)
        assert np.ptp(npl) < 1e-13
        assert abs(diff[0] - (a - b) * math.exp(-t / tau)) <= 2 * dt / tau * (a - b)


def test_step_npm_keeps_gibbs_state():
    g = Grid1D(30)
    params = sp(doping=np.linspace(0.5, 1.5, 30))
    bc = BoundaryData.equilibrium(1.0)
    steady = solve_stationary(g, params, bc)
    half = 0.5 * steady.n_inf.values
    state = SpinState(half, half, np.zeros((30, 3)))
    npl, nmi, V, rep = step_npm(g, state, steady.v_inf, params, bc, 0.05)
    assert np.max(np.abs(npl - half)) <= 1e-10 and np.max(np.abs(nmi - half)) <= 1e-10
    assert rep.converged


def test_reflecting_mode_conserves_charge():
    g = Grid1D(40)
    params = sp(tau=math.inf)
    bc = BoundaryData.from_phi(1.0, 1.0, 0.0, 0.3)
    state = bump_state(g)
    V = initial_potential(g, state, params, bc)
    total = g.cell_integral(state.n0)
    for _ in range(10):
        npl, nmi, V, _ = step_npm(g, state, V, params, bc, 0.05, reflecting=True)
        state = SpinState(npl, nmi, state.n_perp)
        assert abs(g.cell_integral(state.n0) - total) <= 1e-10


def test_step_npm_rejects_bad_dt():
    g = Grid1D(5)
    st0 = SpinState(np.ones(5), np.ones(5), np.zeros((5, 3)))
    with pytest.raises(ValidationError):
        step_npm(g, st0, CellField(g, np.zeros(5)), sp(), BoundaryData.equilibrium(), 0.0)


def test_step_npm_gummel_failure_reports():
    g = Grid1D(20)
    params = sp(lambda2=1e-3)
    bc = BoundaryData.from_phi(1.0, 1.0, 0.0, 0.0)
    state = bump_state(g, n0_scale=3.0)
    V = initial_potential(g, state, params, bc)
    with pytest.raises(StepFailure) as exc:
        step_npm(g, state, V, params, bc, 1.0, SolverOptions(max_iter=2))
    assert exc.value.report is not None


def test_spinless_matches_unpolarized_pair():
    g = Grid1D(30)
    params = sp(p=0.0, tau=math.inf)
    bc = BoundaryData.from_phi(0.7, 1.2, 0.0, 0.2)
    state = bump_state(g, pol=0.0, perp=0.0)
    V = initial_potential(g, state, params, bc)
    n0, V0 = state.n0, V
    for _ in range(5):
        npl, nmi, V, _ = step_npm(g, state, V, params, bc, 0.02)
        state = SpinState(npl, nmi, state.n_perp)
        n0, V0, _ = step_spinless(g, n0, V0, params, bc, 0.02, d_coef=params.diff)
        np.testing.assert_allclose(state.n0, n0, atol=1e-12)


# ---- transverse spin ------------------------------------------------------------------

def test_nperp_zero_is_fixed_point():
    g = Grid1D(10)
    out = step_nperp(g, np.zeros((10, 3)), CellField(g, np.zeros(10)), sp(), 0.1)
    assert np.all(out == 0.0)


def test_nperp_single_cell_rotation():
    g = Grid1D(4)
    params = sp(gamma=1.0, tau=math.inf)
    dt = 1e-3
    v = np.tile([1.0, 0.0, 0.0], (4, 1))
    for k in range(1, 101):
        v = step_nperp(g, v, CellField(g, np.zeros(4)), params, dt, with_transport=False)
    angle = math.atan2(v[0, 1], v[0, 0])
    # dn/dt = 2 gamma n x m with m = e_z rotates e_x towards -e_y
    assert angle == pytest.approx(-2 * params.gamma * dt * 100, rel=1e-5)
    assert np.linalg.norm(v[0]) == pytest.approx(1.0, abs=100 * (2 * dt) ** 2)


def test_precession_block_inverse_contracts():
    params = sp(gamma=3.0, tau=0.2)
    B = precession_block(params, 0.01)
    assert np.linalg.norm(np.linalg.inv(B), 2) <= 1 / (1 + 0.01 / 0.2) + 1e-15


def test_nperp_energy_estimate():
    n = 200
    g = Grid1D(n)
    tau, dt = 1.0, 1e-3
    n0 = np.ones(n)
    params = sp(tau=tau, doping=n0, mu=np.array([0.0, 1.0, 0.0]))
    V = poisson.solve_potential(g, params.lambda2, n0, params.doping, 0.0, 0.0)
    np.testing.assert_array_equal(V.values, 0.0)
    v = np.tile([1.0, 0.0, 0.0], (n, 1))
    norm0 = math.sqrt(g.h * np.sum(v**2))
    for k in range(1, 501):
        v = step_nperp(g, v, V, params, dt)
        norm = math.sqrt(g.h * np.sum(v**2))
        assert norm <= norm0 * math.exp(-k * dt / tau) + 1e-3
    assert np.max(np.abs(v @ params.mu)) <= 1e-12


def test_nperp_stays_perpendicular():
    g = Grid1D(50)
    params = sp(gamma=5.0, mu=np.array([1.0, 2.0, 2.0]))
    state = to_spin_state(np.ones(50), np.random.default_rng(0).normal(size=(50, 3)), params.mu)
    V = CellField.from_function(g, lambda x: np.sin(3 * x))
    v = state.n_perp
    for _ in range(20):
        v = step_nperp(g, v, V, params, 0.05)
        assert np.max(np.abs(v @ params.mu)) <= 1e-10


# ---- matrix oracle ----------------------------------------------------------------------

def test_oracle_flux_matrix_equals_coordinate_change():
    for p in (0.0, 0.3, 0.7):
        params = sp(p=p, mu=np.array([0.2, -0.5, 0.8]))
        np.testing.assert_allclose(oracle_flux_matrix(params), four_component_matrix(params),
                                   atol=1e-13)


def test_oracle_size_guard():
    g = Grid1D(65)
    with pytest.raises(ValidationError):
        step_matrix_oracle(g, np.ones(65), np.zeros((65, 3)), CellField(g, np.zeros(65)),
                           sp(), BoundaryData.equilibrium(), 0.1)


def test_oracle_unpolarized_spinless_limit():
    g = Grid1D(16)
    params = sp(p=0.0)
    bc = BoundaryData.from_phi(0.8, 1.1, 0.0, 0.2)
    n0 = 1 + 0.3 * np.sin(np.pi * g.cell_centers)
    V = poisson.solve_potential(g, params.lambda2, n0, params.doping, bc.v_left, bc.v_right)
    a, nvec, Va, _ = step_matrix_oracle(g, n0, np.zeros((16, 3)), V, params, bc, 0.05)
    b, Vb, _ = step_spinless(g, n0, V, params, bc, 0.05, d_coef=params.diff)
    np.testing.assert_allclose(a, b, atol=1e-12)
    np.testing.assert_allclose(nvec, 0.0, atol=1e-14)


def test_oracle_keeps_gibbs_state():
    g = Grid1D(16)
    params = sp(doping=np.linspace(0.6, 1.4, 16))
    bc = BoundaryData.equilibrium(1.0)
    steady = solve_stationary(g, params, bc)
    n0, nvec, V, _ = step_matrix_oracle(g, steady.n_inf.values, np.zeros((16, 3)),
                                        steady.v_inf, params, bc, 0.1)
    assert np.max(np.abs(n0 - steady.n_inf.values)) <= 1e-10
    assert np.max(np.abs(nvec)) <= 1e-10


@pytest.mark.parametrize("p", [0.0, 0.3, 0.7])
def test_single_step_oracle_equivalence(p):
    g = Grid1D(16)
    params = sp(p=p, gamma=2.0, mu=np.array([0.3, 0.4, 0.866]))
    bc = BoundaryData.from_phi(0.9, 1.1, 0.0, 0.1)
    state = bump_state(g)
    n0, nvec = from_spin_state(state, params.mu)
    state = to_spin_state(n0, nvec, params.mu)
    V = initial_potential(g, state, params, bc)
    a0, avec, Va, _ = step_matrix_oracle(g, n0, nvec, V, params, bc, 0.05)
    npl, nmi, Vb, _ = step_npm(g, state, V, params, bc, 0.05)
    nperp = step_nperp(g, state.n_perp, Vb, params, 0.05)
    b0, bvec = from_spin_state(SpinState(npl, nmi, nperp), params.mu)
    assert np.max(np.abs(a0 - b0)) <= 1e-8
    assert np.max(np.abs(avec - bvec)) <= 1e-8
    assert np.max(np.abs(Va.values - Vb.values)) <= 1e-8


# ---- run_transient ----------------------------------------------------------------------

def test_run_transient_zero_horizon_and_observers():
    g = Grid1D(20)
    params = sp()
    bc = BoundaryData.equilibrium()
    calls = []
    res = run_transient(g, bump_state(g), params, bc, 0.0, 0.1,
                        observers=[lambda t, s, V, r: calls.append((t, r))])
    assert calls == [(0.0, None)] and res.n_steps == 0

    calls.clear()
    res = run_transient(g, bump_state(g), params, bc, 0.5, 0.1, record_every=2,
                        observers=[lambda t, s, V, r: calls.append(t)])
    assert res.n_steps == 5
    assert calls == pytest.approx([0.0, 0.2, 0.4, 0.5])


def test_run_transient_validates():
    g = Grid1D(5)
    bad = SpinState(np.zeros(5), np.ones(5), np.zeros((5, 3)))
    with pytest.raises(ValidationError):
        run_transient(g, bad, sp(), BoundaryData.equilibrium(), 1.0, 0.1)
    with pytest.raises(ValidationError):
        run_transient(g, bump_state(g), sp(), BoundaryData.equilibrium(), 1.0, 0.0)


def test_run_transient_warns_when_tau_condition_fails(caplog):
    g = Grid1D(5)
    with caplog.at_level("WARNING"):
        run_transient(g, bump_state(g), sp(tau=100.0), BoundaryData.equilibrium(), 0.1, 0.1)
    assert "threshold" in caplog.text


def test_steady_state_is_fixed_point_of_dynamics():
    g = Grid1D(40)
    params = sp(doping=0.5 + 0.5 * np.exp(-((np.linspace(0, 1, 40) - 0.5) / 0.2) ** 2))
    bc = BoundaryData.from_phi(0.5, 0.5, 0.0, 0.05)
    steady = solve_stationary(g, params, bc)
    half = 0.5 * steady.n_inf.values
    res = run_transient(g, SpinState(half, half, np.zeros((40, 3))), params, bc, 1.0, 0.01)
    assert np.max(np.abs(res.state.n_plus - half)) <= 1e-9
    assert np.max(np.abs(res.state.n_minus - half)) <= 1e-9
    assert np.max(np.abs(res.potential.values - steady.v_inf.values)) <= 1e-9


@settings(max_examples=10, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.0, 0.9), st.floats(0.01, 0.5))
def test_positivity_under_strong_perturbations(amp, pol, dt):
    g = Grid1D(30)
    x = g.cell_centers
    params = sp(p=0.7, tau=0.05)
    bc = BoundaryData.from_phi(0.2, 1.5, 0.0, 0.5)
    n0 = 1 + amp * np.sin(6 * np.pi * x)
    par = 0.5 * pol * n0 * np.cos(5 * x)
    state = SpinState(0.5 * n0 + par, 0.5 * n0 - par, np.zeros((30, 3)))
    res = run_transient(g, state, params, bc, 5 * dt, dt)
    assert np.all(res.state.n_plus > 0) and np.all(res.state.n_minus > 0)


def test_long_run_lower_bound_does_not_decay():
    g = Grid1D(50)
    x = g.cell_centers
    params = sp(tau=0.06, diff=1.0, doping=0.5 + 0.5 * np.exp(-((x - 0.5) / 0.15) ** 2))
    bc = BoundaryData.from_phi(0.5, 0.5, 0.0, 0.05)
    steady = solve_stationary(g, params, bc)
    n0 = steady.n_inf.values * (1 + 0.5 * np.sin(np.pi * x))
    par = 0.3 * n0 * np.sin(np.pi * x)
    floor = []
    run_transient(g, SpinState(0.5 * n0 + par, 0.5 * n0 - par, np.zeros((50, 3))), params, bc,
                  50.0, 0.1, observers=[lambda t, s, V, r: floor.append(
                      min(s.n_plus.min(), s.n_minus.min()))])
    floor = np.array(floor)
    assert floor.min() > 0
    half = len(floor) // 2
    assert floor[half:].min() >= 0.9 * floor[half]
