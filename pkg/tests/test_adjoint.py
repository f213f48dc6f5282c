"""Backward solver: semigroup oracles, duality against the forward run,
oscillation traces, and the transpose structure of the advection step."""
import numpy as np
import pytest

from levyfp.adjoint import (
    _AdjointStepper,
    duality_residual,
    oscillation_trace,
    ramp_profile,
    smoothed_indicator,
    solve_backward,
    tanh_profile,
    tapered_linear,
)
from levyfp.forward import NumericalFailure, gaussian, solve
from levyfp.generators import DriftSpec, GeneratorSpec, LevyMeasureSpec, LocalDiffusionSpec
from levyfp.grids import Grid, ScalarField
from levyfp.operators import divergence_of_flux, face_velocities, transport_flux
from levyfp.weights import WeightFunction

GRID = Grid(dim=1, n=1024, half_width=16.0)

OU = GeneratorSpec(LocalDiffusionSpec.constant(1.0), LevyMeasureSpec.none(), DriftSpec.ou(1.0))
OU_FRAC = GeneratorSpec(
    LocalDiffusionSpec.constant(1.0), LevyMeasureSpec.fractional(1.5), DriftSpec.ou(1.0)
)
FRAC_ONLY = GeneratorSpec(
    LocalDiffusionSpec.constant(0.0), LevyMeasureSpec.fractional(1.5), DriftSpec.none()
)


# ---------------------------------------------------------------------------
# terminal data library


def test_profiles_live_on_the_grid():
    for xi in (tanh_profile(GRID), ramp_profile(GRID), smoothed_indicator(GRID),
               tapered_linear(GRID)):
        assert xi.values.shape == (GRID.n,)
        assert np.all(np.isfinite(xi.values))


def test_ramp_rejects_bad_interval():
    with pytest.raises(ValueError, match="a < b"):
        ramp_profile(GRID, a=1.0, b=-1.0)


def test_tapered_linear_is_x_inside_and_zero_at_seam():
    xi = tapered_linear(GRID)
    inner = np.abs(GRID.nodes) <= 0.65 * GRID.half_width
    assert np.array_equal(xi.values[inner], GRID.nodes[inner])
    seam = np.abs(GRID.nodes) >= 0.95 * GRID.half_width
    assert np.all(xi.values[seam] == 0.0)


# ---------------------------------------------------------------------------
# backward marching


@pytest.mark.parametrize("route", ["spectral", "quadrature"])
def test_constant_terminal_datum_stays_constant(route):
    xi = ScalarField(grid=GRID, values=np.full(GRID.n, 0.7))
    run = solve_backward(xi, OU_FRAC, s_final=0.1, dt=1e-3, jump_route=route, record_every=25)
    for p in run.profiles:
        assert np.abs(p.values - 0.7).max() < 1e-12


def test_drift_free_fractional_is_exact_mode_wise():
    xi = tanh_profile(GRID)
    run = solve_backward(xi, FRAC_ONLY, s_final=0.5, dt=1e-3, record_every=10**9)
    want = np.real(
        np.fft.ifft(np.exp(-0.5 * GRID.wavenumber_magnitude**1.5) * np.fft.fft(xi.values))
    )
    assert np.abs(run.final.values - want).max() < 1e-11


def test_ou_linear_terminal_matches_exact_expectation():
    # E[X_{t-s} | X_s = x] = e^{-(t-s)} x for dX = -X dt; tapering keeps the
    # seam quiet, so compare on the interior half only; measured 5.7e-3
    run = solve_backward(tapered_linear(GRID), OU, s_final=0.5, dt=1e-3, record_every=10**9)
    band = np.abs(GRID.nodes) <= 0.5 * GRID.half_width
    gap = np.abs(run.final.values - np.exp(-0.5) * GRID.nodes)[band].max()
    assert gap < 1e-2


def test_backward_times_and_final_orientation():
    run = solve_backward(tanh_profile(GRID), OU, s_final=0.01, dt=1e-3, record_every=4)
    assert run.times[0] == 0.0
    assert run.times[-1] == pytest.approx(0.01)
    assert np.all(np.diff(run.times) > 0)
    assert run.final is run.profiles[-1]
    assert np.array_equal(run.profiles[0].values, run.terminal.values)


def test_sup_norm_bounded_by_terminal_plus_source():
    f = ScalarField(grid=GRID, values=0.5 * np.cos(GRID.nodes))
    run = solve_backward(tanh_profile(GRID), OU_FRAC, s_final=1.0, dt=1e-3,
                         source=f, record_every=20)
    bound = np.abs(run.terminal.values).max() + 0.5 * run.times
    assert np.all(run.sup_norm <= bound + 1e-9)


def test_comparison_principle_on_spectral_route():
    xi1 = tanh_profile(GRID)
    xi2 = ScalarField(grid=GRID, values=xi1.values + 0.05 * (1.0 + np.cos(GRID.nodes)))
    u1 = solve_backward(xi1, OU_FRAC, s_final=0.5, dt=1e-3, record_every=10**9).final
    u2 = solve_backward(xi2, OU_FRAC, s_final=0.5, dt=1e-3, record_every=10**9).final
    assert np.max(u1.values - u2.values) <= 1e-8


def test_advection_step_is_exact_transpose_of_forward_flux():
    # the forward donor update and the backward advection are assembled from
    # the same face velocities; their matrices must be transposes bitwise
    g = Grid(dim=1, n=64, half_width=4.0)
    spec = GeneratorSpec(LocalDiffusionSpec.constant(1.0), LevyMeasureSpec.none(), DriftSpec.ou(1.0))
    dt = 0.125 * g.dx
    w = face_velocities(g, spec.drift, 0.0)
    stepper = _AdjointStepper(spec, g, dt, "auto", None)
    fwd = np.zeros((g.n, g.n))
    adj = np.zeros((g.n, g.n))
    for j in range(g.n):
        e = np.zeros(g.n)
        e[j] = 1.0
        fwd[:, j] = e - dt * divergence_of_flux(transport_flux(e, w, g.dx, "off"), g.dx)
        adj[:, j] = stepper._advect(e, 0.0)
    assert np.abs(adj - fwd.T).max() == 0.0


# ---------------------------------------------------------------------------
# oscillation traces


def test_oscillation_of_constant_is_zero():
    xi = ScalarField(grid=GRID, values=np.full(GRID.n, 2.0))
    run = solve_backward(xi, OU_FRAC, s_final=0.05, dt=1e-3, record_every=10)
    trace = oscillation_trace(run, WeightFunction.power(0.5))
    assert np.abs(trace).max() < 1e-12


def test_oscillation_trace_is_shift_invariant():
    g = Grid(dim=1, n=256, half_width=16.0)
    spec = GeneratorSpec(
        LocalDiffusionSpec.constant(1.0), LevyMeasureSpec.fractional(1.5), DriftSpec.ou(1.0)
    )
    xi = tanh_profile(g)
    shifted = ScalarField(grid=g, values=xi.values + 3.0)
    w = WeightFunction.power(0.5)
    ta = oscillation_trace(solve_backward(xi, spec, s_final=0.5, dt=2e-3, record_every=50), w)
    tb = oscillation_trace(solve_backward(shifted, spec, s_final=0.5, dt=2e-3, record_every=50), w)
    assert np.abs(ta - tb).max() < 1e-12


def test_oscillation_heavier_weight_dominates():
    # <x>^1 >= <x>^0.5 node-wise, so the k = 1 seminorm can only be smaller
    g = Grid(dim=1, n=256, half_width=16.0)
    spec = GeneratorSpec(
        LocalDiffusionSpec.constant(1.0), LevyMeasureSpec.fractional(1.5), DriftSpec.ou(1.0)
    )
    run = solve_backward(tanh_profile(g), spec, s_final=0.5, dt=2e-3, record_every=50)
    t_half = oscillation_trace(run, WeightFunction.power(0.5))
    t_one = oscillation_trace(run, WeightFunction.power(1.0))
    assert np.all(t_one <= t_half + 1e-15)


def test_oscillation_eventually_decreasing_under_confinement():
    run = solve_backward(tanh_profile(GRID), OU_FRAC, s_final=3.0, dt=1e-3, record_every=50)
    trace = oscillation_trace(run, WeightFunction.power(0.5))
    tail = trace[run.times >= 0.5]
    assert np.all(np.diff(tail) <= 1e-10)
    assert trace[-1] < 0.2 * trace[0]


# ---------------------------------------------------------------------------
# duality against the forward solver


def test_duality_constant_terminal_is_mass_identity():
    fw = solve(gaussian(GRID), OU_FRAC, t_final=0.5, dt=1e-3, limiter="off",
               eps_boundary=0.05, record_every=10**9)
    rep = duality_residual(fw, ScalarField(grid=GRID, values=np.ones(GRID.n)))
    assert rep.normalized < 1e-12


def test_duality_drift_free_fractional_is_exact():
    fw = solve(gaussian(GRID), FRAC_ONLY, t_final=0.5, dt=1e-3, eps_boundary=0.05,
               record_every=10**9)
    rep = duality_residual(fw, tanh_profile(GRID))
    assert rep.normalized < 1e-8


def test_duality_residual_first_order_in_dt():
    # splitting-order mismatch between the two solvers is the only gap left;
    # measured 1.3e-7 then ratio 0.445 under halving
    reps = []
    for dt in (1e-3, 5e-4):
        fw = solve(gaussian(GRID), OU_FRAC, t_final=2.0, dt=dt, limiter="off",
                   eps_boundary=0.05, record_every=10**9)
        reps.append(duality_residual(fw, tanh_profile(GRID)))
    assert reps[0].normalized < 5e-3
    ratio = reps[1].normalized / reps[0].normalized
    assert 0.3 < ratio < 0.7
    assert reps[0].n_steps == 2000


def test_duality_with_static_source():
    # forward pairings + trapezoid close the identity to first order;
    # measured 1.05e-4 with exact halving
    f = ScalarField(grid=GRID, values=0.4 * np.cos(GRID.nodes) * np.exp(-0.1 * GRID.nodes**2))
    vals = []
    for dt in (1e-3, 5e-4):
        fw = solve(gaussian(GRID), OU_FRAC, t_final=1.0, dt=dt, limiter="off",
                   eps_boundary=0.05, record_every=1, pair_with=f.values)
        vals.append(duality_residual(fw, tanh_profile(GRID), source=f).normalized)
    assert vals[0] < 5e-4
    assert 0.35 < vals[1] / vals[0] < 0.65


def test_duality_rejects_grid_mismatch():
    fw = solve(gaussian(GRID), OU, t_final=0.01, dt=1e-3)
    other = tanh_profile(Grid(dim=1, n=512, half_width=16.0))
    with pytest.raises(ValueError, match="grid"):
        duality_residual(fw, other)


def test_duality_requires_recorded_pairings_for_source():
    f = ScalarField(grid=GRID, values=np.cos(GRID.nodes))
    fw = solve(gaussian(GRID), OU, t_final=0.01, dt=1e-3)
    with pytest.raises(ValueError, match="pairings"):
        duality_residual(fw, tanh_profile(GRID), source=f)


def test_duality_rejects_callable_source():
    fw = solve(gaussian(GRID), OU, t_final=0.01, dt=1e-3, pair_with=np.cos(GRID.nodes))
    with pytest.raises(ValueError, match="static"):
        duality_residual(fw, tanh_profile(GRID), source=lambda s: np.cos(GRID.nodes))


# ---------------------------------------------------------------------------
# failure paths


def test_backward_cfl_violation_detected():
    with pytest.raises(NumericalFailure, match="CFL violation in adjoint"):
        solve_backward(tanh_profile(GRID), OU, s_final=0.1, dt=5e-3)


def test_backward_horizon_must_be_step_multiple():
    with pytest.raises(ValueError, match="integer number of steps"):
        solve_backward(tanh_profile(GRID), OU, s_final=0.0015, dt=1e-3)


def test_time_dependent_drift_needs_forward_horizon():
    g = Grid(dim=1, n=128, half_width=4.0)
    spec = GeneratorSpec(
        LocalDiffusionSpec.constant(1.0),
        LevyMeasureSpec.none(),
        DriftSpec.perturbed_power(1.0, 2.0, 0.5),
    )
    with pytest.raises(ValueError, match="forward_horizon"):
        solve_backward(tanh_profile(g), spec, s_final=0.005, dt=1e-3)
    run = solve_backward(tanh_profile(g), spec, s_final=0.005, dt=1e-3, forward_horizon=0.005)
    assert np.all(np.isfinite(run.final.values))
