"""Energies, BBM functionals, fits, kernel limits, tails and time integrals."""
import math

import numpy as np
import pytest

from nla.diagnostics import (
    InsufficientSamples, bbm_functional, decay_fit, dirichlet_domination_check, dudt_hminus1,
    energy_report, fit_power_law, interpolation_bound, kernel_limit_check_G, kernel_limit_check_J,
    nonlocal_energy, nonlocal_energy_direct, renormalized_error, tail_bound_check, time_integral,
)
from nla.grid import Field, Grid, constant_field, lp_norm
from nla.kernels import KernelSpec, discretize, first_moment_B
from nla.solver import (
    StepperConfig, TrajectoryRecord, band_limited_field, discretize_model, gaussian_data,
    geometric_record_times, rhs, solve_local_reference,
)


@pytest.fixture
def bump():
    return KernelSpec('bump', 1, 1.0)


# --- nonlocal energy ------------------------------------------------------

def test_energy_matches_double_sum(small_grid, gaussian_J):
    k = discretize(gaussian_J, small_grid)
    u = gaussian_data(small_grid, width=0.7, center=(0.5,))
    assert nonlocal_energy(u, k, 1.0) == pytest.approx(nonlocal_energy_direct(u, k, 1.0), rel=1e-10)


def test_energy_matches_double_sum_in_2d(grid_2d):
    k = discretize(KernelSpec('bump', 2, 1.0), grid_2d)
    u = gaussian_data(grid_2d, width=1.2)
    assert nonlocal_energy(u, k, 1.0) == pytest.approx(nonlocal_energy_direct(u, k, 1.0), rel=1e-10)


def test_energy_of_constant_is_zero(grid_1d, gaussian_J):
    k = discretize(gaussian_J, grid_1d)
    assert nonlocal_energy(constant_field(grid_1d, 2.0), k, 1.0) < 1e-12


def test_energy_of_single_mode():
    grid = Grid(1, 256, 8 * math.pi)
    k = discretize(KernelSpec('gaussian', 1, 1.0), grid, lam=2.0)
    u = Field(grid, np.cos(grid.axis))
    # 2 lam^2 (1 - J^(1)) |u|_2^2 with |u|_2^2 = L
    expected = 2 * 4 * (1 - math.exp(-1 / 8)) * 8 * math.pi
    assert nonlocal_energy(u, k, 2.0) == pytest.approx(expected, rel=1e-10)


def test_energy_checks_scale(grid_1d, gaussian_J):
    k = discretize(gaussian_J, grid_1d, lam=2.0)
    with pytest.raises(ValueError):
        nonlocal_energy(gaussian_data(grid_1d), k, 1.0)


# --- BBM functionals ------------------------------------------------------

def test_bbm_with_p2_is_the_nonlocal_energy(grid_1d, bump):
    rho = discretize(bump, grid_1d, lam=4.0)
    f = gaussian_data(grid_1d)
    assert bbm_functional(f, rho, 4.0, 2) == pytest.approx(nonlocal_energy(f, rho, 4.0), rel=1e-10)


def test_bbm_preconditions(grid_1d, gaussian_J, bump):
    f = gaussian_data(grid_1d)
    with pytest.raises(ValueError):
        bbm_functional(f, discretize(gaussian_J, grid_1d), 1.0, 3)
    with pytest.raises(ValueError):
        bbm_functional(f, discretize(bump, grid_1d), 1.0, 0.5)


def test_bbm_scaling_covariance(bump):
    # F(f(./s), n/s) = s^(d-2) F(f, n) with s = 2; the scaled grid lines up point for point
    grid = Grid(1, 1024, 10.0)
    scaled_grid = Grid(1, 1024, 20.0)
    f = Field(grid, np.exp(-grid.axis ** 2))
    f_s = Field(scaled_grid, np.exp(-(scaled_grid.axis / 2) ** 2))
    F = bbm_functional(f, discretize(bump, grid, 8.0), 8.0, 2)
    F_s = bbm_functional(f_s, discretize(bump, scaled_grid, 4.0), 4.0, 2)
    assert F_s == pytest.approx(F / 2, rel=1e-12)


def test_bbm_converges_to_dirichlet_integral(bump):
    grid = Grid(1, 4096, 10.0)
    f = Field(grid, np.exp(-grid.axis ** 2))
    report = dirichlet_domination_check(f, bump, (4, 8, 16, 32), p=2)
    assert report.passed
    assert all(b > a for a, b in zip(report.ratios, report.ratios[1:]))
    assert report.ratios[-1] > 0.95


@pytest.mark.parametrize('p', [2, 3])
def test_dirichlet_domination_for_smooth_data(bump, p):
    grid = Grid(1, 2048, 10.0)
    f = Field(grid, np.exp(-grid.axis ** 2) * np.cos(grid.axis))
    report = dirichlet_domination_check(f, bump, (2, 4, 8), p=p)
    assert report.passed, report.ratios


def test_dirichlet_domination_for_band_limited_data(bump):
    grid = Grid(1, 1024, 10.0)
    report = dirichlet_domination_check(band_limited_field(grid, seed=3), bump, (2, 4, 8), p=2)
    assert report.max_ratio <= 1 + 1e-10


def test_domination_of_constant_is_trivial(grid_1d, bump):
    report = dirichlet_domination_check(constant_field(grid_1d, 1.0), bump, (2, 4))
    assert report.ratios == (0.0, 0.0)
    assert report.passed


# --- power-law fits -------------------------------------------------------

def test_fit_recovers_exact_power_law():
    times = np.array(geometric_record_times(1.0, 256.0))
    fit = fit_power_law(times, times ** -0.37, (1.0, 256.0))
    assert fit.slope == pytest.approx(-0.37, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.samples == len(times)


def test_fit_of_constant_has_zero_slope():
    times = np.array(geometric_record_times(1.0, 64.0))
    fit = fit_power_law(times, np.full(len(times), 0.5), (1.0, 64.0))
    assert fit.slope == 0.0
    assert fit.r_squared == 1.0


def test_fit_preconditions():
    times = np.array(geometric_record_times(1.0, 64.0))
    with pytest.raises(InsufficientSamples):
        fit_power_law(times, times, (1.0, 3.0))
    with pytest.raises(ValueError):
        fit_power_law(times, -times, (1.0, 64.0))
    with pytest.raises(ValueError):
        fit_power_law(times, times, (4.0, 2.0))


def test_heat_decay_rates():
    grid = Grid(1, 1024, 160.0)
    stepper = StepperConfig(t_end=200.0, record_times=geometric_record_times(10.0, 200.0))
    record, _ = solve_local_reference(gaussian_data(grid), 0.5, 0.0, 2.0, stepper)
    assert decay_fit(record, 2, (10.0, 200.0)).slope == pytest.approx(-0.25, abs=0.02)
    assert decay_fit(record, 1, (10.0, 200.0)).slope == pytest.approx(0.0, abs=1e-10)
    assert decay_fit(record, math.inf, (10.0, 200.0)).slope == pytest.approx(-0.5, abs=0.04)


# --- renormalized errors --------------------------------------------------

def test_renormalized_error(grid_1d):
    U = gaussian_data(grid_1d).with_values(gaussian_data(grid_1d).values, 4.0)
    w = gaussian_data(grid_1d, width=0.3, center=(1.0,)).values
    u1 = U.with_values(U.values + w)
    u2 = U.with_values(U.values + 2 * w)
    assert renormalized_error(U, U, 2) == 0.0
    assert renormalized_error(u1, U, 1) == pytest.approx(lp_norm(u1.with_values(w), 1))
    # t^(1/4) at t = 4
    assert renormalized_error(u1, U, 2) == pytest.approx(math.sqrt(2) * lp_norm(u1.with_values(w), 2))
    assert renormalized_error(u2, U, 2) == pytest.approx(2 * renormalized_error(u1, U, 2), rel=1e-12)
    with pytest.raises(ValueError):
        renormalized_error(u1.with_values(u1.values, 3.0), U, 2)


@pytest.mark.parametrize('p', [1.5, 2, 3])
def test_interpolation_inequality(grid_1d, p):
    u = gaussian_data(grid_1d)
    U = gaussian_data(grid_1d, width=1.5, center=(0.5,))
    assert interpolation_bound(u, U, p).holds


# --- kernel-operator limits ------------------------------------------------

@pytest.fixture
def limit_grid():
    return Grid(1, 2048, 10.0)


def test_diffusion_limit_is_second_order(limit_grid, gaussian_J):
    psi = Field(limit_grid, np.exp(-limit_grid.axis ** 2))
    report = kernel_limit_check_J(gaussian_J, psi, 0.5, (4, 8, 16))
    assert report.decreasing
    assert 1.7 <= report.order <= 2.3


def test_diffusion_limit_of_constant(limit_grid, gaussian_J):
    report = kernel_limit_check_J(gaussian_J, constant_field(limit_grid, 1.0), 0.5, (4, 8))
    assert max(report.errors) < 1e-10


def test_convection_limit_with_drift(limit_grid, shifted_G):
    psi = Field(limit_grid, np.exp(-limit_grid.axis ** 2))
    B = first_moment_B(discretize(shifted_G, limit_grid))
    report = kernel_limit_check_G(shifted_G, psi, B, (4, 8, 16))
    assert report.passed, (report.errors, report.bounds)
    assert report.errors[0] > report.errors[-1]


def test_convection_limit_without_drift(limit_grid, bump):
    psi = Field(limit_grid, np.exp(-limit_grid.axis ** 2))
    assert kernel_limit_check_G(bump, psi, 0.0, (4, 8, 16)).passed


def test_convection_limit_fails_for_wrong_drift(limit_grid, shifted_G):
    psi = Field(limit_grid, np.exp(-limit_grid.axis ** 2))
    assert not kernel_limit_check_G(shifted_G, psi, -0.5, (4, 8, 16)).passed


# --- tails ----------------------------------------------------------------

def _tail_record(t, tail):
    record = TrajectoryRecord(tail_radii=(10.0,))
    record.times.append(t)
    record.tails[10.0].append(tail)
    return record


@pytest.fixture
def narrow_datum(grid_1d):
    return gaussian_data(grid_1d, width=0.5)


def test_tail_bound_uniform_constant(narrow_datum):
    records = {1.0: _tail_record(1.0, 0.010), 2.0: _tail_record(1.0, 0.012)}
    report = tail_bound_check(records, narrow_datum, (5.0,), (1.0,))
    growth = 1 / 25 + 1 / 5
    assert report.C == pytest.approx(0.012 / growth, rel=1e-12)
    assert report.spread == pytest.approx(1.2, rel=1e-12)
    assert report.passed
    assert len(report.samples) == 2


def test_tail_bound_flags_nonuniform_constant(narrow_datum):
    records = {1.0: _tail_record(1.0, 0.010), 2.0: _tail_record(1.0, 0.020)}
    report = tail_bound_check(records, {1.0: narrow_datum, 2.0: narrow_datum}, (5.0,), (1.0,))
    assert not report.passed
    assert [s[0] for s in report.violations] == [2.0]


def test_tail_bound_needs_the_record_time(narrow_datum):
    with pytest.raises(InsufficientSamples):
        tail_bound_check({1.0: _tail_record(1.0, 0.01)}, narrow_datum, (5.0,), (2.0,))


# --- time derivative and time integrals ------------------------------------

def test_dudt_hminus1_is_below_l2(grid_1d, model):
    u = gaussian_data(grid_1d)
    du = rhs(u, model, discretize_model(model, grid_1d))
    assert 0 < dudt_hminus1(u, du) <= lp_norm(du, 2)
    assert dudt_hminus1(u, constant_field(grid_1d, 0.0)) == 0.0


def test_time_integral_left_rectangles():
    times = np.linspace(1.0, 2.0, 11)
    assert time_integral(times, np.ones(11), (1.0, 2.0)) == pytest.approx(1.0)
    assert time_integral(times, times, (1.0, 2.0)) == pytest.approx(1.45)
    with pytest.raises(InsufficientSamples):
        time_integral(times, times, (0.5, 2.0))
    with pytest.raises(ValueError):
        time_integral(times, times, (2.0, 1.0))


def test_energy_report():
    record = TrajectoryRecord()
    record.times.extend(np.linspace(1.0, 2.0, 11).tolist())
    record.energy.extend([2.0] * 11)
    record.dudt_hminus1.extend([3.0] * 11)
    report = energy_report(record, (1.0, 2.0), lam=4.0)
    assert report.value == pytest.approx(2.0)
    assert report.lam == 4.0
    assert len(report.per_time) == 11
    assert energy_report(record, (1.0, 2.0), 4.0, 'dudt_hm1').value == pytest.approx(9.0)
    with pytest.raises(ValueError):
        energy_report(record, (1.0, 2.0), 4.0, 'mass')
