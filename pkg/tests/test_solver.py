"""Right-hand side, explicit steps, trajectories and the local reference solver."""
import math

import numpy as np
import pytest

from nla.grid import Grid, constant_field, lp_norm, mass
from nla.kernels import KernelSpec
from nla.solver import (
    DomainOverflow, ModelParams, StabilityViolation, StepperConfig, TrajectoryRecord, auto_dt,
    band_limited_field, discretize_model, evolve, gaussian_data, geometric_record_times, rhs,
    solve_local_reference, step, two_bump_data,
)


@pytest.fixture
def grid():
    return Grid(1, 256, 20.0)


@pytest.fixture
def kernels(model, grid):
    return discretize_model(model, grid)


# --- parameters -----------------------------------------------------------

def test_model_prefactors(gaussian_J, shifted_G):
    params = ModelParams(q=3.0, lam=2.0, J=gaussian_J, G=shifted_G, dim=1)
    assert params.diffusion_prefactor == 4.0
    # lam^(d(1-q)+2) = 2^0
    assert params.convection_prefactor == 1.0
    assert not params.is_critical
    assert params.at_scale(1.0).is_critical is False
    assert ModelParams(2.0, 1.0, gaussian_J, shifted_G, 1).is_critical


@pytest.mark.parametrize('q,lam', [(1.0, 1.0), (2.0, 0.5)])
def test_model_rejects_bad_parameters(gaussian_J, shifted_G, q, lam):
    with pytest.raises(ValueError):
        ModelParams(q=q, lam=lam, J=gaussian_J, G=shifted_G, dim=1)


@pytest.mark.parametrize('kwargs', [
    {'scheme': 'leapfrog'},
    {'dt': 0.0},
    {'safety': 1.5},
    {'t_end': 1.0, 'record_times': (0.5, 0.25)},
    {'t_end': 1.0, 'record_times': (0.5, 2.0)},
])
def test_stepper_config_validation(kwargs):
    with pytest.raises(ValueError):
        StepperConfig(**kwargs)


def test_record_times_default_to_t_end():
    assert StepperConfig(t_end=3.0).record_times == (3.0,)


# --- right-hand side ------------------------------------------------------

def test_rhs_vanishes_on_zero_and_constants(grid, model, kernels):
    assert np.all(rhs(constant_field(grid, 0.0), model, kernels).values == 0.0)
    assert np.max(np.abs(rhs(constant_field(grid, 0.3), model, kernels).values)) < 1e-13


def test_rhs_is_mean_free(grid, model, kernels):
    u = gaussian_data(grid, mass=2.0)
    assert abs(mass(rhs(u, model, kernels))) < 1e-14 * mass(u)


def test_rhs_fft_matches_direct(small_grid, model):
    kernels = discretize_model(model, small_grid)
    u = gaussian_data(small_grid, mass=1.5, width=0.8)
    fast = rhs(u, model, kernels).values
    slow = rhs(u, model, kernels, method='direct').values
    np.testing.assert_allclose(fast, slow, rtol=0, atol=1e-12 * np.max(u.values))


def test_rhs_rejects_mismatched_kernels(grid, model, kernels):
    u = gaussian_data(Grid(1, 128, 20.0))
    with pytest.raises(ValueError):
        rhs(u, model, kernels)
    with pytest.raises(ValueError):
        rhs(gaussian_data(grid), model.at_scale(2.0), kernels)


def test_auto_dt_formula(grid, model):
    u = gaussian_data(grid)
    linf = lp_norm(u, math.inf)
    assert auto_dt(u, model, 0.5) == pytest.approx(0.5 / (2.0 + 4.0 * linf))


# --- steps ----------------------------------------------------------------

@pytest.mark.parametrize('scheme', ['euler', 'rk4'])
def test_step_keeps_constants_and_advances_time(grid, model, kernels, scheme):
    u = constant_field(grid, 0.25, time_tag=1.0)
    v = step(u, 0.1, model, kernels, scheme)
    assert v.time_tag == pytest.approx(1.1)
    np.testing.assert_allclose(v.values, 0.25, atol=1e-13)


def test_step_preconditions(grid, model, kernels):
    u = gaussian_data(grid)
    with pytest.raises(ValueError):
        step(u, 0.0, model, kernels)
    with pytest.raises(ValueError):
        step(u, 0.1, model, kernels, scheme='midpoint')


def test_oversized_rk4_step_is_caught(grid, model, kernels):
    with pytest.raises(StabilityViolation):
        step(gaussian_data(grid), 200.0, model, kernels, 'rk4')


# --- trajectories ----------------------------------------------------------

def test_evolve_to_time_zero_returns_initial_datum(grid, model):
    u0 = gaussian_data(grid)
    record, final = evolve(u0, model, StepperConfig(t_end=0.0))
    assert np.array_equal(final.values, u0.values)
    assert record.times == [0.0]


def test_evolve_conserves_mass_and_contracts():
    grid = Grid(1, 512, 40.0)
    J = KernelSpec('gaussian', 1, 1.0)
    G = KernelSpec('shifted_bump', 1, 1.0, shift=(0.5,))
    params = ModelParams(2.0, 1.0, J, G, 1)
    u0 = gaussian_data(grid)
    stepper = StepperConfig(t_end=10.0, record_times=geometric_record_times(0.5, 10.0))
    record, final = evolve(u0, params, stepper)

    assert record.times == list(stepper.record_times)
    masses = np.array(record.mass)
    assert np.max(np.abs(masses - mass(u0))) <= 1e-10 * mass(u0)
    for series in (record.linf, record.lp_norms[1.0], record.lp_norms[2.0]):
        assert np.all(np.diff(series) <= 1e-10 * series[0])
    assert final.values.min() >= -1e-12
    assert final.time_tag == 10.0


def test_observer_sees_every_record_time(grid, model):
    seen = []
    stepper = StepperConfig(dt=0.1, t_end=1.0, record_times=(0.25, 0.5, 1.0))
    record, _ = evolve(gaussian_data(grid), model, stepper, observer=lambda u: seen.append(u.time_tag))
    assert seen == [0.25, 0.5, 1.0]
    assert record.times == seen


def test_tail_monitor_stops_runs_that_outgrow_the_box(model):
    grid = Grid(1, 256, 10.0)
    with pytest.raises(DomainOverflow):
        evolve(gaussian_data(grid), model, StepperConfig(t_end=50.0))


def _order(scheme, dts, params, u0):
    finals = [evolve(u0, params, StepperConfig(scheme=scheme, dt=dt, t_end=1.0))[1].values for dt in dts]
    coarse = np.max(np.abs(finals[0] - finals[1]))
    fine = np.max(np.abs(finals[1] - finals[2]))
    return math.log2(coarse / fine)


def test_euler_is_first_order(grid, model):
    order = _order('euler', (0.05, 0.025, 0.0125), model, gaussian_data(grid))
    assert 0.9 <= order <= 1.1


def test_rk4_is_fourth_order(grid, model):
    order = _order('rk4', (0.1, 0.05, 0.025), model, gaussian_data(grid))
    assert 3.7 <= order <= 4.3


def test_trajectory_csv_columns(tmp_path, grid, model):
    stepper = StepperConfig(t_end=0.5, record_times=(0.0, 0.5), lp_exponents=(4,), tail_radii=(5,))
    record, _ = evolve(gaussian_data(grid), model, stepper)
    path = record.write_csv(tmp_path / 'trajectory.csv')
    lines = path.read_text().splitlines()
    assert lines[0] == 't,mass,linf,min,l1,l2,lp_4,energy,tail_5,dudt_hm1'
    assert len(lines) == 3
    assert len(record) == 2


def test_empty_record_writes_header_only(tmp_path):
    path = TrajectoryRecord().write_csv(tmp_path / 'empty.csv')
    assert path.read_text().strip() == 't,mass,linf,min,l1,l2,energy,dudt_hm1'


# --- local limit equation --------------------------------------------------

def test_local_heat_solve_is_exact():
    grid = Grid(1, 1024, 40.0)
    record, final = solve_local_reference(gaussian_data(grid), 0.5, 0.0, 2.0, StepperConfig(t_end=2.0))
    # variance 1 + 2 A t = 3
    expected = gaussian_data(grid, width=math.sqrt(3.0))
    np.testing.assert_allclose(final.values, expected.values, atol=1e-10)
    assert record.times == [2.0]


def test_local_burgers_solve_conserves_mass():
    grid = Grid(1, 1024, 40.0)
    u0 = gaussian_data(grid)
    stepper = StepperConfig(t_end=2.0, record_times=(1.0, 2.0))
    record, final = solve_local_reference(u0, 0.5, 1.0, 2.0, stepper)
    assert mass(final) == pytest.approx(mass(u0), rel=1e-12)
    # the drift moves mass to the right
    assert float(np.sum(grid.axis * final.values)) > 0
    assert record.linf[1] < record.linf[0]


def test_local_solve_preconditions(grid):
    u0 = gaussian_data(grid)
    with pytest.raises(ValueError):
        solve_local_reference(u0, 0.0, 1.0, 2.0, StepperConfig())
    with pytest.raises(ValueError):
        solve_local_reference(u0, 1.0, (1.0, 0.0), 2.0, StepperConfig())


# --- initial data ----------------------------------------------------------

def test_geometric_record_times():
    assert geometric_record_times(1.0, 8.0) == pytest.approx(
        (1.0, math.sqrt(2), 2.0, 2 * math.sqrt(2), 4.0, 4 * math.sqrt(2), 8.0))
    assert geometric_record_times(1.0, 5.0)[-2:] == pytest.approx((4.0, 5.0))
    with pytest.raises(ValueError):
        geometric_record_times(0.0, 1.0)


def test_initial_data_carry_exact_mass(grid_1d, grid_2d):
    assert mass(gaussian_data(grid_1d, mass=3.0, width=0.5)) == pytest.approx(3.0, rel=1e-14)
    assert mass(two_bump_data(grid_1d, mass=0.5)) == pytest.approx(0.5, rel=1e-14)
    assert mass(gaussian_data(grid_2d, center=(1.0, -1.0))) == pytest.approx(1.0, rel=1e-14)


def test_two_bump_data_is_asymmetric(grid_1d):
    u = two_bump_data(grid_1d)
    right = mass(u.with_values(np.where(grid_1d.axis > 0, u.values, 0.0)))
    assert right == pytest.approx(0.7, rel=1e-4)


def test_band_limited_field_is_reproducible(grid_1d):
    a = band_limited_field(grid_1d, seed=7)
    b = band_limited_field(grid_1d, seed=7)
    c = band_limited_field(grid_1d, seed=8)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert lp_norm(a, math.inf) == pytest.approx(1.0)
    assert abs(mass(a)) < 1e-12
    with pytest.raises(ValueError):
        band_limited_field(grid_1d, seed=7, band=256)
