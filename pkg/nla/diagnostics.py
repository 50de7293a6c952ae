"""
Evaluators for the functionals the long-time analysis bounds: nonlocal
energies, BBM-type compactness functionals, decay fits, kernel-operator
limits, renormalized errors and tail estimates.

All evaluators are pure functions of their inputs.
"""
import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy import stats

from .grid import Field, derivative_values, h_minus1_norm, laplacian_values, lp_norm, tail_mass
from .kernels import DiscreteKernel, KernelSpec, convolve_values, discretize, moment, reflect

if TYPE_CHECKING:
    from .solver import TrajectoryRecord

logger = logging.getLogger(__name__)

MIN_FIT_SAMPLES = 5

# Kernel-limit discretization floor is FLOOR_FACTOR * h^2 * |D^4 psi|_inf
FLOOR_FACTOR = 10.0


class InsufficientSamples(Exception):
    """Raised when a fit or time integral has too few record times in its window."""
    pass


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r_squared: float
    window: tuple
    samples: int = 0


@dataclass(frozen=True)
class EnergyReport:
    lam: float
    t_window: tuple
    value: float
    per_time: tuple


def _check_scale(k: DiscreteKernel, f: Field, lam: float):
    if k.grid != f.grid:
        raise ValueError(f"kernel grid {k.grid} does not match field grid {f.grid}")
    if not math.isclose(k.scale, lam, rel_tol=1e-12):
        raise ValueError(f"kernel is discretized at scale {k.scale}, asked for {lam}")


# --- nonlocal energies ----------------------------------------------------

def nonlocal_energy(u: Field, k: DiscreteKernel, lam: float) -> float:
    """lam^2 sum_ij J_lam(x_i - x_j)(u_i - u_j)^2 h^2d, as 2 lam^2 (|u|_2^2 - <u, J*u>)."""
    _check_scale(k, u, lam)
    values = u.values
    h_d = u.grid.cell_volume
    value = 2.0 * lam ** 2 * h_d * float(np.sum(values * values - values * convolve_values(k, values)))
    return max(value, 0.0)


def _pair_sum(values: np.ndarray, k: DiscreteKernel, p: float) -> float:
    """h^2d sum_m k_m sum_i |u_i - u_(i-m)|^p over the kernel's nonzero entries, fixed order."""
    axes = tuple(range(k.grid.dim))
    kernel = k.origin_first
    total = 0.0
    for offset in np.argwhere(kernel > 0):
        offset = tuple(int(i) for i in offset)
        difference = np.abs(values - np.roll(values, offset, axis=axes))
        total += kernel[offset] * float(np.sum(difference ** p))
    return k.grid.cell_volume ** 2 * total


def nonlocal_energy_direct(u: Field, k: DiscreteKernel, lam: float) -> float:
    """Same functional as nonlocal_energy by explicit double summation."""
    _check_scale(k, u, lam)
    return lam ** 2 * _pair_sum(u.values, k, 2.0)


def bbm_functional(f: Field, rho: DiscreteKernel, n: float, p: float) -> float:
    """n^p sum_ij rho_n(x_i - x_j)|f_i - f_j|^p h^2d.

    Summed over the support of rho for any p. With p = 2 a non-compact rho goes
    through the convolution identity instead.
    """
    if not p >= 1:
        raise ValueError(f"p must be >= 1, got {p}")
    _check_scale(rho, f, n)
    if not rho.source.compact:
        if p != 2:
            raise ValueError(f"{rho.source} is not compactly supported; only p = 2 is allowed")
        logger.warning("BBM functional with non-compact %s uses the p = 2 convolution identity",
                       rho.source)
        return nonlocal_energy(f, rho, n)
    return n ** p * _pair_sum(f.values, rho, p)


def gradient_power_integral(f: Field, p: float) -> float:
    grid = f.grid
    gradients = [derivative_values(f.values, grid, axis) for axis in range(grid.dim)]
    magnitude = np.sqrt(sum(g * g for g in gradients))
    return grid.cell_volume * float(np.sum(magnitude ** p))


@dataclass(frozen=True)
class DominationReport:
    p: float
    n_list: tuple
    functionals: tuple
    bounds: tuple
    ratios: tuple
    max_ratio: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_ratio <= 1.0 + self.tol


def dirichlet_domination_check(f: Field, rho: KernelSpec, n_list, p: float = 2.0,
                               tol: float = 1e-3) -> DominationReport:
    """bbm_functional(f, rho_n, n, p) <= (int rho |z|^p) int |grad f|^p for each n.

    int rho |z|^p is the moment of the same discrete rho_n, so both sides are
    quadratures on one grid. A vanishing bound counts as ratio 0.
    """
    gradient_integral = gradient_power_integral(f, p)
    functionals, bounds, ratios = [], [], []
    for n in n_list:
        rho_n = discretize(rho, f.grid, n)
        value = bbm_functional(f, rho_n, n, p)
        bound = moment(rho_n, p) * gradient_integral
        ratio = value / bound if bound > 0 else 0.0
        logger.debug("BBM n=%g p=%g: functional %.6g, bound %.6g, ratio %.6f", n, p, value, bound, ratio)
        functionals.append(value)
        bounds.append(bound)
        ratios.append(ratio)
    return DominationReport(p, tuple(n_list), tuple(functionals), tuple(bounds), tuple(ratios),
                            max(ratios, default=0.0), tol)


# --- decay and asymptotic errors -------------------------------------------

def _window_mask(times: np.ndarray, window: tuple) -> np.ndarray:
    t_lo, t_hi = window
    eps = 1e-12 * max(1.0, abs(t_hi))
    return (times >= t_lo - eps) & (times <= t_hi + eps)


def fit_power_law(times, values, window: tuple) -> FitResult:
    """Least-squares line through (log t, log value) for the samples inside window."""
    t_lo, t_hi = window
    if not 0 < t_lo < t_hi:
        raise ValueError(f"window must satisfy 0 < t_lo < t_hi, got {window}")
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = _window_mask(times, window)
    if mask.sum() < MIN_FIT_SAMPLES:
        raise InsufficientSamples(
            f"{mask.sum()} record times in [{t_lo:g}, {t_hi:g}], need {MIN_FIT_SAMPLES}"
        )
    if np.any(values[mask] <= 0):
        raise ValueError("power-law fit needs positive values")
    x = np.log(times[mask])
    y = np.log(values[mask])
    result = stats.linregress(x, y)
    residual = float(np.sum((y - (result.intercept + result.slope * x)) ** 2))
    spread = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 if spread == 0 else min(max(1.0 - residual / spread, 0.0), 1.0)
    return FitResult(float(result.slope), float(result.intercept), r_squared,
                     (t_lo, t_hi), int(mask.sum()))


def decay_fit(record: 'TrajectoryRecord', p: float, window: tuple) -> FitResult:
    return fit_power_law(record.times, record.norm_series(p), window)


def renormalized_error(u: Field, U: Field, p: float) -> float:
    """t^((d/2)(1 - 1/p)) |u(t) - U(t)|_p."""
    if u.grid != U.grid:
        raise ValueError("fields live on different grids")
    if not math.isclose(u.time_tag, U.time_tag, rel_tol=1e-12, abs_tol=1e-12):
        raise ValueError(f"time tags differ: {u.time_tag} vs {U.time_tag}")
    exponent = u.grid.dim / 2 * (1.0 if p == math.inf else 1.0 - 1.0 / p)
    return u.time_tag ** exponent * lp_norm(u.with_values(u.values - U.values), p)


@dataclass(frozen=True)
class InterpolationCheck:
    p: float
    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs * (1 + 1e-12) + 1e-300


def interpolation_bound(u: Field, U: Field, p: float) -> InterpolationCheck:
    """|u-U|_p against |u-U|_1^theta (|u|_2p + |U|_2p)^(1-theta), theta = 1/(2p-1)."""
    if not p >= 1:
        raise ValueError(f"p must be >= 1, got {p}")
    difference = u.with_values(u.values - U.values)
    theta = 1.0 / (2.0 * p - 1.0)
    rhs = lp_norm(difference, 1) ** theta * (lp_norm(u, 2 * p) + lp_norm(U, 2 * p)) ** (1 - theta)
    return InterpolationCheck(p, lp_norm(difference, p), rhs)


# --- kernel-operator limits ------------------------------------------------

def _fourth_derivative_sup(psi: Field) -> float:
    grid = psi.grid
    if grid.dim == 1:
        return float(np.max(np.abs(derivative_values(psi.values, grid, 0, 4))))
    sup = 0.0
    for i in range(5):
        partial = derivative_values(derivative_values(psi.values, grid, 0, i), grid, 1, 4 - i)
        sup = max(sup, float(np.max(np.abs(partial))))
    return sup


def _hessian_sup(psi: Field) -> float:
    """sup_x of the spectral norm of the Hessian."""
    grid = psi.grid
    if grid.dim == 1:
        return float(np.max(np.abs(derivative_values(psi.values, grid, 0, 2))))
    a = derivative_values(psi.values, grid, 0, 2)
    c = derivative_values(psi.values, grid, 1, 2)
    b = derivative_values(derivative_values(psi.values, grid, 0, 1), grid, 1, 1)
    return float(np.max(np.abs((a + c) / 2) + np.sqrt(((a - c) / 2) ** 2 + b * b)))


def discretization_floor(psi: Field) -> float:
    return FLOOR_FACTOR * psi.grid.spacing ** 2 * _fourth_derivative_sup(psi)


def _convergence_order(lams, errors) -> float:
    lams = np.asarray(lams, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(lams) < 2 or np.any(errors <= 0):
        return math.nan
    return -float(stats.linregress(np.log(lams), np.log(errors)).slope)


@dataclass(frozen=True)
class DiffusionLimitReport:
    lams: tuple
    errors: tuple
    order: float
    floor: float

    @property
    def decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.errors, self.errors[1:]))


def kernel_limit_check_J(spec: KernelSpec, psi: Field, A: float, lam_list) -> DiffusionLimitReport:
    """|lam^2 (J_lam*psi - psi) - A lap psi|_inf per lambda, and the fitted order in 1/lambda."""
    target = A * laplacian_values(psi.values, psi.grid)
    errors = []
    for lam in lam_list:
        k = discretize(spec, psi.grid, lam)
        approximation = lam ** 2 * (convolve_values(k, psi.values) - psi.values)
        errors.append(float(np.max(np.abs(approximation - target))))
        logger.debug("J limit lambda=%g: error %.6g", lam, errors[-1])
    return DiffusionLimitReport(tuple(lam_list), tuple(errors),
                                _convergence_order(lam_list, errors), discretization_floor(psi))


@dataclass(frozen=True)
class ConvectionLimitReport:
    lams: tuple
    errors: tuple
    bounds: tuple
    floor: float
    tol: float

    @property
    def holds(self) -> tuple:
        return tuple(e <= b for e, b in zip(self.errors, self.bounds))

    @property
    def passed(self) -> bool:
        return all(self.holds)


def kernel_limit_check_G(spec: KernelSpec, psi: Field, B, lam_list, tol: float = 0.1) -> ConvectionLimitReport:
    """|lam (G~_lam*psi - psi) - B.grad psi|_inf <= |D^2 psi|_inf (1 + tol) / lam + floor,
    with G~(z) = G(-z)."""
    grid = psi.grid
    B = np.atleast_1d(np.asarray(B, dtype=float))
    drift = sum(b * derivative_values(psi.values, grid, axis) for axis, b in enumerate(B))
    hessian = _hessian_sup(psi)
    floor = discretization_floor(psi)
    errors, bounds = [], []
    for lam in lam_list:
        reflected = reflect(discretize(spec, grid, lam))
        approximation = lam * (convolve_values(reflected, psi.values) - psi.values)
        errors.append(float(np.max(np.abs(approximation - drift))))
        bounds.append(hessian * (1 + tol) / lam + floor)
        logger.debug("G limit lambda=%g: error %.6g, bound %.6g", lam, errors[-1], bounds[-1])
    return ConvectionLimitReport(tuple(lam_list), tuple(errors), tuple(bounds), floor, tol)


# --- tails ----------------------------------------------------------------

@dataclass(frozen=True)
class TailBoundReport:
    C: float
    per_lambda: dict
    spread: float
    violations: tuple
    samples: tuple

    @property
    def passed(self) -> bool:
        return not self.violations


def tail_bound_check(records: dict, initial, R_list, t_list, spread_limit: float = 1.5) -> TailBoundReport:
    """Least C with tail(u_lam(t), 2R) <= tail(phi_lam, R) + C (t/R^2 + sqrt(t)/R).

    records maps lambda to a TrajectoryRecord holding tails at every 2R;
    initial is the datum per lambda (a mapping) or one Field shared by all.
    A sample is a violation when even spread_limit times the smallest
    per-lambda constant does not cover it.
    """
    samples = []
    per_lambda = {}
    for lam, record in records.items():
        phi = initial[lam] if isinstance(initial, dict) else initial
        times = np.asarray(record.times)
        needed = 0.0
        for t in t_list:
            index = np.flatnonzero(np.isclose(times, t, rtol=1e-9, atol=1e-12))
            if not len(index):
                raise InsufficientSamples(f"lambda={lam:g}: no record at t={t:g}")
            for R in R_list:
                tail = record.tails[float(2 * R)][index[0]]
                initial_tail = tail_mass(phi.with_values(np.abs(phi.values)), R)
                growth = t / R ** 2 + math.sqrt(t) / R
                constant = max(0.0, (tail - initial_tail) / growth)
                samples.append((lam, t, R, tail, initial_tail, growth, constant))
                needed = max(needed, constant)
        per_lambda[lam] = needed

    largest = max(per_lambda.values(), default=0.0)
    smallest = min(per_lambda.values(), default=0.0)
    if largest == 0:
        spread = 1.0
    elif smallest == 0:
        spread = math.inf
    else:
        spread = largest / smallest
    uniform = spread_limit * smallest
    violations = tuple(s for s in samples if s[3] > s[4] + uniform * s[5] * (1 + 1e-12))
    return TailBoundReport(largest, per_lambda, spread, violations, tuple(samples))


# --- time derivative and time integrals ------------------------------------

def dudt_hminus1(u: Field, rhs: Field) -> float:
    if u.grid != rhs.grid:
        raise ValueError("u and its time derivative live on different grids")
    return h_minus1_norm(rhs)


def time_integral(times, values, window: tuple) -> float:
    """Left-rectangle quadrature of sampled values over window."""
    t_lo, t_hi = window
    if not t_lo < t_hi:
        raise ValueError(f"window must satisfy t_lo < t_hi, got {window}")
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = _window_mask(times, window)
    selected = times[mask]
    if len(selected) < 2 or selected[0] > t_lo + 1e-9 * max(1, t_lo) or selected[-1] < t_hi - 1e-9 * t_hi:
        raise InsufficientSamples(f"record times do not cover [{t_lo:g}, {t_hi:g}]")
    widths = np.diff(selected)
    return float(np.sum(values[mask][:-1] * widths))


def energy_report(record: 'TrajectoryRecord', window: tuple, lam: float,
                  quantity: str = 'energy') -> EnergyReport:
    """Time-integrated nonlocal energy, or with quantity='dudt_hm1' the integral of |u_t|_H-1^2."""
    if quantity == 'energy':
        series = np.asarray(record.energy)
    elif quantity == 'dudt_hm1':
        series = np.asarray(record.dudt_hminus1) ** 2
    else:
        raise ValueError(f"unknown quantity {quantity!r}")
    value = time_integral(record.times, series, window)
    mask = _window_mask(np.asarray(record.times), window)
    per_time = tuple(zip(np.asarray(record.times)[mask].tolist(), series[mask].tolist()))
    return EnergyReport(lam, tuple(window), value, per_time)
