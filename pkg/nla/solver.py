"""
Explicit time integration of the rescaled nonlocal convection-diffusion equation

    u_t = lam^2 (J_lam * u - u) + lam^(d(1-q)+2) (G_lam * N(u) - N(u)),  N(u) = |u|^(q-1) u

and of its local limit U_t = A lap U - B . grad N(U).

Both operators in the nonlocal equation are bounded, so explicit Euler or RK4
with the step below is stable and no implicit machinery is needed:

    dt = safety / (2 lam^2 + 2 q lam^(d(1-q)+2) |u|_inf^(q-1))
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft

from . import diagnostics
from .grid import CSV_FORMAT, Field, Grid, h_minus1_norm, mass
from .kernels import DiscreteKernel, KernelSpec, convolve_direct_values, convolve_values, discretize

logger = logging.getLogger(__name__)

SCHEMES = ('euler', 'rk4')

# Auto dt is re-evaluated when |u|_inf has moved this much since the last evaluation
DT_REEVALUATION = 0.1

# Slack factor in the post-step sup-norm check
STABILITY_SLACK = 10.0


class StabilityViolation(Exception):
    """Raised when a step grows the sup norm faster than the operator bound allows."""
    pass


class DomainOverflow(Exception):
    """Raised when mass outside |x| > L/2 exceeds the tail tolerance."""
    pass


@dataclass(frozen=True)
class ModelParams:
    q: float
    lam: float
    J: KernelSpec
    G: KernelSpec
    dim: int

    def __post_init__(self):
        if not self.q > 1:
            raise ValueError(f"q must be > 1, got {self.q}")
        if self.lam < 1:
            raise ValueError(f"lambda must be >= 1, got {self.lam}")
        if self.J.dim != self.dim or self.G.dim != self.dim:
            raise ValueError(f"kernels must be {self.dim}-d")

    @property
    def diffusion_prefactor(self) -> float:
        return self.lam ** 2

    @property
    def convection_prefactor(self) -> float:
        return self.lam ** (self.dim * (1 - self.q) + 2)

    @property
    def is_critical(self) -> bool:
        return abs(self.q - (1 + 1 / self.dim)) < 1e-12

    def at_scale(self, lam: float) -> 'ModelParams':
        return ModelParams(self.q, lam, self.J, self.G, self.dim)


@dataclass(frozen=True)
class ModelKernels:
    J: DiscreteKernel
    G: DiscreteKernel


def discretize_model(params: ModelParams, grid: Grid) -> ModelKernels:
    return ModelKernels(discretize(params.J, grid, params.lam), discretize(params.G, grid, params.lam))


@dataclass(frozen=True)
class StepperConfig:
    """Time stepping controls. dt=None selects the auto step."""
    scheme: str = 'rk4'
    dt: float | None = None
    safety: float = 0.5
    t_end: float = 1.0
    record_times: tuple = ()
    tail_tol: float = 1e-6
    lp_exponents: tuple = ()
    tail_radii: tuple = ()

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.dt is not None and not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not 0 < self.safety <= 1:
            raise ValueError(f"safety must lie in (0, 1], got {self.safety}")
        if self.t_end < 0:
            raise ValueError(f"t_end must be >= 0, got {self.t_end}")
        times = tuple(float(t) for t in self.record_times) or (float(self.t_end),)
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"record_times must be strictly ascending: {times}")
        if times[0] < 0 or times[-1] > self.t_end * (1 + 1e-12):
            raise ValueError(f"record_times must lie in [0, t_end={self.t_end}]")
        object.__setattr__(self, 'record_times', times)


# --- recording ------------------------------------------------------------

def _label(value: float) -> str:
    return f"{value:g}"


@dataclass
class TrajectoryRecord:
    """Time series of monitored quantities; every list has the length of `times`."""
    lp_exponents: tuple = ()
    tail_radii: tuple = ()
    times: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    linf: list = field(default_factory=list)
    minimum: list = field(default_factory=list)
    lp_norms: dict = field(default_factory=dict)
    energy: list = field(default_factory=list)
    tails: dict = field(default_factory=dict)
    dudt_hminus1: list = field(default_factory=list)

    def __post_init__(self):
        exponents = [1.0, 2.0] + [float(p) for p in self.lp_exponents if float(p) not in (1.0, 2.0)]
        self.lp_exponents = tuple(exponents)
        self.tail_radii = tuple(float(R) for R in self.tail_radii)
        for p in self.lp_exponents:
            self.lp_norms.setdefault(p, [])
        for R in self.tail_radii:
            self.tails.setdefault(R, [])

    def __len__(self):
        return len(self.times)

    def append(self, u: Field, energy: float, dudt_hminus1: float):
        values = u.values
        h_d = u.grid.cell_volume
        self.times.append(float(u.time_tag))
        self.mass.append(mass(u))
        self.linf.append(float(np.max(np.abs(values))))
        self.minimum.append(float(np.min(values)))
        for p in self.lp_exponents:
            self.lp_norms[p].append((h_d * float(np.sum(np.abs(values) ** p))) ** (1.0 / p))
        radius = u.grid.radius
        for R in self.tail_radii:
            self.tails[R].append(h_d * float(np.sum(np.abs(values[radius > R]))))
        self.energy.append(float(energy))
        self.dudt_hminus1.append(float(dudt_hminus1))

    def norm_series(self, p: float) -> np.ndarray:
        if p == math.inf:
            return np.array(self.linf)
        return np.array(self.lp_norms[float(p)])

    def columns(self) -> dict:
        columns = {'t': self.times, 'mass': self.mass, 'linf': self.linf, 'min': self.minimum,
                   'l1': self.lp_norms[1.0], 'l2': self.lp_norms[2.0]}
        for p in self.lp_exponents[2:]:
            columns[f'lp_{_label(p)}'] = self.lp_norms[p]
        columns['energy'] = self.energy
        for R in self.tail_radii:
            columns[f'tail_{_label(R)}'] = self.tails[R]
        columns['dudt_hm1'] = self.dudt_hminus1
        return columns

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        columns = self.columns()
        data = np.column_stack([np.asarray(v, dtype=float) for v in columns.values()]) \
            if self.times else np.empty((0, len(columns)))
        np.savetxt(path, data, delimiter=',', header=','.join(columns),
                   comments='', fmt=CSV_FORMAT)
        return path


# --- right-hand side and steps ---------------------------------------------

def _power(values: np.ndarray, q: float) -> np.ndarray:
    """|u|^(q-1) u, with 0 mapped to 0."""
    return np.abs(values) ** (q - 1) * values


def _rhs_values(values, params: ModelParams, kernels: ModelKernels, method='fft'):
    conv = convolve_values if method == 'fft' else convolve_direct_values
    nonlinear = _power(values, params.q)
    return (params.diffusion_prefactor * (conv(kernels.J, values) - values)
            + params.convection_prefactor * (conv(kernels.G, nonlinear) - nonlinear))


def _check_kernels(grid: Grid, params: ModelParams, kernels: ModelKernels):
    for name, k in (('J', kernels.J), ('G', kernels.G)):
        if k.grid != grid:
            raise ValueError(f"{name} is discretized on {k.grid}, field lives on {grid}")
        if not math.isclose(k.scale, params.lam, rel_tol=1e-12):
            raise ValueError(f"{name} is discretized at scale {k.scale}, model has lambda {params.lam}")


def rhs(u: Field, params: ModelParams, kernels: ModelKernels, method: str = 'fft') -> Field:
    _check_kernels(u.grid, params, kernels)
    if method not in ('fft', 'direct'):
        raise ValueError(f"unknown convolution method {method!r}")
    return u.with_values(_rhs_values(u.values, params, kernels, method))


def operator_bound(params: ModelParams, linf: float) -> float:
    """Sup-norm Lipschitz bound of the right-hand side at amplitude linf."""
    return (2.0 * params.diffusion_prefactor
            + 2.0 * params.q * params.convection_prefactor * linf ** (params.q - 1))


def auto_dt(u: Field, params: ModelParams, safety: float = 0.5) -> float:
    return safety / operator_bound(params, float(np.max(np.abs(u.values))))


def _step_values(values, dt, params, kernels, scheme):
    if scheme == 'euler':
        return values + dt * _rhs_values(values, params, kernels)
    k1 = _rhs_values(values, params, kernels)
    k2 = _rhs_values(values + 0.5 * dt * k1, params, kernels)
    k3 = _rhs_values(values + 0.5 * dt * k2, params, kernels)
    k4 = _rhs_values(values + dt * k3, params, kernels)
    return values + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _checked_step(values, dt, params, kernels, scheme, t):
    before = float(np.max(np.abs(values)))
    new = _step_values(values, dt, params, kernels, scheme)
    after = float(np.max(np.abs(new))) if np.all(np.isfinite(new)) else math.inf
    limit = before * (1.0 + STABILITY_SLACK * dt * operator_bound(params, before))
    if after > limit:
        logger.error("Sup norm grew from %.6g to %.6g at t=%.6g (dt=%.3g)", before, after, t, dt)
        raise StabilityViolation(
            f"|u|_inf grew from {before:.6g} to {after:.6g} in one {scheme} step of "
            f"dt={dt:.3g} at t={t:.6g}; reduce dt"
        )
    return new


def step(u: Field, dt: float, params: ModelParams, kernels: ModelKernels, scheme: str = 'rk4') -> Field:
    """One explicit Euler or classical RK4 step."""
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    _check_kernels(u.grid, params, kernels)
    new = _checked_step(u.values, dt, params, kernels, scheme, u.time_tag)
    return u.with_values(new, u.time_tag + dt)


# --- trajectories ----------------------------------------------------------

class _TailMonitor:

    def __init__(self, grid: Grid, tol: float):
        self.outside = grid.radius > grid.half_width / 2
        self.cell_volume = grid.cell_volume
        self.half_width = grid.half_width
        self.tol = tol

    def check(self, values, t, context):
        tail = self.cell_volume * float(np.sum(np.abs(values[self.outside])))
        if not tail < self.tol:
            logger.error("Tail monitor tripped at t=%.6g: mass %.3g beyond |x| > %g (%s)",
                         t, tail, self.half_width / 2, context)
            raise DomainOverflow(
                f"{context}: mass {tail:.3g} beyond |x| > L/2 = {self.half_width / 2:g} "
                f"at t={t:.6g} exceeds tail_tol={self.tol:g}; enlarge the box"
            )


def _time_eps(t):
    return 1e-12 * max(1.0, abs(t))


def _integrate(u0: Field, stepper: StepperConfig, advance, choose_dt, observe, context):
    """Shared record-time loop: steps are shortened to land on every record time."""
    record = TrajectoryRecord(stepper.lp_exponents, stepper.tail_radii)
    monitor = _TailMonitor(u0.grid, stepper.tail_tol)
    values = np.array(u0.values)
    t = u0.time_tag
    for target in stepper.record_times:
        if target < t - _time_eps(t):
            raise ValueError(f"record time {target} precedes the initial time {t}")
        while t < target - _time_eps(target):
            dt = min(choose_dt(values), target - t)
            values = advance(values, dt, t)
            t += dt
            monitor.check(values, t, context)
        t = target
        observe(record, Field(u0.grid, values, t))
    if stepper.t_end > t + _time_eps(t):
        while t < stepper.t_end - _time_eps(stepper.t_end):
            dt = min(choose_dt(values), stepper.t_end - t)
            values = advance(values, dt, t)
            t += dt
            monitor.check(values, t, context)
        t = stepper.t_end
    return record, Field(u0.grid, values, t)


class _AutoStep:
    """Caches the auto dt until |u|_inf moves by more than DT_REEVALUATION."""

    def __init__(self, formula, context):
        self.formula = formula
        self.context = context
        self.reference = None
        self.dt = None

    def __call__(self, values):
        linf = float(np.max(np.abs(values)))
        if self.reference is None or abs(linf - self.reference) > DT_REEVALUATION * self.reference:
            self.reference = linf
            self.dt = self.formula(linf)
            logger.debug("%s: dt=%.4g at |u|_inf=%.6g", self.context, self.dt, linf)
        return self.dt


def evolve(u0: Field, params: ModelParams, stepper: StepperConfig,
           kernels: ModelKernels | None = None, observer=None) -> tuple:
    """Integrate from u0.time_tag to stepper.t_end, recording at stepper.record_times.

    observer, if given, is called with the Field at every record time.
    Returns (TrajectoryRecord, final Field).
    """
    if kernels is None:
        kernels = discretize_model(params, u0.grid)
    _check_kernels(u0.grid, params, kernels)
    context = f"q={params.q:g} lambda={params.lam:g} {stepper.scheme}"

    if stepper.dt is None:
        choose_dt = _AutoStep(lambda linf: stepper.safety / operator_bound(params, linf), context)
    else:
        choose_dt = lambda values: stepper.dt

    def advance(values, dt, t):
        return _checked_step(values, dt, params, kernels, stepper.scheme, t)

    def observe(record, u):
        energy = diagnostics.nonlocal_energy(u, kernels.J, params.lam)
        record.append(u, energy, h_minus1_norm(rhs(u, params, kernels)))
        if observer is not None:
            observer(u)

    logger.debug("Evolving %s on %s to t=%g", context, u0.grid, stepper.t_end)
    return _integrate(u0, stepper, advance, choose_dt, observe, context)


# --- local limit equation --------------------------------------------------

def _axis_symbols(grid: Grid):
    """i*kappa per axis with the Nyquist mode removed, shaped to broadcast."""
    n = grid.n_per_axis
    symbols = []
    for axis in range(grid.dim):
        k = 2.0 * np.pi * fft.fftfreq(n, d=grid.spacing)
        k[n // 2] = 0.0
        shape = [1] * grid.dim
        shape[axis] = n
        symbols.append(1j * k.reshape(shape))
    return symbols


def solve_local_reference(u0: Field, A: float, B, q: float, stepper: StepperConfig) -> tuple:
    """Integrate U_t = A lap U - B . grad(|U|^(q-1) U) spectrally.

    Integrating-factor RK4: diffusion is applied exactly in Fourier space,
    convection explicitly under the step h * safety / (q |B| |U|_inf^(q-1)).
    With B = 0 a single exact step covers each record interval.
    """
    grid = u0.grid
    if not A > 0:
        raise ValueError(f"A must be positive, got {A}")
    if not q > 1:
        raise ValueError(f"q must be > 1, got {q}")
    B = np.atleast_1d(np.asarray(B, dtype=float))
    if B.shape != (grid.dim,):
        raise ValueError(f"B needs {grid.dim} components, got {B}")

    symbols = _axis_symbols(grid)
    drift = sum(b * s for b, s in zip(B, symbols)) * np.ones(grid.shape)
    decay_rate = -A * grid.kappa_squared
    speed = float(np.sum(np.abs(B)))
    context = f"local q={q:g} A={A:g} B={B.tolist()}"

    def nonlinear(spectrum):
        values = np.real(fft.ifftn(spectrum))
        return -drift * fft.fftn(_power(values, q))

    def advance(values, dt, t):
        v = fft.fftn(values)
        half = np.exp(decay_rate * dt / 2)
        full = half * half
        k1 = nonlinear(v)
        k2 = nonlinear(half * (v + dt / 2 * k1))
        k3 = nonlinear(half * v + dt / 2 * k2)
        k4 = nonlinear(full * v + dt * half * k3)
        v = full * v + dt / 6 * (full * k1 + 2 * half * (k2 + k3) + k4)
        new = np.real(fft.ifftn(v))
        if not np.all(np.isfinite(new)):
            logger.error("Local reference solve diverged at t=%.6g (dt=%.3g)", t, dt)
            raise StabilityViolation(f"{context}: non-finite values at t={t:.6g}, dt={dt:.3g}")
        return new

    if stepper.dt is not None:
        choose_dt = lambda values: stepper.dt
    elif speed == 0:
        choose_dt = lambda values: math.inf
    else:
        def choose_dt(values):
            linf = float(np.max(np.abs(values)))
            if linf == 0:
                return math.inf
            return stepper.safety * grid.spacing / (q * speed * linf ** (q - 1))

    def observe(record, u):
        gradients = [np.real(fft.ifftn(s * fft.fftn(u.values))) for s in symbols]
        energy = 2.0 * A * grid.cell_volume * float(sum(np.sum(g * g) for g in gradients))
        spectrum = fft.fftn(u.values)
        local_rhs = np.real(fft.ifftn(decay_rate * spectrum)) + np.real(fft.ifftn(nonlinear(spectrum)))
        record.append(u, energy, h_minus1_norm(u.with_values(local_rhs)))

    return _integrate(u0, stepper, advance, choose_dt, observe, context)


# --- initial data ----------------------------------------------------------

def _normalized(grid: Grid, values: np.ndarray, total: float) -> Field:
    discrete = grid.cell_volume * float(np.sum(values))
    if not discrete > 0:
        raise ValueError("initial datum has no mass on the grid")
    return Field(grid, values * (total / discrete))


def gaussian_data(grid: Grid, mass: float = 1.0, width: float = 1.0, center=None) -> Field:
    """Gaussian of standard deviation `width`, discrete mass exactly `mass`."""
    if not width > 0:
        raise ValueError(f"width must be positive, got {width}")
    center = np.zeros(grid.dim) if center is None else np.atleast_1d(np.asarray(center, dtype=float))
    r2 = sum((c - c0) ** 2 for c, c0 in zip(grid.coordinates, center))
    return _normalized(grid, np.exp(-r2 / (2.0 * width ** 2)), mass)


def two_bump_data(grid: Grid, mass: float = 1.0, radius: float = 1.0, scale: float = 1.0) -> Field:
    """0.7 bump(x - 2) + 0.3 bump(x + 3) along the first axis, sampled as scale^d phi(scale x)."""
    def bump_at(z0):
        shift = (z0 / scale,) + (0.0,) * (grid.dim - 1)
        return KernelSpec('shifted_bump', grid.dim, radius / scale, shift=shift).evaluate(grid.coordinates)

    return _normalized(grid, 0.7 * bump_at(2.0) + 0.3 * bump_at(-3.0), mass)


def band_limited_field(grid: Grid, seed: int, band: int | None = None, decay: float = 1.0) -> Field:
    """Random real field whose modes stop below `band` (default n/8), amplitude ~ |k|^-decay.

    Scaled to unit sup norm.
    """
    n = grid.n_per_axis
    band = n // 8 if band is None else band
    if not 0 < band < n // 2:
        raise ValueError(f"band must lie in (0, {n // 2}), got {band}")
    rng = np.random.default_rng(seed)
    indices = [np.abs(fft.fftfreq(n, d=1.0 / n))] * (grid.dim - 1) + [np.arange(n // 2 + 1)]
    mesh = np.meshgrid(*indices, indexing='ij')
    index_radius = np.sqrt(sum(m * m for m in mesh))
    shape = index_radius.shape
    coefficients = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    coefficients *= (index_radius < band) / (1.0 + index_radius) ** decay
    coefficients[(0,) * grid.dim] = 0.0
    values = fft.irfftn(coefficients, s=grid.shape)
    return Field(grid, values / np.max(np.abs(values)))


def geometric_record_times(t_min: float, t_end: float) -> tuple:
    """t_k = t_min 2^(k/2) up to t_end, with t_end appended when not hit."""
    if not 0 < t_min <= t_end:
        raise ValueError(f"need 0 < t_min <= t_end, got {t_min}, {t_end}")
    times = []
    k = 0
    while t_min * 2 ** (k / 2) <= t_end * (1 + 1e-12):
        times.append(t_min * 2 ** (k / 2))
        k += 1
    if times[-1] < t_end * (1 - 1e-12):
        times.append(float(t_end))
    return tuple(times)
