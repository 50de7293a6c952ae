"""
Self-similar asymptotic profiles U(t, x) = t^(-d/2) f_m(x / sqrt(t)).

kind = heat:              the heat kernel of diffusivity A and mass m.
kind = burgers_source:    the source solution of U_t = A U_xx - B (U^2)_x
                          (d = 1, q = 2) in closed form via Cole-Hopf.
kind = reference_numeric: the same source solution computed by the spectral
                          local solver, used to check the closed form.
"""
import json
import logging
import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import ndimage, special

from .grid import Field, Grid, derivative_values, laplacian_values, lp_norm, write_field_csv
from .solver import StepperConfig, gaussian_data, solve_local_reference

logger = logging.getLogger(__name__)

KINDS = ('heat', 'burgers_source', 'reference_numeric')

# The numeric source solution is built once at t = 1 on this grid and
# carried to other times by self-similarity
REFERENCE_POINTS = 8192
REFERENCE_HALF_WIDTH = 20.0
REFERENCE_T0 = 1e-3
REFERENCE_PASSES = 3

CLOSED_FORM_TOL = 1e-4


def critical_exponent(dim: int) -> float:
    return 1.0 + 1.0 / dim


@dataclass(frozen=True)
class ProfileSpec:
    m: float
    A: float
    B: tuple
    q: float
    dim: int = 1
    kind: str = 'heat'
    alpha: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"profile kind must be one of {KINDS}, got {self.kind!r}")
        if not self.A > 0:
            raise ValueError(f"A must be positive, got {self.A}")
        B = tuple(float(b) for b in np.atleast_1d(self.B))
        if len(B) != self.dim:
            raise ValueError(f"B needs {self.dim} components, got {B}")
        object.__setattr__(self, 'B', B)
        alpha = 1 if abs(self.q - critical_exponent(self.dim)) < 1e-12 else 0
        if self.alpha is not None and self.alpha != alpha:
            raise ValueError(f"alpha={self.alpha} is inconsistent with q={self.q}, d={self.dim}")
        object.__setattr__(self, 'alpha', alpha)
        if self.kind != 'heat' and (self.dim != 1 or self.q != 2):
            raise ValueError(
                f"{self.kind} profiles exist for d = 1, q = 2 only (got d = {self.dim}, q = {self.q})"
            )


def _check_time(t: float):
    if not t > 0:
        raise ValueError(f"profile time must be positive, got {t}")


def heat_profile(spec: ProfileSpec, t: float, grid: Grid) -> Field:
    """m (4 pi A t)^(-d/2) exp(-|x|^2 / (4 A t))."""
    if spec.kind != 'heat':
        raise ValueError(f"heat_profile needs kind 'heat', got {spec.kind!r}")
    _check_time(t)
    if grid.dim != spec.dim:
        raise ValueError(f"grid is {grid.dim}-d, profile is {spec.dim}-d")
    spread = 4.0 * spec.A * t
    values = spec.m * (math.pi * spread) ** (-grid.dim / 2) * np.exp(-grid.radius ** 2 / spread)
    return Field(grid, values, t)


def _closed_form(m: float, A: float, b: float, t: float, x: np.ndarray) -> np.ndarray:
    if b == 0:
        return m / math.sqrt(4.0 * math.pi * A * t) * np.exp(-x ** 2 / (4.0 * A * t))
    if m == 0:
        return np.zeros_like(x, dtype=float)
    if b * m < 0:
        # x -> -x carries the drift b to -b
        return _closed_form(m, A, -b, t, -x)
    xi = x / math.sqrt(4.0 * A * t)
    # c = 1/expm1(bm/A) enters as c e^(xi^2); log c stays finite for any bm/A
    ratio = b * m / A
    log_c = -ratio - math.log(-math.expm1(-ratio))
    with np.errstate(over='ignore'):
        denominator = np.exp(log_c + xi ** 2) + 0.5 * special.erfcx(xi)
    return math.sqrt(A / (math.pi * t)) / (2.0 * b * denominator)


@lru_cache(maxsize=16)
def _numeric_source_at_one(m: float, A: float, b: float, n_points: int, half_width: float,
                           t0: float, passes: int) -> Field:
    """Source solution at t = 1 from a moment-matched Gaussian at t0.

    The first pass starts from the heat kernel at t0. Later passes take mean and
    variance at t0 from the self-similar moment identities
    M1(t) = 2B sqrt(t) int f^2 and M2(t) = (2Am + 2B int x f^2) t,
    evaluated on the previous pass's profile f.
    """
    grid = Grid(1, n_points, half_width)
    x = grid.axis
    mean, variance = 0.0, 2.0 * A * t0
    stepper = StepperConfig(scheme='rk4', t_end=1.0, record_times=(1.0,), tail_tol=1e-6)
    profile = None
    for i in range(passes):
        start = gaussian_data(grid, m, math.sqrt(variance), center=mean)
        _, profile = solve_local_reference(start.with_values(start.values, t0), A, (b,), 2.0, stepper)
        if i == passes - 1:
            break
        squared = profile.values ** 2
        s1 = grid.cell_volume * float(np.sum(squared))
        s2 = grid.cell_volume * float(np.sum(x * squared))
        mean = 2.0 * b * s1 * math.sqrt(t0) / m
        variance = (2.0 * A * m + 2.0 * b * s2) * t0 / m - mean ** 2
        logger.debug("Reference pass %d: matched mean %.6g, variance %.6g at t0=%g",
                     i + 1, mean, variance, t0)
        if not variance > 0:
            raise ValueError(f"moment matching produced variance {variance:.3g}; refine the reference grid")
    return profile


def _self_similar(f: Field, t: float, grid: Grid) -> Field:
    """t^(-1/2) f(x / sqrt(t)) from the t = 1 profile f, by cubic interpolation."""
    source = f.grid
    if t == 1 and grid == source:
        return Field(grid, f.values, t)
    index = (grid.axis / math.sqrt(t) + source.half_width) / source.spacing
    sampled = ndimage.map_coordinates(f.values, index[None, :], order=3, mode='grid-constant', cval=0.0)
    return Field(grid, sampled / math.sqrt(t), t)


def reference_numeric_profile(spec: ProfileSpec, t: float, grid: Grid,
                              n_points: int = REFERENCE_POINTS,
                              half_width: float = REFERENCE_HALF_WIDTH,
                              t0: float = REFERENCE_T0,
                              passes: int = REFERENCE_PASSES) -> Field:
    _check_time(t)
    f = _numeric_source_at_one(spec.m, spec.A, spec.B[0], n_points, half_width, t0, passes)
    return _self_similar(f, t, grid)


def burgers_source_profile(spec: ProfileSpec, t: float, grid: Grid) -> Field:
    """Source solution of mass m of U_t = A U_xx - B (U^2)_x.

    With c = 1 / (exp(Bm/A) - 1) and xi = x / sqrt(4At),
    U = sqrt(A / (pi t)) exp(-xi^2) / (2B (c + erfc(xi) / 2)),
    which is the heat kernel when B = 0.
    """
    _check_time(t)
    if spec.kind == 'heat':
        raise ValueError("burgers_source_profile needs kind 'burgers_source' or 'reference_numeric'")
    if grid.dim != 1:
        raise ValueError("the source solution is one-dimensional")
    if spec.kind == 'reference_numeric':
        return reference_numeric_profile(spec, t, grid)
    return Field(grid, _closed_form(spec.m, spec.A, spec.B[0], t, grid.axis), t)


def evaluate_profile(spec: ProfileSpec, t: float, grid: Grid) -> Field:
    if spec.kind == 'heat':
        return heat_profile(spec, t, grid)
    return burgers_source_profile(spec, t, grid)


@dataclass(frozen=True)
class ClosedFormCheck:
    l1_distance: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.l1_distance <= self.tol


def verify_closed_form(spec: ProfileSpec, t: float, grid: Grid, tol: float = CLOSED_FORM_TOL) -> ClosedFormCheck:
    """L1 distance between the Cole-Hopf profile and the numeric reference."""
    closed = burgers_source_profile(ProfileSpec(spec.m, spec.A, spec.B, spec.q, spec.dim, 'burgers_source'), t, grid)
    numeric = reference_numeric_profile(spec, t, grid)
    distance = lp_norm(closed.with_values(closed.values - numeric.values), 1)
    check = ClosedFormCheck(distance, tol)
    log = logger.info if check.passed else logger.warning
    log("Closed-form source profile vs numeric reference at t=%g: L1 distance %.3g (tol %.0e)",
        t, distance, tol)
    return check


def profile_residual(f: Field, spec: ProfileSpec) -> Field:
    """A lap f + x.grad(f)/2 + (d/2) f - alpha B.grad(|f|^(q-1) f)."""
    grid = f.grid
    values = f.values
    residual = spec.A * laplacian_values(values, grid) + grid.dim / 2 * values
    for axis, x in enumerate(grid.coordinates):
        residual = residual + 0.5 * x * derivative_values(values, grid, axis)
    if spec.alpha:
        nonlinear = np.abs(values) ** (spec.q - 1) * values
        for axis, b in enumerate(spec.B):
            residual = residual - b * derivative_values(nonlinear, grid, axis)
    return f.with_values(residual)


def export_profile(f: Field, spec: ProfileSpec, path) -> Path:
    """Field CSV plus a JSON sidecar holding the profile parameters."""
    path = write_field_csv(f, path)
    metadata = asdict(spec)
    metadata['B'] = list(spec.B)
    metadata['t'] = f.time_tag
    path.with_suffix('.json').write_text(json.dumps(metadata, indent=2) + '\n')
    return path
