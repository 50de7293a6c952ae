"""
Convolution kernels: analytic families, their mass-one discretizations at a
scale lambda, moments, and circular convolution on the periodic grid.

Config strings name a kernel as `family:param[:param]`:

    gaussian:1.0            sigma = 1
    bump:1.0                C exp(-1/(1 - |z/r|^2)) on |z| < r, r = 1
    shifted_bump:1.0:0.5    the same bump translated by z0 = (0.5, 0, ...)
    table:kernels/j.csv     two-column CSV (z, value); radial profile in 2-d

Discrete kernels are renormalized after sampling so that h^d * sum(values) is
exactly one. That makes J*u - u mean-free to roundoff, and mass conservation
of the solver machine-exact.
"""
import logging
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np
from django.conf import settings
from scipy import fft, integrate

from .grid import Field, Grid

logger = logging.getLogger(__name__)

FAMILIES = ('gaussian', 'bump', 'shifted_bump', 'table')

# A kernel's effective support must span at least this many grid spacings
MIN_SUPPORT_POINTS = 4

# Gaussian effective support, in standard deviations either side of the centre
GAUSSIAN_SUPPORT_SIGMAS = 4.0

# Moment threshold below which a kernel counts as even
SYMMETRY_TOL = 1e-10


class UnderresolvedKernel(Exception):
    """Raised when a kernel at scale lambda is narrower than the grid can carry."""
    pass


@lru_cache(maxsize=None)
def _bump_integral(dim: int) -> float:
    """Integral of exp(-1/(1-|s|^2)) over the unit ball of R^dim."""
    def profile(s):
        return math.exp(-1.0 / (1.0 - s * s)) if s < 1 else 0.0

    if dim == 1:
        value, _ = integrate.quad(profile, -1.0, 1.0)
    else:
        value, _ = integrate.quad(lambda s: 2.0 * math.pi * s * profile(s), 0.0, 1.0)
    return value


def _bump(radius_over_r: np.ndarray) -> np.ndarray:
    s2 = radius_over_r ** 2
    out = np.zeros_like(s2)
    inside = s2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s2[inside]))
    return out


@dataclass(frozen=True)
class KernelSpec:
    """An analytic mass-one kernel on R^dim."""
    family: str
    dim: int
    width: float = 1.0
    shift: tuple = ()
    table_z: tuple = ()
    table_values: tuple = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if self.dim not in (1, 2):
            raise ValueError(f"kernel dim must be 1 or 2, got {self.dim}")
        if self.family == 'table':
            if len(self.table_z) < 2 or len(self.table_z) != len(self.table_values):
                raise ValueError("table kernel needs at least two (z, value) samples")
            if min(self.table_values) < 0 or not max(self.table_values) > 0:
                raise ValueError("table kernel values must be nonnegative and not all zero")
        elif not self.width > 0:
            raise ValueError(f"kernel width must be positive, got {self.width}")
        if self.family == 'shifted_bump' and len(self.shift) != self.dim:
            raise ValueError(f"shift needs {self.dim} components, got {self.shift}")

    @property
    def compact(self) -> bool:
        return self.family != 'gaussian'

    def support_diameter(self) -> float:
        """Per-axis extent of the effective support at scale 1."""
        if self.family == 'gaussian':
            return 2.0 * GAUSSIAN_SUPPORT_SIGMAS * self.width
        if self.family in ('bump', 'shifted_bump'):
            return 2.0 * self.width
        # The interpolant is positive up to the samples bracketing the nonzero values
        z = np.asarray(self.table_z)
        positive = np.flatnonzero(np.asarray(self.table_values) > 0)
        lo = max(int(positive.min()) - 1, 0)
        hi = min(int(positive.max()) + 1, len(z) - 1)
        if self.dim == 2:
            return 2.0 * float(z[hi])
        return float(z[hi] - z[lo])

    @cached_property
    def _table_normalization(self) -> float:
        z = np.asarray(self.table_z, dtype=float)
        v = np.asarray(self.table_values, dtype=float)
        if self.dim == 1:
            return float(integrate.trapezoid(v, z))
        return float(integrate.trapezoid(2.0 * np.pi * z * v, z))

    def evaluate(self, points) -> np.ndarray:
        """Density at the points given as one coordinate array per axis."""
        points = [np.asarray(p, dtype=float) for p in points]
        if self.family == 'shifted_bump':
            points = [p - z0 for p, z0 in zip(points, self.shift)]
        radius = np.sqrt(sum(p * p for p in points))

        if self.family == 'gaussian':
            sigma = self.width
            return (2.0 * np.pi * sigma ** 2) ** (-self.dim / 2) * np.exp(-radius ** 2 / (2.0 * sigma ** 2))
        if self.family in ('bump', 'shifted_bump'):
            r = self.width
            return _bump(radius / r) / (r ** self.dim * _bump_integral(self.dim))

        argument = points[0] if self.dim == 1 else radius
        values = np.interp(argument, self.table_z, self.table_values, left=0.0, right=0.0)
        return values / self._table_normalization

    def scaled(self, lam: float) -> 'KernelSpec':
        """The KernelSpec of lam^d K(lam z), so that scaled(lam) at scale 1 is K at scale lam."""
        if self.family == 'table':
            return KernelSpec('table', self.dim,
                              table_z=tuple(z / lam for z in self.table_z),
                              table_values=tuple(v * lam ** self.dim for v in self.table_values))
        return KernelSpec(self.family, self.dim, self.width / lam,
                          shift=tuple(z / lam for z in self.shift))

    def __str__(self):
        if self.family == 'shifted_bump':
            return f"shifted_bump:{self.width}:{','.join(str(z) for z in self.shift)}"
        if self.family == 'table':
            return f"table[{len(self.table_z)} samples]"
        return f"{self.family}:{self.width}"


def load_table_kernel(path, dim: int) -> KernelSpec:
    """Read a two-column (z, value) CSV; a non-numeric first line is taken as a header."""
    path = Path(path)
    with open(path) as f:
        first = f.readline().split(',')
    try:
        [float(x) for x in first]
        skip = 0
    except ValueError:
        skip = 1
    data = np.loadtxt(path, delimiter=',', comments='#', skiprows=skip, ndmin=2)
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns (z, value), found {data.shape[1]}")
    order = np.argsort(data[:, 0])
    return KernelSpec('table', dim, table_z=tuple(data[order, 0]),
                      table_values=tuple(data[order, 1]))


def parse_kernel_spec(text: str, dim: int, base_dir=None) -> KernelSpec:
    """Parse `family:param[:param]` as written in config files."""
    family, _, rest = text.strip().partition(':')
    family = family.strip()
    params = [p.strip() for p in rest.split(':')] if rest else []

    if family == 'table':
        if len(params) != 1 or not params[0]:
            raise ValueError(f"table kernel needs a CSV path: {text!r}")
        path = Path(params[0])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return load_table_kernel(path, dim)

    try:
        numbers = [float(p) for p in params[:1]]
    except ValueError:
        raise ValueError(f"kernel width is not a number: {text!r}")
    if family in ('gaussian', 'bump'):
        if len(params) != 1:
            raise ValueError(f"{family} takes exactly one parameter: {text!r}")
        return KernelSpec(family, dim, numbers[0])
    if family == 'shifted_bump':
        if len(params) != 2:
            raise ValueError(f"shifted_bump takes a radius and a shift: {text!r}")
        try:
            shift = [float(z) for z in params[1].split(',')]
        except ValueError:
            raise ValueError(f"shift is not a number list: {text!r}")
        shift = (shift + [0.0] * dim)[:dim]
        return KernelSpec(family, dim, numbers[0], shift=tuple(shift))
    raise ValueError(f"unknown kernel family {family!r} in {text!r}")


@dataclass(frozen=True, eq=False)
class DiscreteKernel:
    """A nonnegative kernel sampled on a grid with exact discrete mass one.

    values follow the grid layout, so the origin sits at index n/2 per axis.
    """
    grid: Grid
    values: np.ndarray
    scale: float
    source: KernelSpec
    reflected: bool = False

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(self.grid.shape)
        if np.any(values < 0):
            raise ValueError("kernel values must be nonnegative")
        values.flags.writeable = False
        object.__setattr__(self, 'values', values)

    @cached_property
    def origin_first(self) -> np.ndarray:
        """values rolled so that displacement zero is index 0."""
        return fft.ifftshift(self.values)

    @cached_property
    def transform(self) -> np.ndarray:
        """Fourier multiplier of u -> k*u (includes the quadrature weight)."""
        return self.grid.cell_volume * fft.rfftn(self.origin_first)

    @property
    def mass(self) -> float:
        return self.grid.cell_volume * float(np.sum(self.values))


def discretize(spec: KernelSpec, grid: Grid, lam: float = 1.0) -> DiscreteKernel:
    """values_i = lam^d spec(lam x_i), renormalized to discrete mass one."""
    if lam < 1:
        raise ValueError(f"kernel scale must be >= 1, got {lam}")
    if spec.dim != grid.dim:
        raise ValueError(f"kernel is {spec.dim}-d, grid is {grid.dim}-d")

    diameter = spec.support_diameter() / lam
    if diameter < MIN_SUPPORT_POINTS * grid.spacing:
        raise UnderresolvedKernel(
            f"{spec} at scale {lam} spans {diameter / grid.spacing:.2f} grid spacings "
            f"(h = {grid.spacing:.4g}); need at least {MIN_SUPPORT_POINTS}"
        )

    values = lam ** grid.dim * spec.evaluate([lam * c for c in grid.coordinates])
    total = grid.cell_volume * float(np.sum(values))
    if not total > 0:
        raise UnderresolvedKernel(f"{spec} at scale {lam} has no mass on the grid")
    return DiscreteKernel(grid, values / total, lam, spec)


def reflect(k: DiscreteKernel) -> DiscreteKernel:
    """The kernel z -> k(-z). On the grid, index i maps to (n - i) mod n per axis."""
    axes = tuple(range(k.grid.dim))
    values = np.roll(np.flip(k.values), (1,) * k.grid.dim, axis=axes)
    return DiscreteKernel(k.grid, values, k.scale, k.source, reflected=not k.reflected)


# --- moments --------------------------------------------------------------

@dataclass(frozen=True)
class SymmetryReport:
    is_even: bool
    odd_moment_max: float
    cross_moment_max: float
    compact_support: bool


def moment(k: DiscreteKernel, power: float) -> float:
    """scale^power * h^d * sum(k |x|^power): the moment of the unscaled kernel."""
    raw = k.grid.cell_volume * float(np.sum(k.values * k.grid.radius ** power))
    return k.scale ** power * raw


def _first_moments(k: DiscreteKernel) -> np.ndarray:
    return np.array([k.grid.cell_volume * float(np.sum(k.values * c)) for c in k.grid.coordinates])


def check_symmetry(k: DiscreteKernel) -> SymmetryReport:
    """First moments and off-diagonal second moments; even iff all below SYMMETRY_TOL."""
    odd = float(np.max(np.abs(_first_moments(k))))
    cross = 0.0
    if k.grid.dim == 2:
        x, y = k.grid.coordinates
        cross = abs(k.grid.cell_volume * float(np.sum(k.values * x * y)))
    return SymmetryReport(
        is_even=odd < SYMMETRY_TOL and cross < SYMMETRY_TOL,
        odd_moment_max=odd,
        cross_moment_max=cross,
        compact_support=k.source.compact,
    )


def second_moment_A(k: DiscreteKernel) -> float:
    """A = 1/2 * integral J(z)|z|^2 dz, for a radially symmetric kernel."""
    report = check_symmetry(k)
    if not report.is_even:
        raise ValueError(
            f"A is defined for symmetric kernels; {k.source} has odd moment "
            f"{report.odd_moment_max:.3g}, cross moment {report.cross_moment_max:.3g}"
        )
    return 0.5 * moment(k, 2)


def first_moment_B(k: DiscreteKernel) -> np.ndarray:
    """B_j = integral G(z) z_j dz, scale-free."""
    return k.scale * _first_moments(k)


# --- convolution ----------------------------------------------------------

def _check_grids(k: DiscreteKernel, f: Field):
    if k.grid != f.grid:
        raise ValueError(f"kernel grid {k.grid} does not match field grid {f.grid}")


def convolve_values(k: DiscreteKernel, values: np.ndarray) -> np.ndarray:
    """Spectral circular convolution of raw samples on k.grid."""
    return fft.irfftn(k.transform * fft.rfftn(values), s=k.grid.shape)


def convolve_direct_values(k: DiscreteKernel, values: np.ndarray) -> np.ndarray:
    """Direct sum over the kernel's nonzero entries, in a fixed order."""
    axes = tuple(range(k.grid.dim))
    kernel = k.origin_first
    result = np.zeros(k.grid.shape)
    for offset in np.argwhere(kernel > 0):
        offset = tuple(int(i) for i in offset)
        result += kernel[offset] * np.roll(values, offset, axis=axes)
    return k.grid.cell_volume * result


def convolve(k: DiscreteKernel, f: Field, method: str = 'auto') -> Field:
    """Circular convolution (k*f)(x_i) = h^d sum_j k(x_i - x_j) f(x_j)."""
    _check_grids(k, f)
    if method == 'auto':
        threshold = getattr(settings, 'NLA_DIRECT_CONVOLUTION_MAX_N', 256)
        method = 'direct' if k.grid.n_per_axis < threshold else 'fft'
    if method == 'fft':
        return f.with_values(convolve_values(k, f.values))
    if method == 'direct':
        return f.with_values(convolve_direct_values(k, f.values))
    raise ValueError(f"unknown convolution method {method!r}")


def convolve_direct(k: DiscreteKernel, f: Field) -> Field:
    return convolve(k, f, method='direct')


def nonlocal_operator(k: DiscreteKernel, f: Field, lam: float) -> Field:
    """lam^2 (k*f - f), the rescaled nonlocal diffusion."""
    if not math.isclose(k.scale, lam, rel_tol=1e-12):
        raise ValueError(f"kernel is discretized at scale {k.scale}, operator asked for {lam}")
    return f.with_values(lam ** 2 * (convolve(k, f).values - f.values))
