"""
Uniform periodic grids on [-L, L)^d, sampled fields and their quadrature.

R^d is replaced by a periodic box. Convolution on it is exact circular
convolution, and the rectangle rule used for every integral below is spectrally
accurate for smooth integrands that are negligible at the box edge. Whether the
box is large enough for a given run is checked at runtime by the solver's tail
monitor, not decided here.
"""
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import fft, ndimage

logger = logging.getLogger(__name__)

MIN_POINTS_PER_AXIS = 64

# Field snapshots are written at full double precision
CSV_FORMAT = '%.17g'


def _readonly(array):
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class Grid:
    """n_per_axis^dim points x_i = -L + i*h, h = 2L/n_per_axis, on each axis."""
    dim: int
    n_per_axis: int
    half_width: float

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        n = self.n_per_axis
        if n < MIN_POINTS_PER_AXIS or n & (n - 1):
            raise ValueError(f"n_per_axis must be a power of two >= {MIN_POINTS_PER_AXIS}, got {n}")
        if not self.half_width > 0:
            raise ValueError(f"half_width must be positive, got {self.half_width}")

    @property
    def spacing(self) -> float:
        # n is a power of two, so this division is exact
        return 2.0 * self.half_width / self.n_per_axis

    @property
    def shape(self) -> tuple:
        return (self.n_per_axis,) * self.dim

    @property
    def point_count(self) -> int:
        return self.n_per_axis ** self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dim

    @cached_property
    def axis(self) -> np.ndarray:
        return _readonly(-self.half_width + np.arange(self.n_per_axis) * self.spacing)

    @cached_property
    def coordinates(self) -> tuple:
        """One array per axis, each of shape `shape` (matrix indexing)."""
        if self.dim == 1:
            return (self.axis,)
        return tuple(_readonly(c) for c in np.meshgrid(self.axis, self.axis, indexing='ij'))

    @cached_property
    def radius(self) -> np.ndarray:
        return _readonly(np.sqrt(sum(c * c for c in self.coordinates)))

    @cached_property
    def wavenumbers(self) -> tuple:
        """Box frequencies kappa = pi*k/L per axis, shaped to broadcast against `shape`."""
        k = 2.0 * np.pi * fft.fftfreq(self.n_per_axis, d=self.spacing)
        if self.dim == 1:
            return (_readonly(k),)
        return (_readonly(k[:, None]), _readonly(k[None, :]))

    @cached_property
    def kappa_squared(self) -> np.ndarray:
        return _readonly(sum(k * k for k in self.wavenumbers) * np.ones(self.shape))


@dataclass(frozen=True, eq=False)
class Field:
    """Samples of a real function on a Grid, tagged with the time they represent."""
    grid: Grid
    values: np.ndarray
    time_tag: float = 0.0

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.size != self.grid.point_count:
            raise ValueError(
                f"field has {values.size} values, grid has {self.grid.point_count} points"
            )
        values = values.reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        if self.time_tag < 0:
            raise ValueError(f"time_tag must be >= 0, got {self.time_tag}")
        object.__setattr__(self, 'values', _readonly(values))

    def with_values(self, values, time_tag=None) -> 'Field':
        return Field(self.grid, values, self.time_tag if time_tag is None else time_tag)


def constant_field(grid: Grid, value: float, time_tag: float = 0.0) -> Field:
    return Field(grid, np.full(grid.shape, float(value)), time_tag)


# --- quadrature and norms -------------------------------------------------

def mass(f: Field) -> float:
    """Discrete integral h^d * sum(values)."""
    return f.grid.cell_volume * float(np.sum(f.values))


def lp_norm(f: Field, p: float) -> float:
    if p == math.inf:
        return float(np.max(np.abs(f.values)))
    if not p >= 1:
        raise ValueError(f"p must be >= 1 or inf, got {p}")
    total = f.grid.cell_volume * float(np.sum(np.abs(f.values) ** p))
    return total ** (1.0 / p)


def tail_mass(f: Field, R: float) -> float:
    """Mass of f restricted to {|x| > R}, |x| the Euclidean norm of the box coordinate."""
    if not 0 < R < f.grid.half_width:
        raise ValueError(f"tail radius must lie in (0, L={f.grid.half_width}), got {R}")
    outside = f.grid.radius > R
    return f.grid.cell_volume * float(np.sum(f.values[outside]))


def h_minus1_norm(f: Field) -> float:
    """(sum_k |f^(k)|^2 / (1 + |kappa_k|^2))^(1/2), Parseval-matched to lp_norm(f, 2)."""
    grid = f.grid
    coefficients = fft.fftn(f.values)
    weighted = np.sum(np.abs(coefficients) ** 2 / (1.0 + grid.kappa_squared))
    return math.sqrt(grid.cell_volume / grid.point_count * float(weighted))


# --- exact rescaling ------------------------------------------------------

def rescale_field(f: Field, lam: float, target: Grid) -> Field:
    """g(x) = lam^d f(lam x) on `target`, by periodic cubic spline interpolation of f.

    The time tag is divided by lam^2, so that rescaling u(lam^2 t) gives u_lam(t).
    """
    source = f.grid
    if lam < 1:
        raise ValueError(f"lambda must be >= 1, got {lam}")
    if target.dim != source.dim:
        raise ValueError(f"target grid is {target.dim}-d, field is {source.dim}-d")
    if lam * target.half_width > source.half_width * (1 + 1e-12):
        raise ValueError(
            f"lambda * target half-width ({lam * target.half_width}) exceeds the "
            f"source box ({source.half_width}); interpolation would leave the domain"
        )
    if lam == 1 and target == source:
        return Field(source, f.values, f.time_tag)

    index_coords = [(lam * c + source.half_width) / source.spacing for c in target.coordinates]
    sampled = ndimage.map_coordinates(
        f.values, np.array(index_coords), order=3, mode='grid-wrap',
    )
    return Field(target, lam ** source.dim * sampled, f.time_tag / lam ** 2)


# --- spectral calculus ----------------------------------------------------

def derivative_values(values: np.ndarray, grid: Grid, axis: int = 0, order: int = 1) -> np.ndarray:
    """order-th spectral derivative along `axis` of raw samples on `grid`."""
    n = grid.n_per_axis
    k = 2.0 * np.pi * fft.fftfreq(n, d=grid.spacing)
    if order % 2:
        # The Nyquist mode has no odd derivative on a real grid
        k[n // 2] = 0.0
    shape = [1] * grid.dim
    shape[axis] = n
    symbol = (1j * k.reshape(shape)) ** order
    return np.real(fft.ifftn(symbol * fft.fftn(values)))


def laplacian_values(values: np.ndarray, grid: Grid) -> np.ndarray:
    return np.real(fft.ifftn(-grid.kappa_squared * fft.fftn(values)))


def spectral_derivative(f: Field, axis: int = 0, order: int = 1) -> Field:
    return f.with_values(derivative_values(f.values, f.grid, axis, order))


def gradient(f: Field) -> tuple:
    return tuple(spectral_derivative(f, axis) for axis in range(f.grid.dim))


def laplacian(f: Field) -> Field:
    return f.with_values(laplacian_values(f.values, f.grid))


# --- CSV snapshots --------------------------------------------------------

def write_field_csv(f: Field, path) -> Path:
    """Header `x[,y],value`, coordinates ascending, 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = [c.ravel() for c in f.grid.coordinates] + [f.values.ravel()]
    header = ','.join(['x', 'y'][:f.grid.dim] + ['value'])
    np.savetxt(path, np.column_stack(columns), delimiter=',', header=header,
               comments='', fmt=CSV_FORMAT)
    return path


def read_field_csv(path, time_tag: float = 0.0) -> Field:
    path = Path(path)
    with open(path) as f:
        header = f.readline().strip().split(',')
    data = np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2)
    dim = len(header) - 1
    axis = np.unique(data[:, 0])
    grid = Grid(dim, len(axis), -float(axis[0]))
    return Field(grid, data[:, -1], time_tag)
