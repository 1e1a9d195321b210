"""Fourier representation of complex zero-mean fields on the torus.

Fields live on T^d (d = 1, 2, 3) with a given period per dimension and are
stored as complex amplitudes on the integer wavevector lattice
{k : |k_i| <= N/2}.  The mean mode (k = 0) is pinned to zero.  Nonlinear
terms are evaluated pseudo-spectrally on a 2x-oversampled collocation grid
with a 2/3-rule dealias mask, which makes the cubic term alias-free for
fields supported on the dealiased band.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TorusGrid",
    "SpectralField",
    "make_grid",
    "sobolev_norm",
    "lp_norm",
    "project",
    "cubic_term",
    "BlowUpError",
]


class BlowUpError(RuntimeError):
    """Raised when a field amplitude exceeds representable/guard limits."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True, eq=False)
class TorusGrid:
    """Wavevector lattice and collocation layout for T^d.

    The lattice is ordered by Laplacian eigenvalue, ties broken
    lexicographically by wavevector, with the mean mode (k = 0) first.
    All per-mode arrays (eigenvalues, masks) follow this ordering.
    Grids compare equal on their defining scalars.
    """

    dimension: int
    modes_per_dim: int
    period: float
    dealias_fraction: float
    wavevectors: np.ndarray = field(repr=False)     # (n_lattice, d) int
    eigenvalues: np.ndarray = field(repr=False)     # (n_lattice,) float
    dealias_mask: np.ndarray = field(repr=False)    # (n_lattice,) bool
    lambda_star: float
    collocation_per_dim: int

    def _signature(self):
        return (self.dimension, self.modes_per_dim, self.period,
                self.dealias_fraction)

    def __eq__(self, other):
        return isinstance(other, TorusGrid) and \
            self._signature() == other._signature()

    def __hash__(self):
        return hash(self._signature())

    @property
    def n_lattice(self) -> int:
        return self.wavevectors.shape[0]

    @property
    def n_modes(self) -> int:
        """Number of non-mean lattice modes."""
        return self.n_lattice - 1

    @property
    def cell_volume(self) -> float:
        """Quadrature weight of one collocation cell."""
        return (self.period / self.collocation_per_dim) ** self.dimension

    @property
    def volume(self) -> float:
        return self.period ** self.dimension

    def field_from_coeffs(self, coeffs) -> "SpectralField":
        return SpectralField(self, np.asarray(coeffs, dtype=complex))

    def zero_field(self) -> "SpectralField":
        return SpectralField(self, np.zeros(self.n_lattice, dtype=complex))

    def basis_field(self, position: int, amplitude=1.0) -> "SpectralField":
        """Normalized eigenfunction at the given lattice position (>= 1)."""
        coeffs = np.zeros(self.n_lattice, dtype=complex)
        coeffs[position] = amplitude / np.sqrt(self.volume)
        return SpectralField(self, coeffs)

    def mode_field(self, wavevector, amplitude=1.0) -> "SpectralField":
        """Field amplitude * exp(i k . x 2pi/period) for integer wavevector k."""
        k = np.atleast_1d(np.asarray(wavevector, dtype=int))
        idx = self.lattice_index(k)
        coeffs = np.zeros(self.n_lattice, dtype=complex)
        coeffs[idx] = amplitude
        return SpectralField(self, coeffs)

    def lattice_index(self, wavevector) -> int:
        k = np.atleast_1d(np.asarray(wavevector, dtype=int))
        hits = np.nonzero((self.wavevectors == k).all(axis=1))[0]
        if hits.size == 0:
            raise ValueError(f"wavevector {tuple(k)} outside lattice")
        return int(hits[0])

    def random_field(self, rng, norm=None, band_limited=True) -> "SpectralField":
        """Random zero-mean field with Gaussian coefficients.

        Coefficient magnitudes decay like (1 + lambda_k)^(-1) so draws stay
        in H^1.  With ``band_limited`` the field is supported on the
        dealiased band.
        """
        n = self.n_lattice
        coeffs = (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        coeffs /= 1.0 + self.eigenvalues
        coeffs[0] = 0.0
        if band_limited:
            coeffs = np.where(self.dealias_mask, coeffs, 0.0)
        out = SpectralField(self, coeffs)
        if norm is not None:
            cur = sobolev_norm(out, 0)
            if cur > 0:
                out = SpectralField(self, coeffs * (norm / cur))
        return out


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Complex zero-mean field as coefficients on the grid's lattice order."""

    grid: TorusGrid
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != (self.grid.n_lattice,):
            raise ValueError(
                f"coefficient vector has shape {c.shape}, "
                f"expected ({self.grid.n_lattice},)"
            )
        if not np.all(np.isfinite(c)):
            raise BlowUpError("non-finite spectral coefficient")
        if c[0] != 0:
            c = c.copy()
            c[0] = 0.0
        object.__setattr__(self, "coeffs", c)

    def __add__(self, other):
        self._check_same_grid(other)
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check_same_grid(other)
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return SpectralField(self.grid, self.coeffs * scalar)

    __rmul__ = __mul__

    def _check_same_grid(self, other):
        if other.grid is not self.grid and other.grid != self.grid:
            raise ValueError("fields live on different grids")


def make_grid(dimension: int, modes_per_dim: int, period: float = 2 * np.pi,
              dealias_fraction: float = 2.0 / 3.0) -> TorusGrid:
    """Build a torus grid with the wavevector lattice {|k_i| <= N/2}."""
    if dimension not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {dimension}")
    if modes_per_dim % 2 != 0 or modes_per_dim < 4:
        raise ValueError(
            f"modes_per_dim must be even and >= 4, got {modes_per_dim}")
    if not (period > 0):
        raise ValueError(f"period must be positive, got {period}")
    if not (0 < dealias_fraction <= 1):
        raise ValueError(
            f"dealias_fraction must lie in (0, 1], got {dealias_fraction}")

    half = modes_per_dim // 2
    axes = [range(-half, half + 1)] * dimension
    lattice = np.array(list(itertools.product(*axes)), dtype=int)
    ksq = (lattice ** 2).sum(axis=1)
    # eigenvalue-then-lexicographic order; k = 0 sorts first automatically
    lex = np.lexsort(lattice[:, ::-1].T)
    order = lex[np.argsort(ksq[lex], kind="stable")]
    lattice = lattice[order]

    base = (2 * np.pi / period) ** 2
    eigenvalues = base * (lattice ** 2).sum(axis=1).astype(float)
    kmax = np.floor(dealias_fraction * half)
    dealias = (np.abs(lattice) <= kmax).all(axis=1)
    return TorusGrid(
        dimension=dimension,
        modes_per_dim=modes_per_dim,
        period=float(period),
        dealias_fraction=float(dealias_fraction),
        wavevectors=lattice,
        eigenvalues=eigenvalues,
        dealias_mask=dealias,
        lambda_star=float(base),
        collocation_per_dim=2 * modes_per_dim,
    )


# -- norms -------------------------------------------------------------------

def sobolev_norm_sq_coeffs(grid: TorusGrid, coeffs, m: int):
    """||u||_m^2 for raw coefficient arrays (supports leading batch axes)."""
    w = grid.eigenvalues ** m if m > 0 else np.ones(grid.n_lattice)
    return grid.volume * ((np.abs(coeffs) ** 2) * w).sum(axis=-1)


def sobolev_norm(field: SpectralField, m: int = 0) -> float:
    """Sobolev norm ||u||_m = <(-Delta)^m u, u>^(1/2); m = 0 is L^2."""
    if m not in (0, 1, 2, 3):
        raise ValueError(f"m must be in {{0, 1, 2, 3}}, got {m}")
    return float(np.sqrt(sobolev_norm_sq_coeffs(field.grid, field.coeffs, m)))


def lp_norm(field: SpectralField, p: float) -> float:
    """Collocation-quadrature L^p norm on the oversampled grid."""
    if p not in (2, 4, 6):
        raise ValueError(f"p must be in {{2, 4, 6}}, got {p}")
    values = to_physical(field.grid, field.coeffs)
    total = (np.abs(values) ** p).sum() * field.grid.cell_volume
    return float(total ** (1.0 / p))


# -- projections and nonlinearity --------------------------------------------

def project(field: SpectralField, n: int) -> SpectralField:
    """Galerkin projection onto the n lowest-eigenvalue (non-mean) modes."""
    if not (1 <= n <= field.grid.n_lattice):
        raise ValueError(
            f"n must lie in [1, {field.grid.n_lattice}], got {n}")
    coeffs = field.coeffs.copy()
    coeffs[n + 1:] = 0.0
    return SpectralField(field.grid, coeffs)


def galerkin_mask(grid: TorusGrid, n: int):
    """Boolean mask keeping the mean slot plus the first n ordered modes."""
    mask = np.zeros(grid.n_lattice, dtype=bool)
    mask[: n + 1] = True
    return mask


def _fft_embed_indices(grid: TorusGrid):
    m = grid.collocation_per_dim
    return tuple((grid.wavevectors[:, a] % m) for a in range(grid.dimension))


_EMBED_CACHE: dict = {}


def _embed(grid: TorusGrid):
    key = (grid.dimension, grid.modes_per_dim, grid.collocation_per_dim)
    if key not in _EMBED_CACHE:
        _EMBED_CACHE[key] = _fft_embed_indices(grid)
    return _EMBED_CACHE[key]


def to_physical(grid: TorusGrid, coeffs):
    """Evaluate coefficient arrays on the collocation grid.

    Supports a leading batch axis; returns values of shape
    batch + (M,) * d with M = collocation_per_dim.
    """
    coeffs = np.asarray(coeffs, dtype=complex)
    m = grid.collocation_per_dim
    batch = coeffs.shape[:-1]
    shape = batch + (m,) * grid.dimension
    spec = np.zeros(shape, dtype=complex)
    idx = _embed(grid)
    spec[(...,) + idx] = coeffs
    if grid.dimension == 1:
        return np.fft.ifft(spec, axis=-1) * m
    axes = tuple(range(len(batch), len(shape)))
    return np.fft.ifftn(spec, axes=axes) * (m ** grid.dimension)


def from_physical(grid: TorusGrid, values):
    """Project collocation values back onto the lattice coefficients."""
    values = np.asarray(values, dtype=complex)
    m = grid.collocation_per_dim
    if grid.dimension == 1:
        spec = np.fft.fft(values, axis=-1) / m
    else:
        nb = values.ndim - grid.dimension
        axes = tuple(range(nb, values.ndim))
        spec = np.fft.fftn(values, axes=axes) / (m ** grid.dimension)
    idx = _embed(grid)
    return spec[(...,) + idx]


def cubic_term_coeffs(grid: TorusGrid, coeffs):
    """Dealiased |u|^2 u for raw coefficient arrays (batch-friendly)."""
    coeffs = np.asarray(coeffs, dtype=complex)
    masked = np.where(grid.dealias_mask, coeffs, 0.0)
    values = to_physical(grid, masked)
    with np.errstate(over="raise", invalid="raise"):
        try:
            cubed = (values.real ** 2 + values.imag ** 2) * values
        except FloatingPointError as exc:
            raise BlowUpError("overflow in cubic term") from exc
    out = from_physical(grid, cubed)
    out = np.where(grid.dealias_mask, out, 0.0)
    out[..., 0] = 0.0
    return out


def cubic_term(field: SpectralField) -> SpectralField:
    """Spectral coefficients of |u|^2 u (dealiased, zero-mean)."""
    return SpectralField(field.grid, cubic_term_coeffs(field.grid, field.coeffs))


def inner_product_coeffs(grid: TorusGrid, a, b):
    """Real L^2 inner product <a, b> = Re int a conj(b)."""
    return grid.volume * np.real(a * np.conj(b)).sum(axis=-1)


def inner_product(u: SpectralField, v: SpectralField) -> float:
    u._check_same_grid(v)
    return float(inner_product_coeffs(u.grid, u.coeffs, v.coeffs))
