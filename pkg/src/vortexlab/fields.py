"""Periodic grids, scalar/vector/tensor fields, spectral transforms and norms.

Conventions used throughout the package:

* the computational domain is the centered square ``[-L/2, L/2)^2`` sampled on
  an ``n x n`` uniform grid (node-centered, spacing ``dx = L/n``);
* the forward transform is the unnormalized FFT and the inverse carries the
  ``1/n^2`` factor (numpy's default), so Parseval reads
  ``||f||_2 = (L/n^2) * ||fhat||_2`` with the midpoint quadrature on the left;
* wavenumbers are ``2*pi/L * m`` for integer ``m`` in FFT layout;
* grid integrals use the midpoint rule ``sum(f) * dx**2``, which is exact for
  trigonometric polynomials below the Nyquist band.

Fields are immutable values: operations return new instances and never write
to a caller's array.  A field may lazily cache its spectrum; the cache is not
observable through the public API.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np


class FieldError(ValueError):
    """Raised for invalid grid/field construction or mismatched operands."""


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid2D:
    """Uniform periodic grid on ``[-L/2, L/2)^2`` with ``n`` nodes per axis.

    Derived arrays (coordinates, wavenumbers, |k|^2, the 2/3 dealiasing mask)
    are computed once at construction and shared read-only.
    """

    L: float
    n: int

    def __post_init__(self):
        if not (self.L > 0) or not math.isfinite(self.L):
            raise FieldError(f"grid length must be positive and finite, got L={self.L}")
        n = self.n
        if n < 16 or (n & (n - 1)) != 0:
            raise FieldError(f"grid size must be a power of two >= 16, got n={n}")
        x1 = -0.5 * self.L + self.dx * np.arange(self.n)
        k1 = 2.0 * np.pi / self.L * np.fft.fftfreq(self.n, d=1.0 / self.n)
        kx, ky = np.meshgrid(k1, k1, indexing="ij")
        k_sq = kx**2 + ky**2
        cut = (2.0 / 3.0) * (np.pi * self.n / self.L)  # 2/3 of Nyquist
        mask = (np.abs(kx) < cut) & (np.abs(ky) < cut)
        for name, arr in (("_x1", x1), ("_k1", k1), ("_kx", kx), ("_ky", ky),
                          ("_k_sq", k_sq), ("_dealias", mask)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dx(self) -> float:
        return self.L / self.n

    @property
    def cell_area(self) -> float:
        return self.dx * self.dx

    @property
    def x1(self) -> np.ndarray:
        """1-D node coordinates (shared by both axes)."""
        return self._x1

    @property
    def k1(self) -> np.ndarray:
        """1-D wavenumbers in FFT layout."""
        return self._k1

    @property
    def kx(self) -> np.ndarray:
        return self._kx

    @property
    def ky(self) -> np.ndarray:
        return self._ky

    @property
    def k_sq(self) -> np.ndarray:
        return self._k_sq

    @property
    def dealias_mask(self) -> np.ndarray:
        """Boolean 2/3-rule mask (True on retained modes)."""
        return self._dealias

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinate arrays ``(X, Y)``, each of shape ``(n, n)``."""
        return np.meshgrid(self._x1, self._x1, indexing="ij")

    def __repr__(self):  # compact; the arrays are noise
        return f"Grid2D(L={self.L}, n={self.n})"


def make_grid(L: float, n: int) -> Grid2D:
    """Validated constructor for :class:`Grid2D`."""
    return Grid2D(float(L), int(n))


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


def _check_values(grid: Grid2D, values: np.ndarray, what: str) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (grid.n, grid.n):
        raise FieldError(
            f"{what} shape {values.shape} does not match grid ({grid.n}, {grid.n})")
    if not np.all(np.isfinite(values)):
        raise FieldError(f"{what} contains non-finite entries")
    return values


@dataclass(frozen=True)
class ScalarField:
    """Real scalar field on a :class:`Grid2D` (e.g. a vorticity/density).

    ``values[i, j]`` is the sample at ``(x1[i], x1[j])``.  The spectrum is the
    unnormalized 2-D FFT of ``values`` and is cached on first use.
    """

    grid: Grid2D
    values: np.ndarray
    _spec: np.ndarray | None = dataclasses.field(default=None, repr=False, compare=False)

    def __post_init__(self):
        values = _check_values(self.grid, self.values, "field values")
        values = values.copy() if values.flags.writeable else values
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self._spec is not None:
            spec = np.asarray(self._spec, dtype=np.complex128)
            if spec.shape != values.shape:
                raise FieldError("cached spectrum shape mismatch")
            spec.setflags(write=False)
            object.__setattr__(self, "_spec", spec)

    def spectrum(self) -> np.ndarray:
        """Unnormalized FFT of the samples (cached, read-only)."""
        if self._spec is None:
            spec = np.fft.fft2(self.values)
            spec.setflags(write=False)
            object.__setattr__(self, "_spec", spec)
        return self._spec

    # convenience reductions -------------------------------------------------
    def mass(self) -> float:
        """Midpoint-rule integral of the field."""
        return float(np.sum(self.values)) * self.grid.cell_area

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())


def make_field(grid: Grid2D, values: np.ndarray) -> ScalarField:
    return ScalarField(grid, values)


def from_function(grid: Grid2D, fn) -> ScalarField:
    """Sample ``fn(X, Y)`` on the grid nodes."""
    X, Y = grid.meshgrid()
    return ScalarField(grid, np.asarray(fn(X, Y), dtype=np.float64))


def to_spectral(f: ScalarField) -> ScalarField:
    """Return ``f`` with its spectral cache materialized."""
    f.spectrum()
    return f


def from_spectral(grid: Grid2D, spec: np.ndarray) -> ScalarField:
    """Inverse of :func:`to_spectral`: build a field from an unnormalized FFT.

    The imaginary part of the inverse transform is discarded; it must be at
    roundoff level (the spectrum of a real field), otherwise this raises.
    """
    spec = np.asarray(spec, dtype=np.complex128)
    if spec.shape != (grid.n, grid.n):
        raise FieldError(f"spectrum shape {spec.shape} does not match grid")
    phys = np.fft.ifft2(spec)
    scale = max(float(np.max(np.abs(spec))), 1.0)
    if np.max(np.abs(phys.imag)) > 1e-10 * scale:
        raise FieldError("spectrum is not conjugate-symmetric (field would be complex)")
    return ScalarField(grid, np.ascontiguousarray(phys.real), _spec=spec)


@dataclass(frozen=True)
class VelocityField:
    """Planar vector field ``(vx, vy)`` on a shared grid."""

    grid: Grid2D
    vx: np.ndarray
    vy: np.ndarray

    def __post_init__(self):
        for name in ("vx", "vy"):
            arr = _check_values(self.grid, getattr(self, name), name)
            arr = arr.copy() if arr.flags.writeable else arr
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def speed(self) -> np.ndarray:
        """Pointwise magnitude ``|v|``."""
        return np.hypot(self.vx, self.vy)

    def max_speed(self) -> float:
        return float(self.speed().max())


@dataclass(frozen=True)
class TensorField:
    """2x2 tensor field; ``values[i, j]`` holds the component array ``g_ij``.

    The package stores velocity gradients with the convention
    ``g_ij = d v_i / d x_j``.
    """

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (2, 2, self.grid.n, self.grid.n):
            raise FieldError(
                f"tensor values must have shape (2, 2, n, n), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise FieldError("tensor values contain non-finite entries")
        values = values.copy() if values.flags.writeable else values
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def trace(self) -> np.ndarray:
        """g_11 + g_22 (the divergence, for a velocity gradient)."""
        return self.values[0, 0] + self.values[1, 1]

    def asymmetry(self) -> np.ndarray:
        """g_21 - g_12 (the curl, for a velocity gradient)."""
        return self.values[1, 0] - self.values[0, 1]

    def frobenius(self) -> np.ndarray:
        """Pointwise Frobenius magnitude."""
        return np.sqrt(np.sum(self.values**2, axis=(0, 1)))


# ---------------------------------------------------------------------------
# norms and inner products
# ---------------------------------------------------------------------------


def _magnitude(f) -> tuple[Grid2D, np.ndarray]:
    if isinstance(f, ScalarField):
        return f.grid, np.abs(f.values)
    if isinstance(f, VelocityField):
        return f.grid, f.speed()
    if isinstance(f, TensorField):
        return f.grid, f.frobenius()
    raise FieldError(f"unsupported field type {type(f).__name__}")


def lp_norm(f, p: float) -> float:
    """Grid L^p norm (midpoint quadrature); ``p = inf`` gives the max norm.

    Vector and tensor fields are measured through their pointwise magnitude.
    """
    grid, mag = _magnitude(f)
    if p == math.inf:
        return float(mag.max())
    p = float(p)
    if not p >= 1.0:
        raise FieldError(f"lp_norm requires p >= 1 or p = inf, got p={p}")
    # factor out the max to avoid overflow for large p
    m = float(mag.max())
    if m == 0.0:
        return 0.0
    return m * float(np.sum((mag / m) ** p) * grid.cell_area) ** (1.0 / p)


def inner_product(f: ScalarField, g: ScalarField) -> float:
    """Midpoint-rule L^2 pairing ``(f, g)``."""
    if f.grid != g.grid:
        raise FieldError("inner_product requires fields on the same grid")
    return float(np.sum(f.values * g.values)) * f.grid.cell_area


def spectral_l2_norm(f: ScalarField) -> float:
    """L^2 norm evaluated through the spectrum (Parseval form)."""
    g = f.grid
    return float(np.linalg.norm(f.spectrum())) * g.L / (g.n * g.n)


def hminus1_surrogate(f: ScalarField) -> float:
    """Sobolev-type surrogate norm with multiplier ``(1 + |k|^2)^(-1/2)``.

    A bounded stand-in for the (unnormalizable on the plane) H^{-1} pairing;
    reported as a diagnostic only.
    """
    g = f.grid
    w = f.spectrum() / np.sqrt(1.0 + g.k_sq)
    return float(np.linalg.norm(w)) * g.L / (g.n * g.n)


# ---------------------------------------------------------------------------
# spectral operators
# ---------------------------------------------------------------------------


def heat_semigroup(f: ScalarField, tau: float, nu: float = 1.0) -> ScalarField:
    """Apply ``exp(nu * tau * Laplacian)`` spectrally.

    ``tau = 0`` returns the input unchanged.  Negative ``tau`` is rejected
    (the backward heat flow is not a bounded operation).
    """
    if tau < 0:
        raise FieldError(f"heat_semigroup requires tau >= 0, got {tau}")
    if nu < 0:
        raise FieldError(f"heat_semigroup requires nu >= 0, got {nu}")
    if tau == 0.0 or nu == 0.0:
        return f
    spec = f.spectrum() * np.exp(-nu * tau * f.grid.k_sq)
    phys = np.fft.ifft2(spec).real
    return ScalarField(f.grid, np.ascontiguousarray(phys), _spec=spec)


def resolvent(f: ScalarField, eps: float) -> ScalarField:
    """Apply ``(eps - Laplacian)^(-1)`` spectrally (multiplier 1/(eps+|k|^2))."""
    if not eps > 0:
        raise FieldError(f"resolvent requires eps > 0, got {eps}")
    spec = f.spectrum() / (eps + f.grid.k_sq)
    phys = np.fft.ifft2(spec).real
    return ScalarField(f.grid, np.ascontiguousarray(phys), _spec=spec)


def gradient(f: ScalarField) -> VelocityField:
    """Spectral gradient ``(df/dx, df/dy)``."""
    g = f.grid
    spec = f.spectrum()
    fx = np.fft.ifft2(1j * g.kx * spec).real
    fy = np.fft.ifft2(1j * g.ky * spec).real
    return VelocityField(g, np.ascontiguousarray(fx), np.ascontiguousarray(fy))


def laplacian(f: ScalarField) -> ScalarField:
    spec = -f.grid.k_sq * f.spectrum()
    return ScalarField(f.grid, np.ascontiguousarray(np.fft.ifft2(spec).real), _spec=spec)


def dealias(f: ScalarField) -> ScalarField:
    """Zero all modes outside the 2/3 band."""
    spec = np.where(f.grid.dealias_mask, f.spectrum(), 0.0)
    return from_spectral(f.grid, spec)


def mean_free_part(f: ScalarField) -> ScalarField:
    """Subtract the grid mean (zero the k = 0 mode)."""
    return ScalarField(f.grid, f.values - float(np.mean(f.values)))


# ---------------------------------------------------------------------------
# support diagnostics
# ---------------------------------------------------------------------------


def boundary_support_fraction(f: ScalarField, band_cells: int = 4) -> float:
    """Max |f| over the outermost ``band_cells``-wide frame, relative to max |f|.

    The free-space velocity representation assumes the field is effectively
    supported away from the box boundary; this ratio should stay at roundoff
    (~1e-10) for trustworthy runs.
    """
    v = np.abs(f.values)
    m = float(v.max())
    if m == 0.0:
        return 0.0
    b = band_cells
    frame = max(v[:b, :].max(), v[-b:, :].max(), v[:, :b].max(), v[:, -b:].max())
    return float(frame) / m


def effective_support_radius(f: ScalarField, rel_tol: float = 1e-12) -> float:
    """Radius (from the domain center) of the smallest disc holding all samples
    with ``|f| > rel_tol * max|f|``."""
    v = np.abs(f.values)
    m = float(v.max())
    if m == 0.0:
        return 0.0
    X, Y = f.grid.meshgrid()
    r = np.hypot(X, Y)
    sel = v > rel_tol * m
    return float(r[sel].max()) if np.any(sel) else 0.0
