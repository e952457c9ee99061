"""Shared fixtures: small grids and cheap reference objects.

Heavy, acceptance-scale runs live in test_acceptance.py behind session
fixtures so they are computed once; everything here is desk-scale.
"""

import numpy as np
import pytest

from vortexlab import Grid2D, ScalarField, lamb_oseen


@pytest.fixture
def grid32():
    return Grid2D(2 * np.pi, 32)


@pytest.fixture
def grid64():
    return Grid2D(8.0, 64)


@pytest.fixture
def grid128():
    return Grid2D(10.0, 128)


@pytest.fixture
def gaussian64():
    """Unit-mass Gaussian, per-axis variance 1, on a box wide enough that
    the truncated tail is below 1e-8."""
    return lamb_oseen.gaussian_density(Grid2D(12.0, 64), 1.0)


def random_smooth_field(grid, seed, kmax_frac=0.25, amplitude=1.0):
    """Band-limited random field: iid Gaussian modes under a wavenumber cap,
    Hermitian-symmetrized via a real inverse transform."""
    rng = np.random.default_rng(seed)
    n = grid.n
    spec = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    kcap = kmax_frac * np.max(np.abs(grid.k1))
    mask = (np.abs(grid.kx) <= kcap) & (np.abs(grid.ky) <= kcap)
    spec *= mask
    vals = np.fft.ifft2(spec).real
    vals *= amplitude / max(np.max(np.abs(vals)), 1e-300)
    return ScalarField(grid, vals)


@pytest.fixture
def smooth_bank(grid64):
    return [random_smooth_field(grid64, seed) for seed in range(10)]
