"""Periodic Fourier differentiation on lattices."""

import math
import typing as T
from functools import lru_cache

import numpy as np
from loguru import logger

from stochastic_fd.grid import DirectionLike, GridFunction, Lattice, as_direction, is_zero
from stochastic_fd.grid import forward_diff, l2h_norm, multi_diff

ALIASING_THRESHOLD = 1e-8
ROUNDOFF_FILTER = 1e-14


@lru_cache(maxsize=64)
def wavenumbers(lattice: Lattice, keep_nyquist: bool = False) -> tuple[np.ndarray, ...]:
    """
    Angular wavenumbers per axis, shaped to broadcast against ``lattice.shape``.

    The Nyquist mode of an even N has no well defined derivative and is zeroed unless
    ``keep_nyquist`` is set.
    """
    n = lattice.points_per_axis
    k = 2 * np.pi * np.fft.fftfreq(n, d=lattice.spacing)
    if n % 2 == 0 and not keep_nyquist:
        k[n // 2] = 0.0
    result = []
    for axis in range(lattice.dim):
        shape = [1] * lattice.dim
        shape[axis] = n
        ki = k.reshape(shape)
        ki.flags.writeable = False
        result.append(ki)
    return tuple(result)


def directional_symbol(
    lattice: Lattice, direction: DirectionLike, keep_nyquist: bool = False
) -> np.ndarray:
    """kappa . lambda on the FFT grid."""
    lam = as_direction(direction, lattice.dim)
    kappa = wavenumbers(lattice, keep_nyquist)
    return sum((c * kappa[i] for i, c in enumerate(lam) if c), np.zeros((1,) * lattice.dim))


def derivative(f: GridFunction, terms: T.Sequence[tuple[DirectionLike, int]]) -> GridFunction:
    """
    Apply the product of directional derivative powers prod (lambda . D)^power to ``f``.
    A zero direction stands for the identity. The Nyquist mode is dropped only when the
    total order is odd.
    """
    lattice = f.lattice
    active = []
    for direction, power in terms:
        if power < 0:
            raise ValueError(f"Derivative power must be nonnegative, got {power}")
        lam = as_direction(direction, lattice.dim)
        if not is_zero(lam) and power > 0:
            active.append((lam, power))
    if not active:
        return f
    keep_nyquist = sum(power for _, power in active) % 2 == 0
    symbol = np.ones((1,) * lattice.dim, dtype=complex)
    for lam, power in active:
        symbol = symbol * (1j * directional_symbol(lattice, lam, keep_nyquist)) ** power
    f_hat = np.fft.fftn(f.values)
    # drop roundoff-level modes so that high powers do not amplify them
    f_hat[np.abs(f_hat) <= ROUNDOFF_FILTER * np.max(np.abs(f_hat))] = 0
    return GridFunction(lattice, np.fft.ifftn(symbol * f_hat).real)


def derivative_norm(f: GridFunction, order: int) -> float:
    """|D^k f|_0 over all multi-indices of order k, by Parseval on the lattice."""
    lattice = f.lattice
    kappa = wavenumbers(lattice, keep_nyquist=True)
    k2 = sum(i**2 for i in kappa)
    f_hat = np.fft.fftn(f.values)
    weight = lattice.spacing**lattice.dim / lattice.size
    return math.sqrt(float(np.sum(k2**order * np.abs(f_hat) ** 2)) * weight)


def aliasing_fraction(f: GridFunction) -> float:
    """Share of the energy of ``f`` carried by modes in the top third of the resolved band on any axis."""
    lattice = f.lattice
    n = lattice.points_per_axis
    energy = np.abs(np.fft.fftn(f.values)) ** 2
    total = float(np.sum(energy))
    if total == 0:
        return 0.0
    index = np.abs(np.fft.fftfreq(n) * n)
    high = np.zeros(lattice.shape, dtype=bool)
    for axis in range(lattice.dim):
        shape = [1] * lattice.dim
        shape[axis] = n
        high = high | (index.reshape(shape) > n / 3)
    return float(np.sum(energy[high])) / total


def check_aliasing(f: GridFunction, threshold: float = ALIASING_THRESHOLD) -> bool:
    """Warn when ``f`` is not resolved well enough for high derivative powers. Returns True if clean."""
    fraction = aliasing_fraction(f)
    if fraction > threshold:
        logger.warning(
            f"Top Fourier third carries {fraction:.3e} of the energy on {f.lattice} "
            f"(threshold {threshold:.1e}); spectral derivative powers will amplify it"
        )
        return False
    return True


def difference_norm_bound(
    f: GridFunction, alpha: T.Sequence[DirectionLike], kind: str = "symmetric"
) -> tuple[float, float]:
    """
    Both sides of |delta_alpha f|_0 <= prod |alpha_i| |D^k f|_0 with k = len(alpha).

    Args:
        f (GridFunction): Smooth periodic samples.
        alpha (Sequence[DirectionLike]): Nonzero directions.
        kind (str): "symmetric" composes delta^h, "forward" composes delta_{h,lambda}.

    Returns:
        tuple[float, float]: (lhs, rhs)
    """
    lams = [as_direction(i, f.lattice.dim) for i in alpha]
    if kind == "symmetric":
        diff = multi_diff(f, lams)
    elif kind == "forward":
        diff = f
        for lam in lams:
            diff = forward_diff(diff, lam, 1)
    else:
        raise ValueError(f"Unknown difference kind '{kind}'")
    scale = math.prod(math.sqrt(sum(c * c for c in lam)) for lam in lams)
    return l2h_norm(diff), scale * derivative_norm(f, len(lams))


__all__ = [
    "ALIASING_THRESHOLD",
    "wavenumbers",
    "directional_symbol",
    "derivative",
    "derivative_norm",
    "aliasing_fraction",
    "check_aliasing",
    "difference_norm_bound",
]
