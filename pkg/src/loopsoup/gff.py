"""Complex Gaussian free field with covariance ``2 G``, Wick powers, and both sides of the Dynkin isomorphism."""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .energy import EnergyForm, InvalidEnergyForm, _chi_vector, green_chi, hitting_matrix
from .exact import logdet
from .loops import OccupationField, sample_soups
from .paths import UniformStream, sample_bridge

MAX_WICK_ORDER = 8

_FACTORS: "weakref.WeakKeyDictionary[EnergyForm, np.ndarray]" = weakref.WeakKeyDictionary()


def _factor(e: EnergyForm) -> np.ndarray:
    B = _FACTORS.get(e)
    if B is None:
        B = _FACTORS[e] = np.linalg.cholesky(e.green_matrix)
    return B


@dataclass(frozen=True, eq=False)
class GaussField:
    values: np.ndarray
    form: EnergyForm


def sample_fields(e: EnergyForm, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` field samples as an ``(n, |X|)`` complex array.

    Draw order: the real-part normals (``n x |X|``), then the imaginary-part normals.
    """
    B = _factor(e)
    z1 = rng.standard_normal((n, e.n))
    z2 = rng.standard_normal((n, e.n))
    return (z1 + 1j * z2) @ B.T


def sample_field(e: EnergyForm, rng: np.random.Generator) -> GaussField:
    return GaussField(sample_fields(e, 1, rng)[0], e)


def half_square(f: GaussField | np.ndarray) -> OccupationField | np.ndarray:
    """``|phi|^2 / 2``; arrays of samples map to arrays."""
    if isinstance(f, GaussField):
        return OccupationField(0.5 * np.abs(f.values) ** 2)
    return 0.5 * np.abs(f) ** 2


def laguerre(n: int, x):
    """Laguerre polynomial ``L_n`` by the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    prev, cur = np.ones_like(x), 1.0 - x
    if n == 0:
        return prev
    for k in range(1, n):
        prev, cur = cur, ((2 * k + 1 - x) * cur - k * prev) / (k + 1)
    return cur


def wick_power(v, sigma: float, n: int):
    """``n``-th Wick power of the variable ``v = |phi|^2 / 2`` whose mean is ``sigma``.

    ``(-1)^n n! sigma^n L_n(v / sigma)``; the first power is ``v - sigma``.
    """
    if n > MAX_WICK_ORDER or n < 0:
        raise ValueError(f"Wick order must be in 0..{MAX_WICK_ORDER}")
    out = (-1) ** n * math.factorial(n) * sigma**n * laguerre(n, np.asarray(v, dtype=float) / sigma)
    return float(out) if np.ndim(out) == 0 else out


def harmonic_extension(e: EnergyForm, F: Iterable[str], values) -> np.ndarray:
    """Extension of ``values`` on ``F`` (in vertex-index order of ``F``) by the hitting distribution."""
    F = list(F)
    H = hitting_matrix(e, F)
    values = np.asarray(values)
    if values.shape[-1] != H.shape[1]:
        raise ValueError("one boundary value per point of F")
    return values @ H.T


def shift_log_density(e: EnergyForm, f, phi) -> float | np.ndarray:
    """Log-density of the law of ``f + phi`` with respect to that of ``phi`` at ``phi``.

    ``Re(conj(f) . (M_lam - C) phi) - e(f) / 2``; for real ``f`` only the real
    part of the field enters.  ``phi`` may be a stack of samples.
    """
    f = np.asarray(f)
    values = phi.values if isinstance(phi, GaussField) else np.asarray(phi)
    Af = e.operator @ f
    return np.real(values @ np.conj(Af)) - 0.5 * e.energy(f)


def h_transform(e: EnergyForm, h) -> EnergyForm:
    """Form with energy ``f -> e(h f)``: conductances ``h_x h_y C`` and ``lam`` scaled by ``h^2``.

    Needs ``h > 0`` and ``(M_lam - C) h >= 0`` so the new killing is nonnegative.
    """
    h = np.asarray(h, dtype=float)
    if np.any(h <= 0):
        raise ValueError("h must be positive")
    C = e.conductance * np.outer(h, h)
    kappa = h * (e.operator @ h)
    kappa[np.abs(kappa) < 1e-14 * np.max(np.abs(kappa))] = 0.0
    if np.any(kappa < 0):
        raise InvalidEnergyForm("h is not excessive (L h > 0 somewhere)")
    return e.with_matrices(C, kappa)


def dynkin_target(e: EnergyForm, x: str, y: str, chi) -> float:
    """``G_chi[x, y] * det(G_chi G^-1)``."""
    chi = _chi_vector(e, chi)
    Gc = green_chi(e, chi)
    i, j = e.idx(x), e.idx(y)
    return float(Gc.matrix[i, j] * math.exp(logdet(e.operator) - logdet(e.operator + np.diag(chi))))


def dynkin_lhs_samples(e: EnergyForm, x: str, y: str, chi, n: int, rng: np.random.Generator) -> np.ndarray:
    """Per-sample ``Re(phi_x conj(phi_y)) / 2 * exp(-<|phi|^2 / 2, chi>)``.

    The factor one half matches the covariance ``2 G``: at ``chi = 0`` the mean is ``G[x, y]``.
    """
    chi = _chi_vector(e, chi)
    phi = sample_fields(e, n, rng)
    i, j = e.idx(x), e.idx(y)
    return 0.5 * np.real(phi[:, i] * np.conj(phi[:, j])) * np.exp(-half_square(phi) @ chi)


def dynkin_rhs_samples(e: EnergyForm, x: str, y: str, chi, n: int, rng: np.random.Generator) -> np.ndarray:
    """Per-replica ``G[x, y] exp(-<L_1 + gamma, chi>)`` with an independent soup and normalized bridge.

    Draw order: ``n`` soups of intensity one, then ``n`` bridges.
    """
    chi = _chi_vector(e, chi)
    occ = sample_soups(e, 1.0, n, rng).occupation() @ chi
    stream = UniformStream(rng)
    bridge = np.empty(n)
    for k in range(n):
        bridge[k] = sample_bridge(e, x, y, stream).occupation() @ chi
    return e.green_matrix[e.idx(x), e.idx(y)] * np.exp(-(occ + bridge))


def dynkin_rhs(e: EnergyForm, x: str, y: str, chi, rng: np.random.Generator, n: int = 10_000):
    """Monte Carlo estimate of the soup-plus-bridge side of the isomorphism."""
    from .stats import Estimate

    return Estimate.from_samples(dynkin_rhs_samples(e, x, y, chi, n, rng))
