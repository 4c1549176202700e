"""Energy forms on finite graphs and the exact kernels derived from them.

An energy form is given by symmetric conductances ``C`` and a killing
measure ``kappa``; the total rate at ``x`` is ``lam[x] = kappa[x] + sum_y C[x, y]``.
Holding rates are fixed to one, so all kernels here are intrinsic.

The cemetery point is the reserved name ``DELTA``.  Wherever a kernel is
extended to ``X u {DELTA}`` the cemetery takes index ``n`` (after all
vertices) and the Green function vanishes there.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

DELTA = "Δ"
DEFAULT_TOL = 1e-10


class InvalidEnergyForm(ValueError):
    """Raised when conductances or killing rates violate the form invariants."""


class SingularEnergyForm(InvalidEnergyForm):
    """Raised when ``M_lambda - C`` is not positive definite (no mass gap)."""

    def __init__(self, detail: str = ""):
        msg = "singular energy form"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EnergyForm:
    vertices: tuple[str, ...]
    conductance: np.ndarray
    killing: np.ndarray

    def __post_init__(self):
        n = len(self.vertices)
        C = np.asarray(self.conductance, dtype=float)
        kappa = np.asarray(self.killing, dtype=float)
        if len(set(self.vertices)) != n:
            raise InvalidEnergyForm("duplicate vertex names")
        if DELTA in self.vertices:
            raise InvalidEnergyForm(f"{DELTA!r} is reserved for the cemetery")
        if C.shape != (n, n) or kappa.shape != (n,):
            raise InvalidEnergyForm("shape mismatch between vertices, conductance and killing")
        if not (np.all(np.isfinite(C)) and np.all(np.isfinite(kappa))):
            raise InvalidEnergyForm("non-finite entries")
        if np.any(C < 0) or np.any(kappa < 0):
            raise InvalidEnergyForm("negative conductance or killing rate")
        if np.any(np.diag(C) != 0):
            raise InvalidEnergyForm("nonzero diagonal conductance")
        if not np.array_equal(C, C.T):
            raise InvalidEnergyForm("asymmetric conductance matrix")
        object.__setattr__(self, "conductance", _frozen(C))
        object.__setattr__(self, "killing", _frozen(kappa))
        try:
            np.linalg.cholesky(self.operator)
        except np.linalg.LinAlgError:
            raise SingularEnergyForm("M_lambda - C is not positive definite") from None

    @classmethod
    def from_matrices(cls, conductance, killing, vertices: Sequence[str] | None = None):
        kappa = np.asarray(killing, dtype=float)
        if vertices is None:
            vertices = [str(i) for i in range(len(kappa))]
        return cls(tuple(vertices), np.asarray(conductance, dtype=float), kappa)

    @property
    def n(self) -> int:
        return len(self.vertices)

    @cached_property
    def index(self) -> dict[str, int]:
        d = {v: i for i, v in enumerate(self.vertices)}
        d[DELTA] = self.n
        return d

    @cached_property
    def lam(self) -> np.ndarray:
        return _frozen(self.killing + self.conductance.sum(axis=1))

    @cached_property
    def operator(self) -> np.ndarray:
        """The matrix ``M_lambda - C``."""
        lam = self.killing + self.conductance.sum(axis=1)
        return _frozen(np.diag(lam) - self.conductance)

    @cached_property
    def green_matrix(self) -> np.ndarray:
        G = np.linalg.inv(self.operator)
        return _frozen(0.5 * (G + G.T))

    @cached_property
    def green_extended(self) -> np.ndarray:
        """Green function on ``X u {DELTA}`` with a zero row and column at the cemetery."""
        n = self.n
        Ge = np.zeros((n + 1, n + 1))
        Ge[:n, :n] = self.green_matrix
        return _frozen(Ge)

    @cached_property
    def conductance_extended(self) -> np.ndarray:
        """Conductances on ``X u {DELTA}`` with ``C[x, DELTA] = kappa[x]``."""
        n = self.n
        Ce = np.zeros((n + 1, n + 1))
        Ce[:n, :n] = self.conductance
        Ce[:n, n] = self.killing
        Ce[n, :n] = self.killing
        return _frozen(Ce)

    def idx(self, names: str | Iterable[str]) -> int | list[int]:
        if isinstance(names, str):
            try:
                return self.index[names]
            except KeyError:
                raise KeyError(f"unknown vertex {names!r}") from None
        return [self.idx(v) for v in names]

    def links(self, with_cemetery: bool = True) -> list[tuple[int, int]]:
        """Nonoriented links as index pairs ``(x, y)`` with ``x < y``; cemetery links last."""
        n = self.n
        C = self.conductance
        out = [(i, j) for i in range(n) for j in range(i + 1, n) if C[i, j] > 0]
        if with_cemetery:
            out += [(i, n) for i in range(n) if self.killing[i] > 0]
        return out

    def link_name(self, link: tuple[int, int]) -> tuple[str, str]:
        names = self.vertices + (DELTA,)
        return names[link[0]], names[link[1]]

    def with_matrices(self, conductance=None, killing=None) -> "EnergyForm":
        return EnergyForm(
            self.vertices,
            self.conductance if conductance is None else np.asarray(conductance, dtype=float),
            self.killing if killing is None else np.asarray(killing, dtype=float),
        )

    def restrict(self, D: Iterable[str]) -> "EnergyForm":
        """Form of the chain killed on exiting ``D``: same ``lam`` on ``D``, lost rate goes to killing."""
        d = sorted(self.idx(list(D)))
        if not d:
            raise InvalidEnergyForm("empty vertex subset")
        C = self.conductance[np.ix_(d, d)]
        kappa = self.lam[d] - C.sum(axis=1)
        return EnergyForm(tuple(self.vertices[i] for i in d), C, np.clip(kappa, 0.0, None))

    def relabel(self, mapping: Mapping[str, str]) -> "EnergyForm":
        """Form with vertex ``v`` renamed ``mapping[v]``; vertex order is kept."""
        return EnergyForm(tuple(mapping.get(v, v) for v in self.vertices), self.conductance, self.killing)

    def energy(self, f) -> float:
        f = np.asarray(f)
        return float(np.real(np.conj(f) @ self.operator @ f))


@dataclass(frozen=True, eq=False)
class GreenKernel:
    """A Green function together with the form it came from.

    ``support`` lists the vertex indices the matrix is indexed by (all of
    ``X`` except for killed or traced kernels).
    """

    matrix: np.ndarray
    form: EnergyForm
    kind: str
    support: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not self.support:
            object.__setattr__(self, "support", tuple(range(self.matrix.shape[0])))

    def __getitem__(self, key):
        x, y = key
        pos = {v: i for i, v in enumerate(self.support)}
        return self.matrix[pos[self.form.idx(x)], pos[self.form.idx(y)]]


@dataclass(frozen=True, eq=False)
class TransferMatrix:
    """Gram matrix ``K`` of the link currents, over an ordered list of oriented links.

    Links are index pairs over ``X u {DELTA}``; the cemetery has index ``form.n``.
    """

    links: tuple[tuple[int, int], ...]
    matrix: np.ndarray
    form: EnergyForm

    def submatrix(self, links: Sequence[tuple[int, int]]) -> np.ndarray:
        return transfer_entries(self.form, links)


@dataclass(frozen=True, eq=False)
class Current:
    """Real antisymmetric link weights over ``X u {DELTA}``, supported on links."""

    omega: np.ndarray
    form: EnergyForm

    def __post_init__(self):
        w = np.asarray(self.omega, dtype=float)
        n = self.form.n
        if w.shape != (n + 1, n + 1):
            raise ValueError("current must be indexed by X u {DELTA}")
        if not np.array_equal(w, -w.T):
            raise ValueError("current is not antisymmetric")
        if np.any((w != 0) & (self.form.conductance_extended <= 0)):
            raise ValueError("current is supported outside the links")
        object.__setattr__(self, "omega", _frozen(w))

    @classmethod
    def from_entries(cls, e: EnergyForm, entries: Iterable[tuple[str, str, float]]) -> "Current":
        n = e.n
        w = np.zeros((n + 1, n + 1))
        for u, v, val in entries:
            i, j = e.idx(u), e.idx(v)
            w[i, j] += val
            w[j, i] -= val
        return cls(w, e)

    @classmethod
    def zero(cls, e: EnergyForm) -> "Current":
        return cls(np.zeros((e.n + 1, e.n + 1)), e)

    def scaled(self, s: float) -> "Current":
        return Current(s * self.omega, self.form)

    @property
    def inner(self) -> np.ndarray:
        """Restriction to ``X x X`` (loops never visit the cemetery)."""
        n = self.form.n
        return self.omega[:n, :n]


def build_energy(
    vertices: Sequence[str],
    conductances: Iterable[tuple[str, str, float]] | Mapping[tuple[str, str], float],
    killing: Mapping[str, float],
) -> EnergyForm:
    """Build a form from named entries.

    Each nonoriented edge is given once; ``killing`` may omit vertices
    (rate zero).  Vertex order is the order of ``vertices``.
    """
    vertices = tuple(vertices)
    index = {v: i for i, v in enumerate(vertices)}
    if len(index) != len(vertices):
        raise InvalidEnergyForm("duplicate vertex names")
    n = len(vertices)
    C = np.zeros((n, n))
    items = conductances.items() if isinstance(conductances, Mapping) else conductances
    seen = set()
    for entry in items:
        (u, v), c = (entry[0], entry[1]) if isinstance(conductances, Mapping) else ((entry[0], entry[1]), entry[2])
        if u not in index or v not in index:
            raise InvalidEnergyForm(f"unknown vertex in edge ({u}, {v})")
        if u == v:
            raise InvalidEnergyForm("nonzero diagonal conductance")
        key = frozenset((u, v))
        if key in seen:
            raise InvalidEnergyForm(f"duplicate edge ({u}, {v})")
        seen.add(key)
        C[index[u], index[v]] = C[index[v], index[u]] = float(c)
    kappa = np.zeros(n)
    for v, k in killing.items():
        if v not in index:
            raise InvalidEnergyForm(f"unknown vertex {v!r} in killing")
        kappa[index[v]] = float(k)
    return EnergyForm(vertices, C, kappa)


def transition_matrix(e: EnergyForm) -> np.ndarray:
    """Substochastic jump matrix ``P[x, y] = C[x, y] / lam[x]``."""
    return e.conductance / e.lam[:, None]


def green(e: EnergyForm) -> GreenKernel:
    return GreenKernel(e.green_matrix, e, "plain")


def _chi_vector(e: EnergyForm, chi) -> np.ndarray:
    if isinstance(chi, Mapping):
        v = np.zeros(e.n)
        for k, val in chi.items():
            v[e.idx(k)] = val
        chi = v
    chi = np.asarray(chi, dtype=float)
    if chi.shape != (e.n,):
        raise ValueError("chi must be a vector over the vertices")
    if np.any(chi < 0):
        raise ValueError("chi must be nonnegative")
    return chi


def green_chi(e: EnergyForm, chi) -> GreenKernel:
    """Green function of the form with ``chi`` added to the killing measure."""
    chi = _chi_vector(e, chi)
    G = np.linalg.inv(e.operator + np.diag(chi))
    return GreenKernel(0.5 * (G + G.T), e, "chi-perturbed")


def green_killed(e: EnergyForm, D: Iterable[str]) -> GreenKernel:
    d = sorted(e.idx(list(D)))
    if not d:
        raise ValueError("killed Green function needs a nonempty set")
    G = np.linalg.inv(e.operator[np.ix_(d, d)])
    return GreenKernel(0.5 * (G + G.T), e, "killed-on-D", tuple(d))


def _complement(e: EnergyForm, F: Iterable[str]) -> tuple[list[int], list[int]]:
    f = sorted(set(e.idx(list(F))))
    if not f:
        raise ValueError("vertex subset must be nonempty")
    if any(i >= e.n for i in f):
        raise ValueError("the cemetery is not a vertex")
    fs = set(f)
    d = [i for i in range(e.n) if i not in fs]
    return f, d


def hitting_matrix(e: EnergyForm, F: Iterable[str]) -> np.ndarray:
    """Hitting distribution of ``F``: an ``|X| x |F|`` matrix, columns in index order of ``F``."""
    f, d = _complement(e, F)
    H = np.zeros((e.n, len(f)))
    H[f, range(len(f))] = 1.0
    if d:
        GD = np.linalg.inv(e.operator[np.ix_(d, d)])
        H[d, :] = GD @ e.conductance[np.ix_(d, f)]
    return H


def resurrected_green(e: EnergyForm, mu) -> np.ndarray:
    """Potential ``G^R mu`` of a zero-charge measure under the recurrent resurrected chain.

    ``mu`` is a vector over ``X u {DELTA}`` or a mapping from names
    (``DELTA`` allowed).  Returns a vector over ``X u {DELTA}``.
    """
    n = e.n
    if isinstance(mu, Mapping):
        v = np.zeros(n + 1)
        for k, val in mu.items():
            v[e.idx(k)] += val
        mu = v
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (n + 1,):
        raise ValueError("mu must be a measure on X u {DELTA}")
    if abs(mu.sum()) > DEFAULT_TOL * max(1.0, np.abs(mu).sum()):
        raise ValueError("mu must have total charge zero")
    Gmu = e.green_matrix @ mu[:n]
    total = e.lam.sum() + e.killing.sum()
    at_delta = -(e.lam @ Gmu) / total
    return np.append(Gmu + at_delta, at_delta)


def transfer_entries(e: EnergyForm, links: Sequence[tuple[int, int]]) -> np.ndarray:
    """``K`` over index-pair links, from ``G`` with ``G[., DELTA] = 0``."""
    Ge = e.green_extended
    a = np.array([l[0] for l in links], dtype=int)
    b = np.array([l[1] for l in links], dtype=int)
    return (
        Ge[np.ix_(a, a)] + Ge[np.ix_(b, b)] - Ge[np.ix_(a, b)] - Ge[np.ix_(b, a)]
    )


def transfer_matrix(e: EnergyForm, links: Sequence[tuple[int, int]] | None = None, oriented: bool = False) -> TransferMatrix:
    """Transfer matrix over ``links``.

    By default one orientation per link of ``X u {DELTA}``; with
    ``oriented=True`` both orientations of every ``X``-link are listed
    (cemetery links keep the ``(x, DELTA)`` orientation).
    """
    if links is None:
        links = e.links()
        if oriented:
            links = links + [(y, x) for x, y in links if y < e.n]
    links = tuple((int(x), int(y)) for x, y in links)
    return TransferMatrix(links, transfer_entries(e, links), e)


def transfer_via_resurrected(e: EnergyForm, links: Sequence[tuple[int, int]]) -> np.ndarray:
    """Same entries as :func:`transfer_entries`, computed from the resurrected potential."""
    n = e.n
    K = np.empty((len(links), len(links)))
    for i, (x, y) in enumerate(links):
        mu = np.zeros(n + 1)
        mu[x] += 1.0
        mu[y] -= 1.0
        pot = resurrected_green(e, mu)
        for j, (u, v) in enumerate(links):
            K[i, j] = pot[u] - pot[v]
    return K


def twisted_operator(e: EnergyForm, omega: Current) -> np.ndarray:
    return np.diag(e.lam).astype(complex) - e.conductance * np.exp(1j * omega.inner)


def twisted_green(e: EnergyForm, omega: Current) -> GreenKernel:
    G = np.linalg.inv(twisted_operator(e, omega))
    return GreenKernel(0.5 * (G + G.conj().T), e, "twisted")


def trace_energy(e: EnergyForm, F: Iterable[str]) -> EnergyForm:
    """Energy form of the chain watched only on ``F`` (excursions in the complement integrated out)."""
    f, d = _complement(e, F)
    C = e.conductance
    Cff = C[np.ix_(f, f)].copy()
    lamF = e.lam[f].copy()
    if d:
        GD = np.linalg.inv(e.operator[np.ix_(d, d)])
        Cfd = C[np.ix_(f, d)]
        S = Cfd @ GD @ Cfd.T
        lamF = lamF - np.diag(S)
        Cff = Cff + S
        np.fill_diagonal(Cff, 0.0)
        Cff = 0.5 * (Cff + Cff.T)
    kappa = lamF - Cff.sum(axis=1)
    # round-off can push a zero killing rate slightly negative
    kappa[np.abs(kappa) < DEFAULT_TOL * lamF] = 0.0
    if np.any(kappa < 0):
        raise InvalidEnergyForm("traced killing rate is negative")
    return EnergyForm(tuple(e.vertices[i] for i in f), Cff, kappa)
