"""Closed-form loop-soup quantities: determinants, masses, moments and probabilities.

Every ``alpha``-power is evaluated as ``exp(alpha * logdet)``.  Functions
that have two independent determinant routes compute both and raise
:class:`IdentityMismatch` when they disagree beyond ``tol``.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .energy import (
    DEFAULT_TOL,
    Current,
    EnergyForm,
    _chi_vector,
    transfer_entries,
    twisted_operator,
)

MAX_PERMANENT_SIZE = 10
MAX_MOMENT_ORDER = 6


class IdentityMismatch(ArithmeticError):
    """Two evaluation routes of the same closed form disagree."""


@dataclass(frozen=True)
class IdentityValue:
    name: str
    value: complex | float
    inputs_digest: str

    @classmethod
    def of(cls, name: str, value, **inputs) -> "IdentityValue":
        if not np.isfinite(value):
            raise ValueError(f"{name}: non-finite value")
        blob = json.dumps({k: _jsonable(v) for k, v in sorted(inputs.items())}, sort_keys=True)
        return cls(name, value, hashlib.sha256(blob.encode()).hexdigest()[:16])


def _jsonable(v):
    if isinstance(v, EnergyForm):
        return {"vertices": list(v.vertices), "C": v.conductance.tolist(), "kappa": v.killing.tolist()}
    if isinstance(v, Current):
        return v.omega.tolist()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, Mapping):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, set, frozenset)):
        return [_jsonable(x) for x in v]
    return v


def logdet(A: np.ndarray) -> float:
    """Log-determinant of a matrix with positive (real part of) determinant."""
    if A.size == 0:
        return 0.0
    sign, ld = np.linalg.slogdet(A)
    if np.iscomplexobj(A):
        if abs(sign - 1) > 1e-8:
            raise ValueError(f"determinant is not positive real (phase {sign})")
        return float(ld)
    if sign <= 0:
        raise ValueError("determinant is not positive")
    return float(ld)


def _check(name: str, a, b, tol: float):
    scale = max(abs(a), abs(b), 1e-300)
    if abs(a - b) > tol * scale:
        raise IdentityMismatch(f"{name}: {a!r} != {b!r}")


def log_zeta(e: EnergyForm) -> float:
    return -logdet(e.operator)


def zeta(e: EnergyForm) -> float:
    """``Z_e = det G``."""
    return math.exp(log_zeta(e))


def loop_mass_nontrivial(e: EnergyForm) -> float:
    """Mass of the nontrivial loops, ``-log det(I - P)``."""
    return float(np.sum(np.log(e.lam)) - logdet(e.operator))


def _mass_inside(e: EnergyForm, d: Sequence[int]) -> float:
    """Mass of nontrivial loops contained in the index set ``d``."""
    d = list(d)
    if not d:
        return 0.0
    return float(np.sum(np.log(e.lam[d])) - logdet(e.operator[np.ix_(d, d)]))


def occupation_laplace_routes(e: EnergyForm, chi, alpha: float = 1.0) -> dict[str, float]:
    """The three determinant expressions of the soup occupation Laplace transform."""
    chi = _chi_vector(e, chi)
    n = e.n
    s = np.sqrt(chi)
    G = e.green_matrix
    sym = np.eye(n) + s[:, None] * G * s[None, :]
    Gchi = np.linalg.inv(e.operator + np.diag(chi))
    contraction = np.eye(n) - s[:, None] * Gchi * s[None, :]
    return {
        "det(I+G M_chi)^-a": math.exp(-alpha * logdet(sym)),
        "det(I-G_chi M_chi)^a": math.exp(alpha * logdet(contraction)),
        "det(G_chi G^-1)^a": math.exp(alpha * (logdet(e.operator) - logdet(e.operator + np.diag(chi)))),
    }


def occupation_laplace_exact(e: EnergyForm, chi, alpha: float = 1.0, tol: float = DEFAULT_TOL) -> float:
    """``E exp(-<L_alpha, chi>) = det(I + G M_chi)^(-alpha)``."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    routes = occupation_laplace_routes(e, chi, alpha)
    vals = list(routes.values())
    for name, v in list(routes.items())[1:]:
        _check(name, vals[0], v, tol)
    return vals[0]


def avoidance_probability(e: EnergyForm, F: Iterable[str], alpha: float = 1.0) -> float:
    """Probability that no nontrivial loop of the soup meets ``F``."""
    f = sorted(set(e.idx(list(F))))
    if not f:
        raise ValueError("F must be nonempty")
    G = e.green_matrix
    return math.exp(-alpha * (np.sum(np.log(e.lam[f])) + logdet(G[np.ix_(f, f)])))


def visit_probability(e: EnergyForm, x: str, alpha: float = 1.0) -> float:
    i = e.idx(x)
    return 1.0 - (e.lam[i] * e.green_matrix[i, i]) ** (-alpha)


def joint_visit_probability(e: EnergyForm, x: str, y: str, alpha: float = 1.0) -> float:
    """Probability that a single nontrivial loop of the soup visits both ``x`` and ``y``."""
    i, j = e.idx(x), e.idx(y)
    G = e.green_matrix
    r = (G[i, i] * G[j, j] - G[i, j] ** 2) / (G[i, i] * G[j, j])
    return 1.0 - r**alpha


def joint_visit_log_mass(e: EnergyForm, sets: Sequence[Iterable[str]]) -> float:
    """Loop-measure mass of nontrivial loops meeting every one of the disjoint sets."""
    idx_sets = [frozenset(e.idx(list(F))) for F in sets]
    if not idx_sets or any(not s for s in idx_sets):
        raise ValueError("sets must be nonempty")
    for a, b in itertools.combinations(idx_sets, 2):
        if a & b:
            raise ValueError("sets must be disjoint")
    everything = frozenset(range(e.n))
    total = 0.0
    for r in range(len(idx_sets) + 1):
        for combo in itertools.combinations(idx_sets, r):
            D = everything.difference(*combo)
            total += (-1) ** r * _mass_inside(e, sorted(D))
    return total


def alpha_permanent(M, alpha: float) -> float:
    """Sum over permutations of ``alpha**cycles * prod M[i, sigma(i)]``."""
    M = np.asarray(M, dtype=float)
    k = M.shape[0]
    if M.shape != (k, k):
        raise ValueError("square matrix required")
    if k > MAX_PERMANENT_SIZE:
        raise ValueError(f"alpha-permanent limited to k <= {MAX_PERMANENT_SIZE}")
    if k == 0:
        return 1.0
    rows = M.tolist()
    total = 0.0
    for sigma in itertools.permutations(range(k)):
        prod = 1.0
        for i in range(k):
            prod *= rows[i][sigma[i]]
            if prod == 0.0:
                break
        if prod == 0.0:
            continue
        seen = [False] * k
        cycles = 0
        for i in range(k):
            if not seen[i]:
                cycles += 1
                j = i
                while not seen[j]:
                    seen[j] = True
                    j = sigma[j]
        total += alpha**cycles * prod
    return total


def occupation_moment_exact(e: EnergyForm, chi, k: int, alpha: float = 1.0) -> float:
    """``E <L_alpha, chi>^k`` as a chi-weighted sum of alpha-permanents of ``G``."""
    if k > MAX_MOMENT_ORDER:
        raise ValueError(f"moment order limited to {MAX_MOMENT_ORDER}")
    if k == 0:
        return 1.0
    chi = _chi_vector(e, chi)
    support = [i for i in range(e.n) if chi[i] != 0]
    G = e.green_matrix
    total = 0.0
    fact_k = math.factorial(k)
    for combo in itertools.combinations_with_replacement(support, k):
        mult = fact_k
        for c in Counter(combo).values():
            mult //= math.factorial(c)
        weight = mult * float(np.prod(chi[list(combo)]))
        total += weight * alpha_permanent(G[np.ix_(combo, combo)], alpha)
    return total


def nvisit_generating_exact(e: EnergyForm, points: Sequence[str], s: Sequence[float], alpha: float = 1.0) -> float:
    """``E prod_i s_i^(N_{x_i} + 1)`` for the soup visit counts."""
    idx = e.idx(list(points))
    s = np.asarray(s, dtype=float)
    if len(set(idx)) != len(idx) or len(s) != len(idx):
        raise ValueError("points must be distinct and match s")
    if np.any(s <= 0) or np.any(s > 1):
        raise ValueError("s must lie in (0, 1]")
    lam = e.lam[idx]
    w = np.sqrt(lam * (1 - s) / s)
    A = np.eye(len(idx)) + w[:, None] * e.green_matrix[np.ix_(idx, idx)] * w[None, :]
    return math.exp(-alpha * logdet(A))


def link_count_log_mass(e: EnergyForm, x: str, y: str, s: float) -> float:
    """``mu(s^N_{x,y} 1{p>0}) = -log det(I - P^(s))`` with the single entry ``P[x, y]`` scaled by ``s``."""
    i, j = e.idx(x), e.idx(y)
    P = e.conductance / e.lam[:, None]
    Ps = P.copy()
    Ps[i, j] *= s
    return -logdet(np.eye(e.n) - Ps)


def current_laplace_exact(e: EnergyForm, omega: Current, alpha: float = 1.0, tol: float = DEFAULT_TOL) -> complex:
    """``E exp(i sum_l int_l omega) = (Z_{e,omega} / Z_e)^alpha``; real up to round-off."""
    A = twisted_operator(e, omega)
    sign, ld = np.linalg.slogdet(A)
    # the twisted operator is Hermitian, so its determinant is real
    if abs(np.imag(sign)) > tol:
        raise IdentityMismatch(f"twisted determinant has phase {sign}")
    ratio = np.real(sign) * math.exp(logdet(e.operator) - ld)
    if ratio > 0:
        return complex(ratio**alpha)
    return complex(ratio) ** alpha


def cycle_integrals(e: EnergyForm, omega: Current) -> list[float]:
    """Integrals of ``omega`` over the fundamental cycles of a BFS spanning forest of the ``X``-links."""
    n = e.n
    C = e.conductance
    w = omega.inner
    h = [None] * n
    tree = set()
    for root in range(n):
        if h[root] is not None:
            continue
        h[root] = 0.0
        queue = [root]
        while queue:
            u = queue.pop(0)
            for v in range(n):
                if C[u, v] > 0 and h[v] is None:
                    h[v] = h[u] + w[u, v]
                    tree.add(frozenset((u, v)))
                    queue.append(v)
    return [h[u] + w[u, v] - h[v] for u in range(n) for v in range(u + 1, n) if C[u, v] > 0 and frozenset((u, v)) not in tree]


def _simpson(f, a: float, b: float, panels: int) -> float:
    x = np.linspace(a, b, 2 * panels + 1)
    y = np.array([f(t) for t in x])
    hstep = (b - a) / (2 * panels)
    return float(hstep / 3 * (y[0] + y[-1] + 4 * y[1:-1:2].sum() + 2 * y[2:-1:2].sum()))


def winding_nonzero_mass(e: EnergyForm, omega: Current, tol: float = 1e-8, max_panels: int = 1 << 14) -> float:
    """Loop mass of ``{int_l omega != 0}`` for a current with integer loop integrals.

    Integrates ``-log det(G^{2 pi u omega} G^-1)`` over ``u`` in ``[0, 1]``
    by composite Simpson, doubling from 64 panels until two successive
    estimates differ by less than ``tol``.
    """
    for c in cycle_integrals(e, omega):
        if abs(c - round(c)) > 1e-9:
            raise ValueError(f"current has non-integer cycle integral {c}")
    base = logdet(e.operator)

    def integrand(u: float) -> float:
        A = twisted_operator(e, omega.scaled(2 * math.pi * u))
        return float(np.linalg.slogdet(A)[1] - base)

    panels = 64
    prev = _simpson(integrand, 0.0, 1.0, panels)
    while True:
        panels *= 2
        cur = _simpson(integrand, 0.0, 1.0, panels)
        if abs(cur - prev) < tol or panels >= max_panels:
            return max(cur, 0.0)
        prev = cur


def log_zeta_ratio(e: EnergyForm, e2: EnergyForm) -> float:
    """``log(Z_e2 / Z_e)``."""
    if e.vertices != e2.vertices:
        raise ValueError("forms must share the vertex set")
    return log_zeta(e2) - log_zeta(e)


def _link_indices(e: EnergyForm, links) -> list[tuple[int, int]]:
    out = []
    for u, v in links:
        i, j = e.idx(u), e.idx(v)
        out.append((min(i, j), max(i, j)))
    return out


def avoided_links_form(e: EnergyForm, R) -> EnergyForm:
    """Form with the conductances of the links in ``R`` set to zero and ``lam`` unchanged."""
    C = e.conductance.copy()
    kappa = e.killing.copy()
    for i, j in _link_indices(e, R):
        if j >= e.n:
            raise ValueError("cemetery links cannot be avoided this way")
        c = C[i, j]
        C[i, j] = C[j, i] = 0.0
        kappa[i] += c
        kappa[j] += c
    return e.with_matrices(C, kappa)


def link_avoidance_probability(e: EnergyForm, R, alpha: float = 1.0) -> float:
    """Probability that no loop of the soup traverses a link of ``R``."""
    return math.exp(alpha * log_zeta_ratio(e, avoided_links_form(e, R)))


def scaled_conductance_form(e: EnergyForm, factor: float) -> EnergyForm:
    """All conductances multiplied by ``factor`` with ``lam`` held fixed through the killing."""
    C = factor * e.conductance
    return e.with_matrices(C, e.lam - C.sum(axis=1))


def _link_function(e: EnergyForm, g) -> np.ndarray:
    """Symmetric matrix over ``X u {DELTA}`` from a mapping on nonoriented links (default 0)."""
    n = e.n
    out = np.zeros((n + 1, n + 1))
    items = g.items() if isinstance(g, Mapping) else g
    for (u, v), val in items:
        i, j = e.idx(u), e.idx(v)
        out[i, j] = out[j, i] = val
    return out


class LinkLaplace(NamedTuple):
    canonical: float
    kform: float
    discrepancy: float


def link_laplace_exact(e: EnergyForm, g, alpha: float = 1.0) -> LinkLaplace:
    """``E exp(-sum g({x,y}) N_{x,y})`` over the soup, with ``lam`` kept fixed.

    ``g`` maps nonoriented ``X``-links to nonnegative values; cemetery values
    are implied by the lam-preserving adjustment.  The canonical value is the
    determinant ratio ``(det(M_lam - C e^-g) / det(M_lam - C))^-alpha``; the
    transfer-matrix form ``det(I - K M(g))^-alpha`` is returned alongside with
    its relative discrepancy.
    """
    n = e.n
    gm = _link_function(e, g)[:n, :n]
    if np.any(gm < 0):
        raise ValueError("g must be nonnegative on links of X")
    C = e.conductance
    Cg = C * np.exp(-gm)
    canonical = math.exp(-alpha * (logdet(np.diag(e.lam) - Cg) - logdet(e.operator)))

    links = [l for l in e.links(with_cemetery=False)]
    weights = [C[i, j] * (1 - math.exp(-gm[i, j])) for i, j in links]
    for x in range(n):
        t = float(np.sum(Cg[x] - C[x]))
        if t != 0.0:
            links.append((x, n))
            weights.append(t)
    if links:
        K = transfer_entries(e, links)
        kform = math.exp(-alpha * logdet(np.eye(len(links)) - K * np.asarray(weights)[None, :]))
    else:
        kform = 1.0
    return LinkLaplace(canonical, kform, abs(kform - canonical) / canonical)


def tree_link_laplace_exact(e: EnergyForm, g) -> float:
    """``E_ST exp(-sum_{xi in tree} g(xi))`` for the weighted spanning tree rooted at the cemetery.

    ``g`` maps nonoriented links of ``X u {DELTA}`` to reals (``inf`` allowed).
    """
    gm = _link_function(e, g)
    links = e.links()
    Ce = e.conductance_extended
    weights = np.array([Ce[i, j] * (math.exp(-gm[i, j]) - 1.0) for i, j in links])
    K = transfer_entries(e, links)
    return float(np.linalg.det(np.eye(len(links)) + K * weights[None, :]))


def zeta_factorization_check(e: EnergyForm, F: Iterable[str], tol: float = DEFAULT_TOL) -> tuple[float, float, float]:
    """``(Z_e, Z_{e^D}, Z_{e^{F}})`` with ``D`` the complement of ``F``; checks the product."""
    from .energy import trace_energy

    F = list(F)
    f = set(e.idx(F))
    D = [v for v in e.vertices if e.idx(v) not in f]
    z = zeta(e)
    zd = zeta(e.restrict(D)) if D else 1.0
    zf = zeta(trace_energy(e, F))
    _check("Z_e = Z_{e^D} Z_{e^{F}}", z, zd * zf, tol)
    return z, zd, zf
