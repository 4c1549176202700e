"""Identity suites: every closed form paired with an exact cross-check or a Monte Carlo estimate.

A suite is a list of named checks.  Each check owns a generator seeded by
``SeedSequence([seed, crc32(check_name)])`` so adding, removing or
reordering checks never changes the numbers another check produces.
Rows are reported sorted by name.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
import zlib
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import exact as ex
from .energy import (
    DEFAULT_TOL,
    Current,
    EnergyForm,
    build_energy,
    green_chi,
    green_killed,
    hitting_matrix,
    trace_energy,
    transfer_entries,
    transfer_via_resurrected,
    twisted_green,
)
from .gff import (
    dynkin_lhs_samples,
    dynkin_rhs_samples,
    dynkin_target,
    h_transform,
    half_square,
    sample_fields,
    shift_log_density,
    wick_power,
)
from .loops import length_distribution, loop_functional, loop_trace, sample_soups
from .paths import (
    MAX_ENUMERATION_SIZE,
    UniformStream,
    be_mass_exact,
    enumerate_trees,
    loop_erase,
    sample_bridge,
    sample_path_to_death,
    self_avoiding_paths_to_death,
    transfer_current_inclusion,
    wilson,
)
from .stats import Estimate, chi_squared, chi_squared_two_sample, mc_estimate, pool_cells

__all__ = [
    "Estimate",
    "IdentityReport",
    "Row",
    "SUITES",
    "chi_squared",
    "mc_estimate",
    "rho_invariance",
    "run_suite",
]

SCHEMA_VERSION = 1
Z_MAX = 4.0
P_MIN = 1e-3
FD_TOL = 1e-6
FD_EPS = 1e-5


@dataclass(frozen=True)
class Row:
    """One identity check.

    ``kind`` is ``exact`` (``statistic`` is the relative error), ``mc``
    (``statistic`` is the z-score of ``estimate`` against ``exact``) or
    ``chi2`` (``statistic`` is the p-value).
    """

    name: str
    kind: str
    identity: str
    exact: float
    estimate: float
    stderr: float
    n: int
    statistic: float
    passed: bool
    seed: str
    runtime: float | None = None


@dataclass
class IdentityReport:
    suite: str
    graph: str
    n: int
    seed: int | None
    tol: float
    rows: list[Row] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def failures(self) -> list[Row]:
        return [r for r in self.rows if not r.passed]

    def row(self, name: str) -> Row:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self, timings: bool = False) -> dict:
        rows = []
        for r in self.rows:
            d = asdict(r)
            if not timings:
                d.pop("runtime")
            rows.append({k: _finite(v) for k, v in d.items()})
        return {
            "schema_version": SCHEMA_VERSION,
            "suite": self.suite,
            "graph": self.graph,
            "n": self.n,
            "seed": self.seed,
            "tol": self.tol,
            "z_max": Z_MAX,
            "p_min": P_MIN,
            "passed": self.passed,
            "rows": rows,
        }

    def to_json(self, timings: bool = False) -> str:
        return json.dumps(self.to_dict(timings), indent=2, allow_nan=False) + "\n"

    def to_csv(self, timings: bool = False) -> str:
        cols = [f for f in Row.__dataclass_fields__ if timings or f != "runtime"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["schema_version"] + cols)
        for r in self.rows:
            d = asdict(r)
            w.writerow([SCHEMA_VERSION] + [_fmt(d[c]) for c in cols])
        return buf.getvalue()


def _finite(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def graph_digest(e: EnergyForm) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(list(e.vertices)).encode())
    h.update(np.ascontiguousarray(e.conductance).tobytes())
    h.update(np.ascontiguousarray(e.killing).tobytes())
    return h.hexdigest()[:16]


# -- row constructors --------------------------------------------------------


class _Ctx:
    """What a check sees: the form, sample size, tolerance and its own generator."""

    def __init__(self, e: EnergyForm, n: int, tol: float, rng: np.random.Generator, seed: str):
        self.e = e
        self.n = n
        self.tol = tol
        self.rng = rng
        self.seed = seed
        v = e.vertices
        self.x = v[0]
        self.y = v[1] if len(v) > 1 else None
        links = e.links(with_cemetery=False)
        self.link = e.link_name(links[0]) if links else None
        self.rows: list[Row] = []

    def exact(self, name: str, identity: str, value, reference, tol: float | None = None, relative: bool = True):
        tol = self.tol if tol is None else tol
        value, reference = float(np.real(value)), float(np.real(reference))
        scale = max(1.0, abs(reference)) if relative else 1.0
        err = abs(value - reference) / scale
        self.rows.append(Row(name, "exact", identity, reference, value, 0.0, 0, err, bool(err <= tol), self.seed))

    def at_least(self, name: str, identity: str, value, bound: float = 0.0):
        value = float(value)
        err = max(0.0, bound - value)
        self.rows.append(Row(name, "exact", identity, bound, value, 0.0, 0, err, bool(err <= self.tol), self.seed))

    def mc(self, name: str, identity: str, est: Estimate, reference: float):
        reference = float(reference)
        z = est.z(reference)
        self.rows.append(Row(name, "mc", identity, reference, est.mean, est.stderr, est.n, z, bool(abs(z) <= Z_MAX), self.seed))

    def mc_samples(self, name: str, identity: str, samples, reference: float):
        self.mc(name, identity, Estimate.from_samples(samples), reference)

    def agree(self, name: str, identity: str, a: Estimate, b: Estimate):
        """Two independent estimates of the same quantity."""
        self.mc(name, identity, a - b, 0.0)

    def chi2(self, name: str, identity: str, p: float, n: int):
        self.rows.append(Row(name, "chi2", identity, 1.0, p, 0.0, n, p, bool(p > P_MIN), self.seed))


def _chi_values(e: EnergyForm) -> dict[str, np.ndarray]:
    n = e.n
    a = np.zeros(n)
    a[0] = 0.7
    return {
        "chi1": a,
        "chi2": np.full(n, 0.3),
        "chi3": 0.2 + 0.5 * np.arange(n) / max(n - 1, 1),
    }


# -- exact checks ------------------------------------------------------------


def _exact_green(ctx: _Ctx):
    e = ctx.e
    G = e.green_matrix
    ctx.exact("green.inverse", "G (M_lam - C) = I", np.abs(G @ e.operator - np.eye(e.n)).max(), 0.0, relative=False)
    ctx.exact("green.kappa", "G kappa = 1", np.abs(G @ e.killing - 1.0).max(), 0.0, relative=False)
    ctx.exact("green.symmetric", "G symmetric", np.abs(G - G.T).max(), 0.0, relative=False)
    P = e.conductance / e.lam[:, None]
    ctx.exact("transition.lam_symmetric", "lam_x P[x,y] = lam_y P[y,x]", np.abs(e.lam[:, None] * P - (e.lam[:, None] * P).T).max(), 0.0, relative=False)


def _exact_resolvent(ctx: _Ctx):
    e = ctx.e
    for key, chi in _chi_values(e).items():
        G = e.green_matrix
        Gc = green_chi(e, chi).matrix
        ctx.exact(f"resolvent.{key}", "G - G_chi = G M_chi G_chi", np.abs(G - Gc - G @ np.diag(chi) @ Gc).max(), 0.0, relative=False)
        routes = list(ex.occupation_laplace_routes(e, chi, 1.0).values())
        plain = np.linalg.det(np.eye(e.n) + G @ np.diag(chi)) ** -1.0
        ctx.exact(f"laplace_routes.{key}.sym", "det(I + G M_chi) = det(I + M_sqrt(chi) G M_sqrt(chi))", routes[0], plain)
        ctx.exact(f"laplace_routes.{key}.contraction", "det(I + G M_chi)^-1 = det(I - G_chi M_chi)", routes[1], routes[0])
        ctx.exact(f"laplace_routes.{key}.ratio", "det(I + G M_chi)^-1 = det(G_chi G^-1)", routes[2], routes[0])


def _exact_killed(ctx: _Ctx):
    e = ctx.e
    if e.n < 2:
        return
    F = [ctx.x]
    D = list(e.vertices[1:])
    G = e.green_matrix
    GD = green_killed(e, D).matrix
    ctx.exact("killed.det_ratio", "det G^D = det G / det G|F", np.linalg.det(GD), np.linalg.det(G) / G[0, 0])
    Hm = hitting_matrix(e, F)
    ctx.exact("hitting.projection", "G[x, z] = sum_y H[x, y] G[y, z] for z in F", np.abs(G[:, [0]] - Hm @ G[np.ix_([0], [0])]).max(), 0.0, relative=False)
    # Markov property of the field: phi - H phi is uncorrelated with phi on F
    cov = G[:, [0]] - Hm @ G[np.ix_([0], [0])]
    ctx.exact("gff.harmonic_projection", "cov(phi - H phi, phi_F) = 0", np.abs(cov).max(), 0.0, relative=False)


def _exact_transfer(ctx: _Ctx):
    e = ctx.e
    links = e.links()
    K = transfer_entries(e, links)
    ctx.at_least("transfer.psd", "K is a Gram matrix", float(np.linalg.eigvalsh(K).min()), 0.0)
    ctx.exact("transfer.resurrected", "K from G equals K from G^R", np.abs(K - transfer_via_resurrected(e, links)).max(), 0.0, relative=False)
    k = min(len(links), 4)
    flipped = [(b, a) if i % 2 == 0 else (a, b) for i, (a, b) in enumerate(links[:k])]
    ctx.exact("transfer.orientation", "principal minors are orientation invariant", np.linalg.det(transfer_entries(e, flipped)), np.linalg.det(K[:k, :k]))
    Ce = e.conductance_extended
    total = sum(Ce[a, b] * K[i, i] for i, (a, b) in enumerate(links))
    ctx.exact("transfer.kirchhoff_total", "sum of link inclusion probabilities = |X|", total, float(e.n))


def _exact_trace(ctx: _Ctx):
    e = ctx.e
    F = list(e.vertices[: max(1, e.n - 1)])
    eF = trace_energy(e, F)
    f = e.idx(F)
    G = e.green_matrix
    ctx.exact("trace.green", "Green of the trace = G|F", np.abs(eF.green_matrix - G[np.ix_(f, f)]).max(), 0.0, relative=False)
    z, zd, zf = ex.zeta_factorization_check(e, F, tol=max(ctx.tol, 1e-12))
    ctx.exact("trace.zeta_factorization", "Z_e = Z_{e^D} Z_{e^F}", zd * zf, z)
    D = [v for v in e.vertices if v not in F]
    if D:
        ctx.exact("trace.det_factorization", "det G = det G^D det G|F", np.linalg.det(green_killed(e, D).matrix) * np.linalg.det(G[np.ix_(f, f)]), np.linalg.det(G))
    ctx.at_least("trace.killing", "traced killing is nonnegative", float(eF.killing.min()), -ctx.tol)


def _exact_twisted(ctx: _Ctx):
    e = ctx.e
    ctx.exact("twisted.zero", "G^0 = G", np.abs(twisted_green(e, Current.zero(e)).matrix - e.green_matrix).max(), 0.0, relative=False)
    omega = _fundamental_current(e, math.pi)
    Gw = twisted_green(e, omega).matrix
    ctx.exact("twisted.hermitian", "G^omega Hermitian", np.abs(Gw - Gw.conj().T).max(), 0.0, relative=False)


def _exact_trees(ctx: _Ctx):
    e = ctx.e
    if e.n > MAX_ENUMERATION_SIZE:
        return
    trees = enumerate_trees(e)
    ctx.exact("trees.total", "sum of Z_e prod C over rooted trees = 1", sum(p for _, p in trees), 1.0)
    links = e.links()
    i, j = links[0]
    incl = sum(p for t, p in trees if t.contains(i, j))
    ctx.exact("trees.transfer_current_1", "P(link in tree) = C K", transfer_current_inclusion(e, [e.link_name(links[0])]), incl)
    pair = _adjacent_pair(links)
    if pair is not None:
        (a, b), (c, d) = pair
        incl2 = sum(p for t, p in trees if t.contains(a, b) and t.contains(c, d))
        ctx.exact("trees.transfer_current_2", "P(two links in tree) = prod C det K", transfer_current_inclusion(e, [e.link_name(pair[0]), e.link_name(pair[1])]), incl2)
    g = {e.link_name(l): 0.5 for l in links}
    direct = sum(p * math.exp(-0.5 * len(t.parent)) for t, p in trees)
    ctx.exact("trees.link_laplace", "E_ST exp(-sum g) = det(I + K M_C(e^-g - 1))", ex.tree_link_laplace_exact(e, g), direct)
    paths = self_avoiding_paths_to_death(e, ctx.x)
    ctx.exact("be.completeness", "sum over eta of P^x_BE(eta) = 1", sum(be_mass_exact(e, ctx.x, p) for p in paths), 1.0)


def _adjacent_pair(links):
    for a in range(len(links)):
        for b in range(a + 1, len(links)):
            if set(links[a]) & set(links[b]):
                return links[a], links[b]
    return (links[0], links[1]) if len(links) > 1 else None


def _exact_link_laplace(ctx: _Ctx):
    e = ctx.e
    g = {e.link_name(l): 0.5 for l in e.links(with_cemetery=False)}
    ll = ex.link_laplace_exact(e, g)
    ctx.exact("link_laplace.kform", "det(M - C e^-g)/det(M - C) = det(I - K M(Tg))", ll.kform, ll.canonical)
    if ctx.link is not None:
        big = ex.link_laplace_exact(e, {ctx.link: 60.0}).canonical
        ctx.exact("link_laplace.limit", "g -> inf on a link gives link avoidance", big, ex.link_avoidance_probability(e, [ctx.link]), tol=1e-9)


def _exact_masses(ctx: _Ctx):
    e = ctx.e
    P = e.conductance / e.lam[:, None]
    ctx.exact("mass.nontrivial", "m = -log det(I - P)", ex.loop_mass_nontrivial(e), -np.linalg.slogdet(np.eye(e.n) - P)[1])
    if e.n >= 2:
        v = ex.joint_visit_log_mass(e, [[ctx.x], [ctx.y]])
        ctx.at_least("joint_visit.nonnegative", "mu(loops meeting both sets) >= 0", v, -ctx.tol)
    g = e.green_matrix[0, 0]
    for alpha in (1.0, 2.0):
        ctx.exact(f"permanent.second_moment.a{alpha:g}", "Per_alpha of a rank-one block", ex.occupation_moment_exact(e, {ctx.x: 1.0}, 2, alpha), alpha * (alpha + 1) * g * g)


def _exact_h_transform(ctx: _Ctx):
    e = ctx.e
    h = e.green_matrix @ np.ones(e.n)
    eh = h_transform(e, h)
    ctx.exact("h_transform.green", "Green of the h-transform = G / (h h)", np.abs(eh.green_matrix - e.green_matrix / np.outer(h, h)).max(), 0.0, relative=False)
    ctx.exact("h_transform.zeta", "Z_{e_h} / Z_e = 1 / prod h^2", ex.log_zeta_ratio(e, eh), -2 * np.log(h).sum())


# -- finite differences ------------------------------------------------------


def _fd_kappa(ctx: _Ctx):
    e = ctx.e
    for i, v in enumerate(e.vertices):
        up = e.killing.copy()
        dn = e.killing.copy()
        up[i] += FD_EPS
        dn[i] -= FD_EPS
        if dn[i] < 0:
            # forward difference when kappa_x = 0 sits on the boundary
            d = (ex.log_zeta(e.with_matrices(killing=up)) - ex.log_zeta(e)) / FD_EPS
            tol = 10 * FD_TOL
        else:
            d = (ex.log_zeta(e.with_matrices(killing=up)) - ex.log_zeta(e.with_matrices(killing=dn))) / (2 * FD_EPS)
            tol = FD_TOL
        ctx.exact(f"dlogZ_dkappa.{v}", "d log Z / d kappa_x = -G[x, x]", d, -e.green_matrix[i, i], tol=tol, relative=False)


def _fd_link_count(ctx: _Ctx):
    e = ctx.e
    for i, j in e.links(with_cemetery=False)[:6]:
        x, y = e.vertices[i], e.vertices[j]
        d = (ex.link_count_log_mass(e, x, y, 1 + FD_EPS) - ex.link_count_log_mass(e, x, y, 1 - FD_EPS)) / (2 * FD_EPS)
        ctx.exact(f"mu_Nxy.{x}.{y}", "d/ds mu(s^N_xy) at s = 1 is C G", d, e.conductance[i, j] * e.green_matrix[i, j], tol=FD_TOL, relative=False)


def _fd_moments(ctx: _Ctx):
    e = ctx.e
    chi = np.zeros(e.n)
    chi[0] = 1.0

    def log_laplace(t):
        return -(ex.logdet(e.operator + t * np.diag(chi)) - ex.logdet(e.operator))

    eps = 1e-4
    f0, fp, fm = log_laplace(0.0), log_laplace(eps), log_laplace(-eps)
    d1 = (fp - fm) / (2 * eps)
    d2 = (fp - 2 * f0 + fm) / eps**2
    ctx.exact("moment1.fd", "first moment from the Laplace transform", -d1, ex.occupation_moment_exact(e, chi, 1), tol=FD_TOL, relative=False)
    ctx.exact("moment2.fd", "second moment from the Laplace transform", d2 + d1 * d1, ex.occupation_moment_exact(e, chi, 2), tol=FD_TOL)


# -- soups -------------------------------------------------------------------


def _soup_alpha1(ctx: _Ctx):
    e = ctx.e
    b = sample_soups(e, 1.0, ctx.n, ctx.rng)
    occ = b.occupation()
    G = e.green_matrix
    for key, chi in _chi_values(e).items():
        ctx.mc_samples(f"laplace.a1.{key}", "E exp(-<L, chi>) = det(I + G M_chi)^-1", np.exp(-occ @ chi), ex.occupation_laplace_exact(e, chi, 1.0))
    ctx.mc_samples("moment1.x", "E <L, delta_x> = alpha G[x, x]", occ[:, 0], ex.occupation_moment_exact(e, {ctx.x: 1.0}, 1))
    ctx.mc_samples("moment2.x", "E <L, delta_x>^2 = Per_alpha", occ[:, 0] ** 2, ex.occupation_moment_exact(e, {ctx.x: 1.0}, 2))
    for i, v in enumerate(e.vertices):
        ctx.mc_samples(f"occupation_mean.{v}", "E L^x = alpha G[x, x]", occ[:, i], G[i, i])
    ctx.mc_samples("loop_count", "E #loops = alpha m", b.loop_counts(), ex.loop_mass_nontrivial(e))
    ctx.mc_samples("avoid.x", "P(no loop meets F) = (prod lam det G|F)^-alpha", ~b.meets([0]), ex.avoidance_probability(e, [ctx.x]))
    N = b.visit_counts()
    for i, v in enumerate(e.vertices[:4]):
        ctx.mc_samples(f"N_x.{v}", "E N_x = alpha (lam G[x, x] - 1)", N[:, i], e.lam[i] * G[i, i] - 1)
    ctx.mc_samples("nvisit.x", "E s^(N_x + 1) generating determinant", 0.5 ** (N[:, 0] + 1), ex.nvisit_generating_exact(e, [ctx.x], [0.5]))
    if ctx.y is not None:
        both = b.loop_meets([0]) & b.loop_meets([1])
        per = np.bincount(b.ensemble[both], minlength=b.n) > 0
        ctx.mc_samples("joint_visit.xy", "P(a loop visits x and y) = 1 - (det G|xy / G_xx G_yy)^alpha", per, ex.joint_visit_probability(e, ctx.x, ctx.y))
        ctx.mc_samples(
            "nvisit.xy", "E prod s_i^(N_i + 1) generating determinant", 0.5 ** (N[:, 0] + 1) * 0.7 ** (N[:, 1] + 1), ex.nvisit_generating_exact(e, [ctx.x, ctx.y], [0.5, 0.7])
        )
    if ctx.link is not None:
        i, j = e.idx(ctx.link[0]), e.idx(ctx.link[1])
        nij, nji = b.link_counts(i, j), b.link_counts(j, i)
        ctx.mc_samples("N_xy", "E N_xy = alpha C G[x, y]", nij, e.conductance[i, j] * G[i, j])
        ctx.agree("N_xy.reversal", "orientation reversal leaves the loop law invariant", Estimate.from_samples(nij), Estimate.from_samples(nji))
        ctx.mc_samples("link_avoid", "P(no loop crosses R) = (Z_{e]R[} / Z_e)^alpha", (nij + nji) == 0, ex.link_avoidance_probability(e, [ctx.link]))
    steps = b.per_ensemble(np.ones(len(b.states)))
    g = {e.link_name(l): 0.5 for l in e.links(with_cemetery=False)}
    ctx.mc_samples("link_laplace", "E exp(-sum g N) = det ratio", np.exp(-0.5 * steps), ex.link_laplace_exact(e, g).canonical)
    # restriction property: loops avoiding x are the soup of the form restricted to D
    if e.n >= 2:
        D = list(e.vertices[1:])
        eD = e.restrict(D)
        inside = ~b.loop_meets([0])
        mask = np.repeat(inside, b.loop_lengths)
        z = 1
        counts = np.bincount(b.visit_ensemble[mask & (b.states == z)], minlength=b.n)
        GD = eD.green_matrix
        ctx.mc_samples("restriction.N", "loops inside D form the soup of e^D", counts, eD.lam[0] * GD[0, 0] - 1)
        ctx.mc_samples("restriction.count", "loops inside D form the soup of e^D", np.bincount(b.ensemble[inside], minlength=b.n), ex.loop_mass_nontrivial(eD))
    # holding times given the discrete loop
    at_x = b.holdings[b.states == 0]
    if len(at_x) >= 2:
        lam = e.lam[0]
        ctx.mc_samples("holding.mean", "holding at a visit of x is Exp(lam_x)", at_x, 1 / lam)
        ctx.mc_samples("holding.second", "holding second moment 2 / lam^2", at_x**2, 2 / lam**2)
        ctx.mc_samples("holding.third", "holding third moment 6 / lam^3", at_x**3, 6 / lam**3)
    if b.loop_lengths.size:
        ld = length_distribution(e)
        counts = np.array([(b.loop_lengths == k).sum() for k in ld.lengths], dtype=float)
        keep = ld.probs > 0
        c, p = pool_cells(counts[keep], ld.probs[keep])
        ctx.chi2("length_distribution", "loop length law Tr(P^k) / (k m)", chi_squared(c, p), int(counts.sum()))
    if ctx.y is not None:
        # the functional is evaluated loop by loop, so use a subset of the soups
        n_sub = min(b.n, 20000)
        vals = np.zeros(n_sub)
        for ens, l in b.loop_samples():
            if ens >= n_sub:
                break
            vals[ens] += loop_functional(e, l, "multi_occupation", points=[ctx.x, ctx.y])
        ctx.mc_samples("multi_occupation.xy", "mu(l^{x,y}) = G[x, y] G[y, x]", vals, G[0, 1] ** 2)


def _soup_alpha2(ctx: _Ctx):
    e = ctx.e
    b = sample_soups(e, 2.0, ctx.n, ctx.rng)
    occ = b.occupation()
    chi = _chi_values(e)["chi1"]
    ctx.mc_samples("laplace.a2.chi1", "E exp(-<L_2, chi>) = det(I + G M_chi)^-2", np.exp(-occ @ chi), ex.occupation_laplace_exact(e, chi, 2.0))
    ctx.mc_samples("moment1.a2.x", "E <L_2, delta_x> = 2 G[x, x]", occ[:, 0], ex.occupation_moment_exact(e, {ctx.x: 1.0}, 1, 2.0))
    ctx.mc_samples("moment2.a2.x", "E <L_2, delta_x>^2 = Per_2", occ[:, 0] ** 2, ex.occupation_moment_exact(e, {ctx.x: 1.0}, 2, 2.0))
    ctx.mc_samples("avoid.a2.x", "P(no loop meets x) at alpha = 2", ~b.meets([0]), ex.avoidance_probability(e, [ctx.x], 2.0))


# -- Gaussian field ----------------------------------------------------------


def _dynkin_laws(ctx: _Ctx):
    e = ctx.e
    b = sample_soups(e, 1.0, ctx.n, ctx.rng)
    occ = b.occupation()
    phi = sample_fields(e, ctx.n, ctx.rng)
    hs = half_square(phi)
    for key, chi in _chi_values(e).items():
        target = ex.occupation_laplace_exact(e, chi, 1.0)
        ctx.mc_samples(f"laplace.soup.{key}", "E exp(-<L_1, chi>) = det(I + G M_chi)^-1", np.exp(-occ @ chi), target)
        ctx.mc_samples(f"laplace.field.{key}", "E exp(-<|phi|^2/2, chi>) = det(I + G M_chi)^-1", np.exp(-hs @ chi), target)
    for k in (1, 2, 3):
        m = ex.occupation_moment_exact(e, {ctx.x: 1.0}, k)
        ctx.mc_samples(f"moment{k}.soup", "soup occupation moments are alpha-permanents", occ[:, 0] ** k, m)
        ctx.mc_samples(f"moment{k}.field", "half-square moments are alpha-permanents", hs[:, 0] ** k, m)
    G = e.green_matrix
    ctx.mc_samples("cov.xx", "E phi_x conj(phi_x) = 2 G[x, x]", np.abs(phi[:, 0]) ** 2, 2 * G[0, 0])
    ctx.mc_samples("mean.x", "E Re phi_x = 0", phi[:, 0].real, 0.0)
    if ctx.y is not None:
        pr = phi[:, 0] * np.conj(phi[:, 1])
        ctx.mc_samples("cov.xy", "E phi_x conj(phi_y) = 2 G[x, y]", pr.real, 2 * G[0, 1])
        ctx.mc_samples("pseudo_cov.xy", "E phi_x phi_y = 0", (phi[:, 0] * phi[:, 1]).real, 0.0)
    # centered occupation field against the first Wick power
    s = G[0, 0]
    ctx.agree("centered.second_moment", "(L - sigma) and W_1(|phi|^2/2) share second moments", Estimate.from_samples((occ[:, 0] - s) ** 2), Estimate.from_samples(wick_power(hs[:, 0], s, 1) ** 2))
    ctx.mc_samples("centered.mean", "E (L^x - sigma_x) = 0", occ[:, 0] - s, 0.0)


def _dynkin_iso(ctx: _Ctx):
    e = ctx.e
    x = ctx.x
    y = ctx.y if ctx.y is not None else x
    for key in ("chi1", "chi2"):
        chi = _chi_values(e)[key]
        target = dynkin_target(e, x, y, chi)
        rhs = Estimate.from_samples(dynkin_rhs_samples(e, x, y, chi, ctx.n, ctx.rng))
        lhs = Estimate.from_samples(dynkin_lhs_samples(e, x, y, chi, ctx.n, ctx.rng))
        ctx.mc(f"rhs.{key}", "int E F(L_1 + gamma) mu^{x,y} = G_chi[x,y] det(G_chi G^-1)", rhs, target)
        ctx.mc(f"lhs.{key}", "E phi_x conj(phi_y)/2 F(|phi|^2/2) = G_chi[x,y] det(G_chi G^-1)", lhs, target)
        ctx.agree(f"agree.{key}", "both sides of the isomorphism agree", rhs, lhs)


def _wick(ctx: _Ctx):
    e = ctx.e
    phi = sample_fields(e, ctx.n, ctx.rng)
    s = e.green_matrix[0, 0]
    v = half_square(phi[:, 0])
    W = {k: wick_power(v, s, k) for k in range(4)}
    for k in (1, 2, 3):
        ctx.mc_samples(f"mean.W{k}", "E W_n = 0", W[k], 0.0)
    for a in range(1, 4):
        for c in range(a + 1, 4):
            ctx.mc_samples(f"orth.W{a}W{c}", "E W_n W_m = 0 for n != m", W[a] * W[c], 0.0)
    ctx.mc_samples("norm.W2", "E W_2^2 = (2!)^2 sigma^4", W[2] ** 2, 4 * s**4)


def _shift(ctx: _Ctx):
    e = ctx.e
    phi = sample_fields(e, ctx.n, ctx.rng)
    f = 0.2 * (-1.0) ** np.arange(e.n)
    w = np.exp(shift_log_density(e, f, phi))
    ctx.mc_samples("normalization", "E exp(<-Lf, phi> - e(f)/2) = 1", w, 1.0)
    ctx.mc_samples("mean_shift.x", "E Re phi_x under the shifted law = f_x", phi[:, 0].real * w, f[0])


def _bridges(ctx: _Ctx):
    e = ctx.e
    x = ctx.x
    stream = UniformStream(ctx.rng)
    chi = _chi_values(e)["chi1"]
    vals = np.array([math.exp(-sample_bridge(e, x, x, stream).occupation() @ chi) for _ in range(ctx.n)])
    ctx.mc_samples("bridge.xx", "E exp(-<gamma, chi>) under the bridge = G_chi[x,x] / G[x,x]", vals, green_chi(e, chi).matrix[0, 0] / e.green_matrix[0, 0])
    if ctx.y is not None:
        vals = np.array([math.exp(-sample_bridge(e, x, ctx.y, stream).occupation() @ chi) for _ in range(ctx.n)])
        ctx.mc_samples("bridge.xy", "bridge Laplace G_chi[x,y] / G[x,y]", vals, green_chi(e, chi).matrix[0, 1] / e.green_matrix[0, 1])
    vals = np.array([math.exp(-sample_path_to_death(e, x, stream).occupation() @ chi) for _ in range(ctx.n)])
    ctx.mc_samples("path.x", "E^x exp(-<gamma, chi>) = sum_y G_chi[x, y] kappa_y", vals, float(green_chi(e, chi).matrix[0] @ e.killing))


# -- trees -------------------------------------------------------------------


def _tree_key(e: EnergyForm, t) -> int:
    """Encoded statistic of a tree used when the tree set is too large to enumerate."""
    roots = sum(1 for p in t.parent if p == e.n)
    return t.parent[0] * (e.n + 1) + roots


def _wilson_trees(ctx: _Ctx):
    e = ctx.e
    stream = UniformStream(ctx.rng)
    trees = [wilson(e, stream)[0] for _ in range(ctx.n)]
    links = e.links()
    i, j = links[0]
    ctx.mc_samples("inclusion.1", "P(link in tree) = C K", [t.contains(i, j) for t in trees], transfer_current_inclusion(e, [e.link_name(links[0])]))
    pair = _adjacent_pair(links)
    if pair is not None:
        (a, b2), (c, d) = pair
        ctx.mc_samples(
            "inclusion.2", "P(two links in tree) = prod C det K", [t.contains(a, b2) and t.contains(c, d) for t in trees], transfer_current_inclusion(e, [e.link_name(pair[0]), e.link_name(pair[1])])
        )
    g = {e.link_name(l): 0.5 for l in links}
    ctx.exact("link_laplace.uniform", "every tree has |X| links: E_ST exp(-g |X|)", ex.tree_link_laplace_exact(e, g), math.exp(-0.5 * e.n), tol=1e-9)
    g2 = {e.link_name(l): (0.3 if l[1] < e.n else 0.9) for l in links}
    vals = [math.exp(-sum(0.9 if p == e.n else 0.3 for p in t.parent)) for t in trees]
    ctx.mc_samples("link_laplace.mixed", "E_ST exp(-sum g) = det(I + K M_C(e^-g - 1))", vals, ex.tree_link_laplace_exact(e, g2))
    if e.n <= MAX_ENUMERATION_SIZE:
        enum = enumerate_trees(e)
        index = {t.parent: k for k, (t, _) in enumerate(enum)}
        counts = np.bincount([index[t.parent] for t in trees], minlength=len(enum)).astype(float)
        c, p = pool_cells(counts, np.array([p for _, p in enum]))
        ctx.chi2("frequencies", "P_ST(tree) = Z_e prod C", chi_squared(c, p), ctx.n)
        first = [index[t.parent] for t in trees]
    else:
        first = [_tree_key(e, t) for t in trees]
    order = list(reversed(e.vertices))
    other = [wilson(e, stream, order)[0] for _ in range(ctx.n)]
    second = [index[t.parent] for t in other] if e.n <= MAX_ENUMERATION_SIZE else [_tree_key(e, t) for t in other]
    ctx.chi2("ordering", "tree law does not depend on the ordering", chi_squared_two_sample(first, second), 2 * ctx.n)


def _erased(ctx: _Ctx):
    e = ctx.e
    stream = UniformStream(ctx.rng)
    if ctx.link is not None:
        i, j = e.idx(ctx.link[0]), e.idx(ctx.link[1])
        pair = {i, j}

        def traversals(loops):
            t = 0
            for l in loops:
                c = l.cycle
                p = len(c)
                if p < 2:
                    continue
                t += sum(1 for k in range(p) if {c[k], c[(k + 1) % p]} == pair)
            return t

        w = np.array([traversals(wilson(e, stream)[1]) for _ in range(ctx.n)])
        b = sample_soups(e, 1.0, ctx.n, ctx.rng)
        s = b.link_counts(i, j) + b.link_counts(j, i)
        ctx.chi2("traversals", "erased loops of Wilson ~ nontrivial loops of L_1", chi_squared_two_sample(w, s), 2 * ctx.n)
        ctx.mc_samples("traversals.mean", "E (N_xy + N_yx) over erased loops = 2 C G[x, y]", w, 2 * e.conductance[i, j] * e.green_matrix[i, j])
        lens = np.array([sum(len(l.cycle) for l in wilson(e, stream)[1]) for _ in range(ctx.n)])
        ctx.chi2("total_length", "erased loops of Wilson ~ nontrivial loops of L_1", chi_squared_two_sample(lens, b.per_ensemble(np.ones(len(b.states))).astype(int)), 2 * ctx.n)
    if e.n > MAX_ENUMERATION_SIZE + 1:
        return
    x = ctx.x
    paths = self_avoiding_paths_to_death(e, x)
    index = {tuple(e.idx(list(p))): k for k, p in enumerate(paths)}
    probs = np.array([be_mass_exact(e, x, p) for p in paths])
    chi = _chi_values(e)["chi2"]
    skel_ids = []
    lap: dict[int, list[float]] = {}
    for _ in range(ctx.n):
        p = sample_path_to_death(e, x, stream)
        sk, _ = loop_erase(p)
        k = index[sk.states]
        skel_ids.append(k)
        lap.setdefault(k, []).append(math.exp(-p.occupation() @ chi))
    counts = np.bincount(skel_ids, minlength=len(paths)).astype(float)
    c, p = pool_cells(counts, probs)
    ctx.chi2("be_image", "loop-erased P^x has law P^x_BE", chi_squared(c, p), ctx.n)
    G = e.green_matrix
    Gc = green_chi(e, chi).matrix
    top = sorted(lap, key=lambda k: (-len(lap[k]), k))[:3]
    for k in top:
        if len(lap[k]) < 100:
            continue
        idx = list(e.idx(list(paths[k][:-1])))
        target = np.linalg.det(Gc[np.ix_(idx, idx)]) / np.linalg.det(G[np.ix_(idx, idx)])
        ctx.mc_samples(f"be_conditional.{'-'.join(paths[k][:-1])}", "E[exp(-<gamma, chi>) | BE = eta] = det G_chi|eta / det G|eta", lap[k], target)


# -- currents, energy variation, traces ---------------------------------------


def _fundamental_current(e: EnergyForm, value: float) -> Current:
    """``value`` on each non-tree link of a BFS spanning forest (oriented low to high index)."""
    n = e.n
    C = e.conductance
    seen = [False] * n
    tree = set()
    for root in range(n):
        if seen[root]:
            continue
        seen[root] = True
        queue = [root]
        while queue:
            u = queue.pop(0)
            for v in range(n):
                if C[u, v] > 0 and not seen[v]:
                    seen[v] = True
                    tree.add((min(u, v), max(u, v)))
                    queue.append(v)
    entries = [(e.vertices[i], e.vertices[j], value) for i, j in e.links(with_cemetery=False) if (i, j) not in tree]
    return Current.from_entries(e, entries)


def _currents(ctx: _Ctx):
    e = ctx.e
    b = sample_soups(e, 1.0, ctx.n, ctx.rng)
    n = e.n
    omega = _fundamental_current(e, math.pi)
    total = b.transition_sum(omega.omega[:n, :n])
    z = ex.current_laplace_exact(e, omega)
    ctx.mc_samples("laplace.real", "E exp(i sum int omega) = Z_{e,omega} / Z_e", np.cos(total), z.real)
    ctx.mc_samples("laplace.imag", "E sin(sum int omega) = 0", np.sin(total), z.imag)
    theta = 0.4
    total = b.transition_sum(_fundamental_current(e, theta).omega[:n, :n])
    ctx.mc_samples("laplace.theta", "E exp(i sum int omega) = Z_{e,omega} / Z_e", np.cos(total), ex.current_laplace_exact(e, _fundamental_current(e, theta)).real)
    unit = _fundamental_current(e, 1.0)
    per_loop = b.per_loop(unit.omega[:n, :n][b.states, b.successors])
    winding = np.bincount(b.ensemble[np.abs(per_loop) > 0.5], minlength=b.n)
    ctx.mc_samples("winding_mass", "mu(int omega != 0) by quadrature", winding, ex.winding_nonzero_mass(e, unit))


def _radon_nikodym(ctx: _Ctx):
    e = ctx.e
    b = sample_soups(e, 1.0, ctx.n, ctx.rng)
    e2 = ex.scaled_conductance_form(e, 0.8)
    steps = b.per_ensemble(np.ones(len(b.states)))
    ctx.mc_samples("scaled.08", "E prod_l dmu_e'/dmu_e = Z_e' / Z_e", 0.8**steps, math.exp(ex.log_zeta_ratio(e, e2)))
    worst = 0.0
    for k, (_, l) in enumerate(b.loop_samples()):
        if k >= 500:
            break
        worst = max(worst, abs(loop_functional(e, l, "rn_weight", other=e2) - 0.8 ** len(l)))
    ctx.exact("weight_functional", "rn weight of a loop with lam fixed is 0.8^p", worst, 0.0, relative=False)
    # killing raised too: lam changes, so holding times enter the weight
    e3 = e.with_matrices(killing=e.killing + 0.3)
    occ = b.occupation()
    # only the holding times enter the weight; restricted to nontrivial loops
    w = np.exp(-0.3 * (occ - b.trivial).sum(axis=1))
    m = ex.loop_mass_nontrivial
    ctx.mc_samples("killing.03", "E prod_l e^{-<dlam, l>} over nontrivial loops = exp(m_e' - m_e)", w, math.exp(m(e3) - m(e)))
    if ctx.link is not None:
        i, j = e.idx(ctx.link[0]), e.idx(ctx.link[1])
        t = 0.8
        nn = b.link_counts(i, j) + b.link_counts(j, i)
        ctx.mc_samples("link_laplace.t", "E exp(-t N_link) = (det(M - C e^-g) / det(M - C))^-1", np.exp(-t * nn), ex.link_laplace_exact(e, {ctx.link: t}).canonical)


def _trace(ctx: _Ctx):
    e = ctx.e
    F = list(e.vertices[: max(1, e.n - 1)])
    f = e.idx(F)
    eF = trace_energy(e, F)
    b = sample_soups(e, 1.0, ctx.n, ctx.rng)
    pos = {v: k for k, v in enumerate(f)}
    m = len(f)
    traced_N = np.zeros((ctx.n, m))
    traced_loops = np.zeros(ctx.n)
    for ens, l in b.loop_samples():
        tl = loop_trace(l, f)
        if tl is None or len(tl) < 2:
            continue
        traced_loops[ens] += 1
        for s in tl.cycle:
            traced_N[ens, pos[s]] += 1
    direct = sample_soups(eF, 1.0, ctx.n, ctx.rng)
    dN = direct.visit_counts()
    GF = eF.green_matrix
    for k, v in enumerate(F[:4]):
        ctx.agree(f"N_x.{v}", "traced soup matches the soup of the trace", Estimate.from_samples(traced_N[:, k]), Estimate.from_samples(dN[:, k]))
        ctx.mc_samples(f"N_x.traced.{v}", "E N_x of traced loops = lam^F G[x, x] - 1", traced_N[:, k], eF.lam[k] * GF[k, k] - 1)
    ctx.agree("loop_count", "traced soup matches the soup of the trace", Estimate.from_samples(traced_loops), Estimate.from_samples(direct.loop_counts()))
    chi = np.zeros(e.n)
    chi[f] = 0.5
    occ_full = b.occupation() @ chi
    occ_dir = direct.occupation() @ chi[f]
    target = ex.occupation_laplace_exact(eF, chi[f])
    ctx.exact("laplace.exact", "occupation on F is the occupation of the trace", target, ex.occupation_laplace_exact(e, chi))
    ctx.mc_samples("laplace.traced", "E exp(-<L|F, chi>) under the original soup", np.exp(-occ_full), target)
    ctx.mc_samples("laplace.direct", "E exp(-<L, chi>) under the soup of the trace", np.exp(-occ_dir), target)


# -- registry ----------------------------------------------------------------

Check = Callable[[_Ctx], None]

_CHECKS: dict[str, Check] = {
    "exact.green": _exact_green,
    "exact.resolvent": _exact_resolvent,
    "exact.killed": _exact_killed,
    "exact.transfer": _exact_transfer,
    "exact.trace": _exact_trace,
    "exact.twisted": _exact_twisted,
    "exact.trees": _exact_trees,
    "exact.link_laplace": _exact_link_laplace,
    "exact.masses": _exact_masses,
    "exact.h_transform": _exact_h_transform,
    "fd.kappa": _fd_kappa,
    "fd.link_count": _fd_link_count,
    "fd.moments": _fd_moments,
    "soup.a1": _soup_alpha1,
    "soup.a2": _soup_alpha2,
    "dynkin.laws": _dynkin_laws,
    "dynkin.iso": _dynkin_iso,
    "dynkin.wick": _wick,
    "dynkin.shift": _shift,
    "dynkin.bridges": _bridges,
    "wilson.trees": _wilson_trees,
    "erased.loops": _erased,
    "currents.soup": _currents,
    "rn.soup": _radon_nikodym,
    "trace.soup": _trace,
}

SUITES: dict[str, list[str]] = {
    "exact-only": [k for k in _CHECKS if k.startswith("exact.")],
    "finite-diff": [k for k in _CHECKS if k.startswith("fd.")],
    "soup": ["soup.a1", "soup.a2"],
    "dynkin": ["dynkin.laws", "dynkin.iso", "dynkin.wick", "dynkin.shift", "dynkin.bridges"],
    "wilson": ["wilson.trees"],
    "erased": ["erased.loops"],
    "currents": ["currents.soup"],
    "radon-nikodym": ["rn.soup"],
    "trace": ["trace.soup"],
}
SUITES["all"] = list(_CHECKS)

SAMPLING_FREE = {"exact-only", "finite-diff"}


def check_seed(seed: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])


def run_check(e: EnergyForm, name: str, n: int, seed: int | None, tol: float = DEFAULT_TOL, timings: bool = False) -> list[Row]:
    if name not in _CHECKS:
        raise KeyError(f"unknown check {name!r}")
    if seed is None:
        rng = None
        tag = "-"
    else:
        rng = np.random.default_rng(check_seed(seed, name))
        tag = f"{seed}:{zlib.crc32(name.encode())}"
    ctx = _Ctx(e, n, tol, rng, tag)
    t0 = time.perf_counter()
    _CHECKS[name](ctx)
    dt = time.perf_counter() - t0 if timings else None
    return [Row(**{**asdict(r), "name": _row_name(name, r.name), "runtime": dt}) for r in ctx.rows]


def _row_name(check: str, row: str) -> str:
    last = check.rsplit(".", 1)[-1]
    if row.startswith(last + "."):
        row = row[len(last) + 1 :]
    return f"{check}.{row}"


def run_suite(e: EnergyForm, suite: str, n: int = 20_000, seed: int | None = None, tol: float = DEFAULT_TOL, timings: bool = False) -> IdentityReport:
    """Run every check of ``suite``; rows come back sorted by name."""
    if suite not in SUITES:
        raise KeyError(f"unknown suite {suite!r}; choose from {sorted(SUITES)}")
    if suite not in SAMPLING_FREE and seed is None:
        raise ValueError(f"suite {suite!r} samples and needs an explicit seed")
    if n < 2:
        raise ValueError("n must be at least 2")
    rows: list[Row] = []
    for name in SUITES[suite]:
        rows.extend(run_check(e, name, n, seed, tol, timings))
    rows.sort(key=lambda r: r.name)
    return IdentityReport(suite, graph_digest(e), n, seed, tol, rows)


def permuted(e: EnergyForm, rho: dict[str, str]) -> EnergyForm:
    """The form whose value at ``(x, y)`` is that of ``e`` at ``(rho x, rho y)``, same vertex order."""
    if sorted(rho) != sorted(e.vertices) or sorted(rho.values()) != sorted(e.vertices):
        raise ValueError("rho must be a permutation of the vertices")
    perm = e.idx([rho[v] for v in e.vertices])
    C = e.conductance[np.ix_(perm, perm)]
    entries = [(e.vertices[i], e.vertices[j], C[i, j]) for i in range(e.n) for j in range(i + 1, e.n) if C[i, j] > 0]
    return build_energy(e.vertices, entries, {v: e.killing[p] for v, p in zip(e.vertices, perm)})


def rho_invariance(e: EnergyForm, rho: dict[str, str], suite: str, n: int, seed: int) -> list[tuple[str, float]]:
    """z-scores of the difference of every Monte Carlo row between ``e`` and its image under ``rho``.

    The image is run with an independent seed, so each z is a two-sample statistic.
    """
    a = run_suite(e, suite, n, seed)
    b = run_suite(permuted(e, rho), suite, n, seed + 1)
    out = []
    for ra, rb in zip(a.rows, b.rows):
        assert ra.name == rb.name
        if ra.kind == "mc":
            se = math.hypot(ra.stderr, rb.stderr)
            z = 0.0 if se == 0 and ra.estimate == rb.estimate else (ra.estimate - rb.estimate) / se if se else math.inf
            out.append((ra.name, z))
        elif ra.kind == "exact":
            out.append((ra.name, 0.0 if abs(ra.estimate - rb.estimate) <= 1e-9 * max(1.0, abs(ra.estimate)) else math.inf))
    return out
