"""The twelve acceptance criteria, each at its stated sample size and tolerance.

Every criterion records one PASS/FAIL line (with its worst statistic); the
lines are printed at the end of the pytest run and by ``python -m
tests.test_acceptance``.
"""

from __future__ import annotations

import io
import math
from pathlib import Path

import numpy as np
import pytest

from loopsoup import cli
from loopsoup import exact as ex
from loopsoup import gff
from loopsoup import verify as vf
from loopsoup.energy import Current, trace_energy
from loopsoup.fixtures import FIXTURES, g2, k3, random_energy, sq1
from loopsoup.loops import loop_trace, sample_soups
from loopsoup.paths import (
    UniformStream,
    be_mass_exact,
    enumerate_trees,
    loop_erase,
    sample_path_to_death,
    self_avoiding_paths_to_death,
    transfer_current_inclusion,
    wilson,
)
from loopsoup.stats import Estimate, chi_squared, chi_squared_two_sample, pool_cells

Z_MAX = 4.0
P_MIN = 1e-3
N_SOUP = 200_000
N_WILSON = 100_000
FIXTURE_DIR = Path(__file__).resolve().parent.parent / "fixtures"

RESULTS: dict[int, tuple[bool, str]] = {}


def rng_for(criterion: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([42, criterion, stream])


class Checks:
    """Collects the individual comparisons of one criterion."""

    def __init__(self):
        self.items: list[tuple[str, bool, str]] = []

    def z(self, label: str, est: Estimate, exact: float):
        z = est.z(exact)
        self.items.append((label, abs(z) <= Z_MAX, f"z={z:+.2f}"))

    def p(self, label: str, p: float):
        self.items.append((label, p > P_MIN, f"p={p:.3g}"))

    def close(self, label: str, value: float, reference: float, tol: float):
        err = abs(value - reference) / max(1.0, abs(reference))
        self.items.append((label, err <= tol, f"err={err:.1e}"))

    def flag(self, label: str, ok: bool, detail: str = ""):
        self.items.append((label, bool(ok), detail))

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.items)

    def summary(self) -> str:
        bad = [f"{l} {d}" for l, ok, d in self.items if not ok]
        if bad:
            return "; ".join(bad)
        return f"{len(self.items)} checks"


def record(number: int, title: str, checks: Checks):
    RESULTS[number] = (checks.passed, f"{title}: {checks.summary()}")
    assert checks.passed, checks.summary()


def est(values) -> Estimate:
    return Estimate.from_samples(values)


CHI = {
    "g2": [np.array([0.7, 0.0]), np.array([0.3, 0.3]), np.array([0.2, 0.7])],
    "k3": [np.array([0.7, 0.0, 0.0]), np.array([0.3, 0.3, 0.3]), np.array([0.2, 0.45, 0.7])],
}


# -- 1. exact suite --------------------------------------------------------------

REQUIRED_EXACT = [
    "exact.green.kappa",
    "exact.green.inverse",
    "exact.resolvent.laplace_routes",
    "exact.killed.det_ratio",
    "exact.transfer.psd",
    "exact.transfer.orientation",
    "exact.trace.zeta_factorization",
    "exact.trace.green",
    "exact.twisted.zero",
]


def test_criterion_01_exact_suite():
    c = Checks()
    forms = {name: f() for name, f in FIXTURES.items()}
    forms.update({f"random{k}": random_energy(rng_for(1, k), max_n=10) for k in range(20)})
    for name, e in forms.items():
        report = vf.run_suite(e, "exact-only", tol=1e-10)
        names = [r.name for r in report.rows]
        missing = [req for req in REQUIRED_EXACT if not any(n.startswith(req) for n in names)]
        worst = max(r.statistic for r in report.rows)
        c.flag(name, report.passed and not missing and e.n <= 10, f"worst err={worst:.1e} missing={missing}")
    record(1, "exact identities on 4 fixtures + 20 random graphs (tol 1e-10)", c)


# -- 2. finite differences -------------------------------------------------------


def test_criterion_02_finite_differences():
    c = Checks()
    for name, f in FIXTURES.items():
        e = f()
        for i, v in enumerate(e.vertices):
            h = 1e-5
            up = e.with_matrices(killing=e.killing + h * np.eye(e.n)[i])
            dn = e.with_matrices(killing=e.killing - h * np.eye(e.n)[i])
            d = (ex.log_zeta(up) - ex.log_zeta(dn)) / (2 * h)
            c.close(f"{name} dlogZ/dkappa_{v}", d, -e.green_matrix[i, i], 1e-6)
        for i, j in e.links(with_cemetery=False):
            x, y = e.vertices[i], e.vertices[j]
            h = 1e-5
            d = (ex.link_count_log_mass(e, x, y, 1 + h) - ex.link_count_log_mass(e, x, y, 1 - h)) / (2 * h)
            c.close(f"{name} mu(N_{x}{y})", d, e.green_matrix[i, j] * e.conductance[i, j], 1e-6)
        report = vf.run_suite(e, "finite-diff")
        c.flag(f"{name} finite-diff suite", report.passed)
    record(2, "finite-difference derivatives (tol 1e-6)", c)


# -- 3, 4. soup Laplace transform and moments -------------------------------------


@pytest.fixture(scope="module")
def g2_soups():
    return {alpha: sample_soups(g2(), alpha, N_SOUP, rng_for(3, int(alpha))) for alpha in (1.0, 2.0)}


def test_criterion_03_soup_laplace(g2_soups):
    c = Checks()
    for alpha, exact in ((1.0, 0.6818182), (2.0, 0.4648760)):
        closed = ex.occupation_laplace_exact(g2(), [0.7, 0.0], alpha)
        c.close(f"alpha={alpha:g} closed form", closed, exact, 1e-7)
        vals = np.exp(-0.7 * g2_soups[alpha].occupation()[:, 0])
        c.z(f"alpha={alpha:g}", est(vals), closed)
    record(3, "soup Laplace transform on G2, alpha in {1,2}, n=2e5", c)


def test_criterion_04_moments(g2_soups):
    c = Checks()
    occ = g2_soups[1.0].occupation()[:, 0]
    for k, exact in ((1, 2 / 3), (2, 8 / 9)):
        c.close(f"permanent k={k}", ex.occupation_moment_exact(g2(), [1.0, 0.0], k), exact, 1e-12)
        c.z(f"moment k={k}", est(occ**k), exact)
    record(4, "occupation moments vs alpha-permanents on G2", c)


# -- 5. avoidance ----------------------------------------------------------------


def test_criterion_05_avoidance(g2_soups):
    c = Checks()
    c.z("G2 avoids a", est(~g2_soups[1.0].meets([0])), 3 / 4)
    b = sample_soups(k3(), 1.0, N_SOUP, rng_for(5))
    c.z("K3 avoids a", est(~b.meets([0])), 2 / 3)
    both = b.loop_meets([0]) & b.loop_meets([1])
    joint = np.bincount(b.ensemble[both], minlength=b.n) > 0
    c.z("K3 joint a,b", est(joint), 1 / 4)
    c.close("K3 joint exact", ex.joint_visit_probability(k3(), "a", "b"), 1 / 4, 1e-12)
    record(5, "avoidance and joint visits, n=2e5", c)


# -- 6. Dynkin isomorphism ---------------------------------------------------------


def test_criterion_06_dynkin():
    c = Checks()
    for k, (name, e) in enumerate((("g2", g2()), ("k3", k3()))):
        soups = sample_soups(e, 1.0, N_SOUP, rng_for(6, 10 * k)).occupation()
        fields = gff.half_square(gff.sample_fields(e, N_SOUP, rng_for(6, 10 * k + 1)))
        for j, chi in enumerate(CHI[name]):
            exact = ex.occupation_laplace_exact(e, chi)
            c.z(f"{name} soup chi{j + 1}", est(np.exp(-soups @ chi)), exact)
            c.z(f"{name} field chi{j + 1}", est(np.exp(-fields @ chi)), exact)
        x, y = e.vertices[0], e.vertices[1]
        chi = CHI[name][0]
        target = gff.dynkin_target(e, x, y, chi)
        lhs = est(gff.dynkin_lhs_samples(e, x, y, chi, N_SOUP, rng_for(6, 10 * k + 2)))
        rhs = gff.dynkin_rhs(e, x, y, chi, rng_for(6, 10 * k + 3), n=N_SOUP)
        c.z(f"{name} field side", lhs, target)
        c.z(f"{name} soup+bridge side", rhs, target)
        c.z(f"{name} two-estimator agreement", lhs - rhs, 0.0)
    record(6, "Dynkin isomorphism on G2 and K3", c)


# -- 7. Wilson -------------------------------------------------------------------


def _wilson_runs(e, criterion, n=N_WILSON):
    stream = UniformStream(rng_for(criterion, e.n))
    return [wilson(e, stream) for _ in range(n)]


@pytest.fixture(scope="module")
def wilson_runs():
    return {"g2": _wilson_runs(g2(), 7), "k3": _wilson_runs(k3(), 7)}


def test_criterion_07_wilson(wilson_runs):
    c = Checks()
    for name, e in (("g2", g2()), ("k3", k3())):
        trees = enumerate_trees(e)
        c.flag(f"{name} tree count", len(trees) == {"g2": 3, "k3": 16}[name], str(len(trees)))
        index = {t.parent: i for i, (t, _) in enumerate(trees)}
        counts = np.bincount([index[t.parent] for t, _ in wilson_runs[name]], minlength=len(trees))
        probs = np.array([p for _, p in trees])
        if name == "g2":
            np.testing.assert_allclose(probs, 1 / 3)
        c.p(f"{name} tree frequencies", chi_squared(counts, probs))
        inc = np.array([t.contains(0, 1) for t, _ in wilson_runs[name]], dtype=float)
        c.z(f"{name} edge a-b inclusion", est(inc), {"g2": 2 / 3, "k3": 1 / 2}[name])
    e = k3()
    pair = transfer_current_inclusion(e, [("a", "b"), ("b", "c")])
    enum = sum(p for t, p in enumerate_trees(e) if t.contains(0, 1) and t.contains(1, 2))
    c.close("K3 pair inclusion vs 3/16", pair, 3 / 16, 1e-10)
    c.close("K3 pair inclusion vs enumeration", pair, enum, 1e-10)
    record(7, "Wilson trees, n=1e5", c)


# -- 8. erased loops ---------------------------------------------------------------


def _traversals(loops, pair):
    t = 0
    for l in loops:
        cyc = l.cycle
        p = len(cyc)
        t += sum(1 for k in range(p) if {cyc[k], cyc[(k + 1) % p]} == pair)
    return t


def test_criterion_08_erased_loops(wilson_runs):
    c = Checks()
    for name, e in (("g2", g2()), ("k3", k3())):
        w = np.array([_traversals(erased, {0, 1}) for _, erased in wilson_runs[name]])
        b = sample_soups(e, 1.0, N_WILSON, rng_for(8, e.n))
        s = b.link_counts(0, 1) + b.link_counts(1, 0)
        c.p(f"{name} traversals a-b", chi_squared_two_sample(w, s))
        stream = UniformStream(rng_for(8, 10 + e.n))
        paths = self_avoiding_paths_to_death(e, "a")
        index = {tuple(e.idx(list(p))): k for k, p in enumerate(paths)}
        ids = [index[loop_erase(sample_path_to_death(e, "a", stream))[0].states] for _ in range(N_WILSON)]
        counts = np.bincount(ids, minlength=len(paths)).astype(float)
        probs = np.array([be_mass_exact(e, "a", p) for p in paths])
        obs, pr = pool_cells(counts, probs)
        c.p(f"{name} loop-erasure image", chi_squared(obs, pr))
    record(8, "erased loops of Wilson vs soup alpha=1; loop-erasure image law", c)


# -- 9. currents -------------------------------------------------------------------


def test_criterion_09_currents():
    c = Checks()
    e = k3()
    w = Current.from_entries(e, [("a", "b", math.pi), ("b", "c", math.pi), ("c", "a", math.pi)])
    exact = ex.current_laplace_exact(e, w)
    c.close("K3 closed form", exact.real, 0.8, 1e-10)
    b = sample_soups(e, 1.0, N_SOUP, rng_for(9))
    theta = b.transition_sum(w.inner)
    c.z("K3 E cos", est(np.cos(theta)), 0.8)
    c.z("K3 E sin", est(np.sin(theta)), 0.0)

    e = sq1()
    w = Current.from_entries(e, [("a", "b", 1.0)])
    mass = ex.winding_nonzero_mass(e, w)
    b = sample_soups(e, 1.0, N_SOUP, rng_for(9, 1))
    winding = b.per_loop(w.inner[b.states, b.successors])
    per_soup = np.bincount(b.ensemble[np.abs(winding) > 0.5], minlength=b.n)
    c.z("SQ1 winding mass", est(per_soup), mass)
    record(9, "loop currents: K3 pi-cycle and SQ1 winding mass", c)


# -- 10. Radon-Nikodym -------------------------------------------------------------


def test_criterion_10_radon_nikodym(g2_soups):
    c = Checks()
    e = g2()
    e2 = ex.scaled_conductance_form(e, 0.8)
    c.flag("lam held fixed", np.allclose(e2.lam, e.lam))
    b = g2_soups[1.0]
    steps = b.per_ensemble(np.ones(len(b.states)))
    c.z("G2 weight functional", est(0.8**steps), math.exp(ex.log_zeta_ratio(e, e2)))
    worst = 0.0
    for name, f in FIXTURES.items():
        form = f()
        g = {form.link_name(l): 0.25 + 0.5 * k / 7 for k, l in enumerate(form.links(with_cemetery=False))}
        r = ex.link_laplace_exact(form, g)
        worst = max(worst, r.discrepancy)
        c.close(f"{name} canonical vs K-form", r.kform, r.canonical, 1e-10)
    c.flag("largest discrepancy", True, f"{worst:.1e}")
    record(10, "Radon-Nikodym weight on G2 (C'=0.8C); link-Laplace forms agree", c)


# -- 11. trace -------------------------------------------------------------------


def test_criterion_11_trace():
    c = Checks()
    e = k3()
    F = ["a", "b"]
    f = e.idx(F)
    tr = trace_energy(e, F)
    chi = np.array([0.5, 0.8])
    b = sample_soups(e, 1.0, N_SOUP, rng_for(11))
    n_visits = np.zeros((b.n, 2))
    n_loops = np.zeros(b.n)
    for ens, l in b.loop_samples():
        t = loop_trace(l, f)
        if t is None or len(t) < 2:
            continue
        n_loops[ens] += 1
        for s in t.cycle:
            n_visits[ens, f.index(s)] += 1
    traced_occ = b.occupation()[:, f]
    d = sample_soups(tr, 1.0, N_SOUP, rng_for(11, 1))
    direct_visits = d.visit_counts()
    for k, v in enumerate(F):
        c.z(f"N_{v}", est(n_visits[:, k]) - est(direct_visits[:, k]), 0.0)
    c.z("nontrivial loop count", est(n_loops) - est(d.loop_counts()), 0.0)
    c.z("occupation Laplace", est(np.exp(-traced_occ @ chi)) - est(np.exp(-d.occupation() @ chi)), 0.0)
    c.z("occupation Laplace exact", est(np.exp(-traced_occ @ chi)), ex.occupation_laplace_exact(tr, chi))
    record(11, "traced soup on K3, F={a,b} vs soup of the trace form", c)


# -- 12. reproducibility -------------------------------------------------------------


def test_criterion_12_reproducible_reports(tmp_path):
    c = Checks()
    for run in ("one", "two"):
        code = cli.main(
            ["verify", str(FIXTURE_DIR / "g2.json"), "--suite", "all", "--seed", "42", "--out-dir", str(tmp_path / run)],
            out=io.StringIO(),
            err=io.StringIO(),
        )
        c.flag(f"run {run} exit code", code == 0, str(code))
    for ext in ("json", "csv"):
        a = (tmp_path / "one" / f"all-report.{ext}").read_bytes()
        b = (tmp_path / "two" / f"all-report.{ext}").read_bytes()
        c.flag(f"{ext} byte-identical", a == b, f"{len(a)} bytes")
    record(12, "verify --seed 42 twice gives byte-identical reports", c)


def summary_lines() -> list[str]:
    lines = []
    for k in range(1, 13):
        if k in RESULTS:
            ok, text = RESULTS[k]
            lines.append(f"criterion {k:>2} {'PASS' if ok else 'FAIL'}  {text}")
        else:
            lines.append(f"criterion {k:>2} NOT RUN")
    return lines


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
