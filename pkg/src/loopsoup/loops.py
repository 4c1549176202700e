"""Discrete loops, loop functionals, and samplers for loops and Poisson loop soups.

Samplers take an explicit ``numpy.random.Generator``.  Draws are made in a
fixed documented order (see :meth:`LoopSampler.sample_cycles` and
:func:`sample_soups`) so identical seeds give identical ensembles.

Trivial one-point loops are never materialized: at each vertex their
aggregate occupation in a soup of intensity ``alpha`` is a
``Gamma(alpha, rate=lam[x])`` variable, which is the law implied by their
Laplace transform ``(lam / (lam + t))**alpha``.
"""

from __future__ import annotations

import json
import math
import weakref
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .energy import Current, EnergyForm

DEFAULT_TAIL_EPS = 1e-12
MAX_LOOP_LENGTH = 20_000


def canonical_rotation(seq: Sequence[int]) -> int:
    """Offset of the lexicographically least rotation of ``seq``."""
    p = len(seq)
    doubled = list(seq) * 2
    return min(range(p), key=lambda i: doubled[i : i + p])


def minimal_period(seq: Sequence[int]) -> int:
    p = len(seq)
    for d in range(1, p + 1):
        if p % d == 0 and all(seq[i] == seq[(i + d) % p] for i in range(p)):
            return d
    return p


@dataclass(frozen=True)
class DiscreteLoop:
    """A cyclic vertex-index sequence, stored in its least rotation."""

    cycle: tuple[int, ...]

    def __post_init__(self):
        if not self.cycle:
            raise ValueError("a loop needs at least one point")
        r = canonical_rotation(self.cycle)
        object.__setattr__(self, "cycle", tuple(self.cycle[r:] + self.cycle[:r]))

    @classmethod
    def from_names(cls, e: EnergyForm, names: Sequence[str]) -> "DiscreteLoop":
        return cls(tuple(e.idx(list(names))))

    def __len__(self) -> int:
        return len(self.cycle)

    def reversed(self) -> "DiscreteLoop":
        return DiscreteLoop(tuple(reversed(self.cycle)))

    def names(self, e: EnergyForm) -> list[str]:
        return [e.vertices[i] for i in self.cycle]

    @property
    def period(self) -> int:
        return minimal_period(self.cycle)

    def steps(self) -> Iterator[tuple[int, int]]:
        c = self.cycle
        for i in range(len(c)):
            yield c[i], c[(i + 1) % len(c)]


@dataclass(frozen=True)
class LoopSample:
    """A discrete loop with the intrinsic holding time of each visit."""

    cycle: tuple[int, ...]
    holding: tuple[float, ...]

    def __post_init__(self):
        if len(self.cycle) != len(self.holding) or not self.cycle:
            raise ValueError("one positive holding time per visit required")
        if any(not h > 0 for h in self.holding):
            raise ValueError("holding times must be positive")
        r = canonical_rotation(self.cycle)
        object.__setattr__(self, "cycle", tuple(self.cycle[r:] + self.cycle[:r]))
        object.__setattr__(self, "holding", tuple(self.holding[r:] + self.holding[:r]))

    @property
    def loop(self) -> DiscreteLoop:
        return DiscreteLoop(self.cycle)

    def __len__(self) -> int:
        return len(self.cycle)


@dataclass
class LoopEnsemble:
    loops: list[LoopSample]
    trivial: np.ndarray
    alpha: float = 1.0
    tail: float = 0.0

    def __post_init__(self):
        self.trivial = np.asarray(self.trivial, dtype=float)
        if np.any(self.trivial < 0):
            raise ValueError("trivial occupation must be nonnegative")

    def merge(self, other: "LoopEnsemble") -> "LoopEnsemble":
        """Superposition of two independent soups (intensities add)."""
        return LoopEnsemble(self.loops + other.loops, self.trivial + other.trivial, self.alpha + other.alpha, self.tail + other.tail)


@dataclass(frozen=True)
class OccupationField:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if np.any(v < 0):
            raise ValueError("occupation must be nonnegative")
        object.__setattr__(self, "values", v)


def discrete_loop_measure(e: EnergyForm, loop: DiscreteLoop | Sequence[str]) -> float:
    """Loop-measure mass of a nontrivial discrete loop (a rotation class)."""
    if not isinstance(loop, DiscreteLoop):
        loop = DiscreteLoop.from_names(e, loop)
    p = len(loop)
    if p < 2:
        raise ValueError("only loops with at least two points")
    C = e.conductance
    prod = 1.0
    for a, b in loop.steps():
        if C[a, b] <= 0:
            raise ValueError(f"no link between {e.vertices[a]} and {e.vertices[b]}")
        prod *= C[a, b] / e.lam[a]
    return loop.period / p * prod


class LengthDistribution(NamedTuple):
    lengths: np.ndarray
    probs: np.ndarray
    mass: float
    tail: float


def _spectral_radius(e: EnergyForm) -> float:
    s = 1.0 / np.sqrt(e.lam)
    S = s[:, None] * e.conductance * s[None, :]
    return float(np.max(np.abs(np.linalg.eigvalsh(S)))) if e.n else 0.0


class LoopSampler:
    """Sampler of the normalized nontrivial loop measure of one energy form.

    Loop lengths are truncated at the first ``K`` for which the bound
    ``n * rho**(K+1) / ((K+1) * (1 - rho))`` on the discarded mass falls
    below ``tail_eps`` times the retained mass.
    """

    def __init__(self, e: EnergyForm, tail_eps: float = DEFAULT_TAIL_EPS):
        if tail_eps <= 0:
            raise ValueError("tail_eps must be positive")
        self.form = e
        self.P = e.conductance / e.lam[:, None]
        rho = _spectral_radius(e)
        self.rho = rho
        n = e.n
        if rho == 0.0:
            self.kmax = 1
            self.powers = [np.eye(n), self.P]
            self.mass = 0.0
            self.tail = 0.0
            self.lengths = np.zeros(0, dtype=int)
            self.probs = np.zeros(0)
            return
        powers = [np.eye(n), self.P]
        traces = [float(n), 0.0]
        mass = 0.0
        k = 1
        while True:
            k += 1
            powers.append(powers[-1] @ self.P)
            traces.append(float(np.trace(powers[-1])))
            mass += traces[-1] / k
            bound = n * rho ** (k + 1) / ((k + 1) * (1 - rho))
            if mass > 0 and bound < tail_eps * mass:
                break
            if k >= MAX_LOOP_LENGTH:
                raise ValueError("spectral radius too close to 1 for the loop-length truncation")
        self.kmax = k
        self.powers = powers
        self.lengths = np.arange(2, k + 1)
        weights = np.array(traces[2:]) / self.lengths
        self.mass = float(weights.sum())
        self.probs = weights / self.mass
        self.tail = float(bound)
        self._stack = np.stack(powers)
        self._diag = np.einsum("kii->ki", self._stack)
        self._cum_len = np.cumsum(self.probs)

    def length_distribution(self) -> LengthDistribution:
        return LengthDistribution(self.lengths, self.probs, self.mass, self.tail)

    def sample_cycles(self, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Sample ``count`` loops; returns ``(offsets, states)`` with loop ``i`` at ``states[offsets[i]:offsets[i+1]]``.

        Draw order: ``count`` uniforms for the lengths, ``count`` for the base
        points, then for each step ``j = 1 .. kmax-1`` one uniform per loop
        still growing (in loop order).
        """
        if count == 0 or self.mass == 0.0:
            if count:
                raise ValueError("the form carries no nontrivial loops")
            return np.zeros(1, dtype=np.int64), np.zeros(0, dtype=np.int64)
        u = rng.random(count)
        k = self.lengths[np.minimum(np.searchsorted(self._cum_len, u * self._cum_len[-1], side="right"), len(self.lengths) - 1)]
        base_w = self._diag[k]
        base = _inverse_cdf(base_w, rng.random(count))
        kmax = int(k.max())
        seq = np.full((count, kmax), -1, dtype=np.int64)
        seq[:, 0] = base
        P = self.P
        for j in range(1, kmax):
            active = np.nonzero(k > j)[0]
            prev = seq[active, j - 1]
            back = self._stack[k[active] - j, :, base[active]]
            w = P[prev] * back
            seq[active, j] = _inverse_cdf(w, rng.random(len(active)))
        offsets = np.concatenate([[0], np.cumsum(k)])
        mask = np.arange(kmax)[None, :] < k[:, None]
        return offsets, seq[mask]


def _inverse_cdf(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    cum = np.cumsum(weights, axis=1)
    target = u * cum[:, -1]
    idx = (cum <= target[:, None]).sum(axis=1)
    return np.minimum(idx, weights.shape[1] - 1)


_SAMPLERS: "weakref.WeakKeyDictionary[EnergyForm, dict[float, LoopSampler]]" = weakref.WeakKeyDictionary()


def loop_sampler(e: EnergyForm, tail_eps: float = DEFAULT_TAIL_EPS) -> LoopSampler:
    per_form = _SAMPLERS.setdefault(e, {})
    if tail_eps not in per_form:
        per_form[tail_eps] = LoopSampler(e, tail_eps)
    return per_form[tail_eps]


def length_distribution(e: EnergyForm, tail_eps: float = DEFAULT_TAIL_EPS) -> LengthDistribution:
    return loop_sampler(e, tail_eps).length_distribution()


def sample_nontrivial_loop(e: EnergyForm, rng: np.random.Generator, tail_eps: float = DEFAULT_TAIL_EPS) -> LoopSample:
    """One loop from the nontrivial loop measure normalized to a probability."""
    offsets, states = loop_sampler(e, tail_eps).sample_cycles(1, rng)
    hold = rng.standard_exponential(len(states)) / e.lam[states]
    return LoopSample(tuple(int(s) for s in states), tuple(float(h) for h in hold))


@dataclass
class SoupBatch:
    """``n`` independent soups stored as flat arrays.

    Loop ``i`` belongs to ensemble ``ensemble[i]`` and occupies
    ``states[offsets[i]:offsets[i+1]]`` with matching ``holdings``.
    """

    form: EnergyForm
    alpha: float
    n: int
    ensemble: np.ndarray
    offsets: np.ndarray
    states: np.ndarray
    holdings: np.ndarray
    trivial: np.ndarray
    tail: float = 0.0
    _succ: np.ndarray | None = field(default=None, repr=False)

    @property
    def loop_lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def visit_ensemble(self) -> np.ndarray:
        return np.repeat(self.ensemble, self.loop_lengths)

    @property
    def visit_loop(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.ensemble)), self.loop_lengths)

    @property
    def successors(self) -> np.ndarray:
        """State visited after each visit, wrapping around inside its loop."""
        if self._succ is None:
            succ = np.empty_like(self.states)
            if len(self.states):
                succ[:-1] = self.states[1:]
                last = self.offsets[1:] - 1
                succ[last] = self.states[self.offsets[:-1]]
            self._succ = succ
        return self._succ

    def per_ensemble(self, visit_values: np.ndarray) -> np.ndarray:
        return np.bincount(self.visit_ensemble, weights=visit_values, minlength=self.n)

    def per_loop(self, visit_values: np.ndarray) -> np.ndarray:
        return np.bincount(self.visit_loop, weights=visit_values, minlength=len(self.ensemble))

    def loop_counts(self) -> np.ndarray:
        return np.bincount(self.ensemble, minlength=self.n)

    def occupation(self) -> np.ndarray:
        """Occupation field of each soup, shape ``(n, |X|)``, trivial loops included."""
        m = self.form.n
        occ = np.bincount(self.visit_ensemble * m + self.states, weights=self.holdings, minlength=self.n * m)
        return occ.reshape(self.n, m) + self.trivial

    def visit_counts(self) -> np.ndarray:
        """``N_x`` summed over the nontrivial loops of each soup, shape ``(n, |X|)``."""
        m = self.form.n
        return np.bincount(self.visit_ensemble * m + self.states, minlength=self.n * m).reshape(self.n, m)

    def link_counts(self, x: int, y: int) -> np.ndarray:
        """Oriented traversal counts ``N_{x,y}`` per soup."""
        mask = (self.states == x) & (self.successors == y)
        return np.bincount(self.visit_ensemble[mask], minlength=self.n)

    def transition_sum(self, weights: np.ndarray) -> np.ndarray:
        """``sum_{x,y} weights[x, y] N_{x,y}`` per soup."""
        return self.per_ensemble(weights[self.states, self.successors])

    def meets(self, F: Iterable[int]) -> np.ndarray:
        """Whether some nontrivial loop of each soup visits ``F``."""
        hit = np.isin(self.states, list(F))
        return np.bincount(self.visit_ensemble[hit], minlength=self.n) > 0

    def loop_meets(self, F: Iterable[int]) -> np.ndarray:
        hit = np.isin(self.states, list(F))
        return np.bincount(self.visit_loop[hit], minlength=len(self.ensemble)) > 0

    def loop_samples(self) -> Iterator[tuple[int, LoopSample]]:
        for i, ens in enumerate(self.ensemble):
            a, b = self.offsets[i], self.offsets[i + 1]
            yield int(ens), LoopSample(tuple(int(s) for s in self.states[a:b]), tuple(float(h) for h in self.holdings[a:b]))

    def ensemble_at(self, i: int) -> LoopEnsemble:
        loops = []
        for j in np.nonzero(self.ensemble == i)[0]:
            a, b = self.offsets[j], self.offsets[j + 1]
            loops.append(LoopSample(tuple(int(s) for s in self.states[a:b]), tuple(float(h) for h in self.holdings[a:b])))
        return LoopEnsemble(loops, self.trivial[i].copy(), self.alpha, self.tail)


def sample_soups(e: EnergyForm, alpha: float, n: int, rng: np.random.Generator, tail_eps: float = DEFAULT_TAIL_EPS) -> SoupBatch:
    """``n`` independent Poisson loop soups of intensity ``alpha`` times the loop measure.

    Draw order: Poisson loop counts (``n``), trivial occupations (``n x |X|``
    gammas), loop cycles (see :meth:`LoopSampler.sample_cycles`), then one
    standard exponential per visit for the holding times.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    sampler = loop_sampler(e, tail_eps)
    counts = rng.poisson(alpha * sampler.mass, size=n) if sampler.mass > 0 else np.zeros(n, dtype=np.int64)
    trivial = rng.gamma(alpha, 1.0, size=(n, e.n)) / e.lam[None, :]
    total = int(counts.sum())
    offsets, states = sampler.sample_cycles(total, rng)
    holdings = rng.standard_exponential(len(states)) / e.lam[states]
    ensemble = np.repeat(np.arange(n), counts)
    return SoupBatch(e, alpha, n, ensemble, offsets, states, holdings, trivial, alpha * sampler.tail)


def sample_soup(e: EnergyForm, alpha: float, rng: np.random.Generator, tail_eps: float = DEFAULT_TAIL_EPS) -> LoopEnsemble:
    return sample_soups(e, alpha, 1, rng, tail_eps).ensemble_at(0)


def occupation_field(e: EnergyForm, ens: LoopEnsemble) -> OccupationField:
    occ = np.array(ens.trivial, dtype=float, copy=True)
    for l in ens.loops:
        for s, h in zip(l.cycle, l.holding):
            occ[s] += h
    return OccupationField(occ)


# -- loop functionals ------------------------------------------------------


def _visits(l: LoopSample, x: int) -> list[float]:
    return [h for s, h in zip(l.cycle, l.holding) if s == x]


def _ordered_products(l: LoopSample, targets: Sequence[int]) -> float:
    """Sum over increasing visit positions ``i_1 < ... < i_k`` of the holding products matching ``targets``."""
    k = len(targets)
    acc = [1.0] + [0.0] * k
    for s, h in zip(l.cycle, l.holding):
        for j in range(k, 0, -1):
            if targets[j - 1] == s:
                acc[j] += acc[j - 1] * h
    return acc[k]


def multi_occupation(l: LoopSample, points: Sequence[int]) -> float:
    """Multiple occupation of the points in the given cyclic order.

    Sums the holding products over visit tuples that appear in cyclic order
    ``x_1 -> x_2 -> ... -> x_k``, i.e. over the ``k`` rotations of the
    targets read from the base point.  Its loop-measure mass is
    ``G[x_1, x_2] G[x_2, x_3] ... G[x_k, x_1]``.
    """
    k = len(points)
    if k < 2:
        return sum(_visits(l, points[0])) if k == 1 else 1.0
    return sum(_ordered_products(l, list(points[j:]) + list(points[:j])) for j in range(k))


def self_intersection(l: LoopSample, x: int, k: int) -> float:
    """``k``-fold self-intersection local time at ``x``: elementary symmetric sum of its holdings."""
    acc = [1.0] + [0.0] * k
    for h in _visits(l, x):
        for j in range(k, 0, -1):
            acc[j] += acc[j - 1] * h
    return acc[k]


def loop_functional(e: EnergyForm, l: LoopSample, kind: str, **params) -> float:
    """Evaluate a named loop functional.

    Kinds and parameters (vertices by name):

    - ``"N_xy"`` (x, y): oriented traversals of ``(x, y)``
    - ``"N_x"`` (x): visits to ``x``
    - ``"occupation"`` (x): total holding time at ``x``
    - ``"multi_occupation"`` (points)
    - ``"self_intersection"`` (x, k)
    - ``"current"`` (omega: Current): ``sum_{x,y} omega[x, y] N_{x,y}``
    - ``"rn_weight"`` (other: EnergyForm): density of the loop measure of ``other`` w.r.t. that of ``e``
    - ``"T"`` (x, y): ``C[x,y] (occ_x + occ_y) - N_xy - N_yx``
    """
    steps = _steps(l)
    if kind == "N_xy":
        x, y = e.idx(params["x"]), e.idx(params["y"])
        return float(sum(1 for a, b in steps if a == x and b == y))
    if kind == "N_x":
        x = e.idx(params["x"])
        return float(sum(1 for a, b in steps if a == x))
    if kind == "occupation":
        return float(sum(_visits(l, e.idx(params["x"]))))
    if kind == "multi_occupation":
        return multi_occupation(l, e.idx(list(params["points"])))
    if kind == "self_intersection":
        return self_intersection(l, e.idx(params["x"]), int(params["k"]))
    if kind == "current":
        w: Current = params["omega"]
        return float(sum(w.omega[a, b] for a, b in steps))
    if kind == "rn_weight":
        other: EnergyForm = params["other"]
        C, C2 = e.conductance, other.conductance
        log_w = 0.0
        for a, b in steps:
            if C2[a, b] == 0:
                return 0.0
            log_w += math.log(C2[a, b] / C[a, b])
        dlam = other.lam - e.lam
        log_w -= sum(dlam[s] * h for s, h in zip(l.cycle, l.holding))
        return math.exp(log_w)
    if kind == "T":
        x, y = e.idx(params["x"]), e.idx(params["y"])
        occ = sum(_visits(l, x)) + sum(_visits(l, y))
        n_links = sum(1 for a, b in steps if {a, b} == {x, y} and a != b)
        return float(e.conductance[x, y] * occ - n_links)
    raise ValueError(f"unknown loop functional {kind!r}")


def _steps(l: LoopSample) -> list[tuple[int, int]]:
    c = l.cycle
    p = len(c)
    if p == 1:
        return []
    return [(c[i], c[(i + 1) % p]) for i in range(p)]


def loop_trace(l: LoopSample, F: Iterable[int]) -> LoopSample | None:
    """Trace of the loop on the index set ``F``.

    Visits outside ``F`` are deleted and consecutive visits to the same
    point (cyclically) are merged, adding their holding times.  Returns
    ``None`` when the loop avoids ``F``.
    """
    F = set(F)
    kept = [(s, h) for s, h in zip(l.cycle, l.holding) if s in F]
    if not kept:
        return None
    merged: list[list] = []
    for s, h in kept:
        if merged and merged[-1][0] == s:
            merged[-1][1] += h
        else:
            merged.append([s, h])
    if len(merged) > 1 and merged[0][0] == merged[-1][0]:
        merged[0][1] += merged[-1][1]
        merged.pop()
    return LoopSample(tuple(s for s, _ in merged), tuple(h for _, h in merged))


# -- serialization ---------------------------------------------------------


def write_jsonl(batch: SoupBatch, fh: IO[str]) -> None:
    """One JSON record per loop (``ensemble``, ``cycle``, ``holdings``) and per trivial part."""
    e = batch.form
    fh.write(json.dumps({"format": "loopsoup-ensembles", "version": 1, "alpha": batch.alpha, "n": batch.n, "vertices": list(e.vertices), "tail": batch.tail}) + "\n")
    for i in range(batch.n):
        fh.write(json.dumps({"ensemble": i, "trivial": {v: float(batch.trivial[i, j]) for j, v in enumerate(e.vertices)}}) + "\n")
    for ens, l in batch.loop_samples():
        fh.write(json.dumps({"ensemble": ens, "cycle": [e.vertices[s] for s in l.cycle], "holdings": list(l.holding)}) + "\n")


def read_jsonl(e: EnergyForm, fh: IO[str]) -> list[LoopEnsemble]:
    header = json.loads(fh.readline())
    if header.get("format") != "loopsoup-ensembles":
        raise ValueError("not a loop ensemble file")
    n = header["n"]
    out = [LoopEnsemble([], np.zeros(e.n), header["alpha"], header.get("tail", 0.0)) for _ in range(n)]
    for line in fh:
        rec = json.loads(line)
        ens = out[rec["ensemble"]]
        if "trivial" in rec:
            for v, val in rec["trivial"].items():
                ens.trivial[e.idx(v)] = val
        else:
            ens.loops.append(LoopSample(tuple(e.idx(rec["cycle"])), tuple(rec["holdings"])))
    return out
