"""Paths to death, bridges, loop erasure, Wilson's algorithm and spanning-tree probabilities.

Path samplers draw from a :class:`UniformStream`: one uniform for each
holding time (``-log1p(-u) / lam``) followed by one uniform for each jump.
"""

from __future__ import annotations

import bisect
import itertools
import math
import weakref
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .energy import DELTA, EnergyForm, transfer_entries
from .exact import zeta
from .loops import LoopSample

MAX_ENUMERATION_SIZE = 8


class UniformStream:
    """Uniforms on ``[0, 1)`` pulled from a numpy generator in fixed-size blocks."""

    def __init__(self, rng: np.random.Generator, block: int = 4096):
        self.rng = rng
        self.block = block
        self._buf: list[float] = []
        self._pos = 0

    def __call__(self) -> float:
        if self._pos == len(self._buf):
            self._buf = self.rng.random(self.block).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u


def as_stream(rng) -> UniformStream:
    """Wrap a generator; samplers accept either, but a shared stream avoids a fresh block per call."""
    return rng if isinstance(rng, UniformStream) else UniformStream(rng)


@dataclass(frozen=True)
class Path:
    """Vertex-index sequence with a holding time per vertex visit.

    ``n`` is the number of vertices; a path may end at the cemetery,
    index ``n``, which carries no holding time.
    """

    states: tuple[int, ...]
    holdings: tuple[float, ...]
    n: int

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(int(s) for s in self.states))
        object.__setattr__(self, "holdings", tuple(float(h) for h in self.holdings))
        if self.n in self.states[:-1]:
            raise ValueError("the cemetery can only end a path")
        inner = len(self.states) - (1 if self.ends_at_cemetery else 0)
        if len(self.holdings) != inner:
            raise ValueError("one holding time per vertex visit")

    @property
    def ends_at_cemetery(self) -> bool:
        return bool(self.states) and self.states[-1] == self.n

    def names(self, e: EnergyForm) -> list[str]:
        names = e.vertices + (DELTA,)
        return [names[s] for s in self.states]

    def occupation(self) -> np.ndarray:
        occ = np.zeros(self.n)
        for s, h in zip(self.states, self.holdings):
            occ[s] += h
        return occ

    def visit_counts(self) -> np.ndarray:
        return np.bincount([s for s in self.states if s < self.n], minlength=self.n)


def path_from_names(e: EnergyForm, names: Sequence[str], holdings: Sequence[float] | None = None) -> Path:
    states = e.idx(list(names))
    if holdings is None:
        holdings = [1.0] * sum(1 for s in states if s < e.n)
    return Path(tuple(states), tuple(holdings), e.n)


class _Walker:
    """Cumulative jump tables of the chain on ``X u {DELTA}``."""

    def __init__(self, e: EnergyForm):
        self.n = e.n
        Ce = e.conductance_extended
        self.lam = e.lam.tolist()
        self.cum = []
        for x in range(e.n):
            row = Ce[x] / e.lam[x]
            self.cum.append(np.cumsum(row).tolist())
        self._bridge: dict[int, tuple[float, list[list[float]]]] = {}
        self.form = e

    def step(self, x: int, u: float) -> int:
        cum = self.cum[x]
        return min(bisect.bisect_right(cum, u * cum[-1]), self.n)

    def bridge_table(self, y: int):
        if y not in self._bridge:
            e = self.form
            G = e.green_matrix
            P = e.conductance / e.lam[:, None]
            h = G[:, y]
            stop = 1.0 / (e.lam[y] * G[y, y])
            rows = []
            for u in range(e.n):
                w = P[u] * h / h[u] if h[u] > 0 else np.zeros(e.n)
                rows.append(np.cumsum(w).tolist())
            self._bridge[y] = (stop, rows)
        return self._bridge[y]


_WALKERS: "weakref.WeakKeyDictionary[EnergyForm, _Walker]" = weakref.WeakKeyDictionary()


def _walker(e: EnergyForm) -> _Walker:
    w = _WALKERS.get(e)
    if w is None:
        w = _WALKERS[e] = _Walker(e)
    return w


def _holding(stream: UniformStream, lam: float) -> float:
    return -math.log1p(-stream()) / lam


def sample_path_to_death(e: EnergyForm, x: str, rng) -> Path:
    """Trajectory of the chain from ``x`` until it jumps to the cemetery."""
    stream = as_stream(rng)
    w = _walker(e)
    n = e.n
    cur = e.idx(x)
    if cur >= n:
        raise ValueError("start must be a vertex")
    states, holds = [cur], []
    while cur != n:
        holds.append(_holding(stream, w.lam[cur]))
        cur = w.step(cur, stream())
        states.append(cur)
    return Path(tuple(states), tuple(holds), n)


def sample_bridge(e: EnergyForm, x: str, y: str, rng) -> Path:
    """Path from ``x`` to ``y`` under the bridge measure normalized by its mass ``G[x, y]``.

    Runs the chain h-transformed by ``G[., y]``; at each visit to ``y`` it
    stops with probability ``1 / (lam[y] G[y, y])``.
    """
    stream = as_stream(rng)
    w = _walker(e)
    i, j = e.idx(x), e.idx(y)
    if e.green_matrix[i, j] <= 0:
        raise ValueError(f"{y} is unreachable from {x}")
    stop, rows = w.bridge_table(j)
    cur = i
    states, holds = [cur], [_holding(stream, w.lam[cur])]
    while True:
        if cur == j and stream() < stop:
            break
        cum = rows[cur]
        cur = min(bisect.bisect_right(cum, stream() * cum[-1]), e.n - 1)
        states.append(cur)
        holds.append(_holding(stream, w.lam[cur]))
    return Path(tuple(states), tuple(holds), e.n)


def loop_erase(path: Path) -> tuple[Path, list[LoopSample]]:
    """Chronological loop erasure.

    Returns the self-avoiding skeleton and the erased loops in the order they
    were erased; every vertex visit of ``path`` lands in exactly one of them.
    """
    skel: list[int] = []
    hold: list[float] = []
    pos: dict[int, int] = {}
    erased: list[LoopSample] = []
    holdings = list(path.holdings)
    for k, s in enumerate(path.states):
        if s in pos:
            i = pos[s]
            erased.append(LoopSample(tuple(skel[i:]), tuple(hold[i:])))
            for v in skel[i:]:
                del pos[v]
            del skel[i:]
            del hold[i:]
        pos[s] = len(skel)
        skel.append(s)
        if k < len(holdings):
            hold.append(holdings[k])
    return Path(tuple(skel), tuple(hold), path.n), erased


@dataclass(frozen=True)
class SpanningTree:
    """Spanning tree of ``X u {DELTA}`` rooted at the cemetery, as a parent index per vertex."""

    parent: tuple[int, ...]

    def parent_map(self, e: EnergyForm) -> dict[str, str]:
        names = e.vertices + (DELTA,)
        return {e.vertices[i]: names[p] for i, p in enumerate(self.parent)}

    def links(self) -> frozenset[frozenset[int]]:
        return frozenset(frozenset((i, p)) for i, p in enumerate(self.parent))

    def contains(self, a: int, b: int) -> bool:
        return self.parent[a] == b or (b < len(self.parent) and self.parent[b] == a)


def wilson(e: EnergyForm, rng, ordering: Sequence[str] | None = None) -> tuple[SpanningTree, list[LoopSample]]:
    """Wilson's algorithm rooted at the cemetery; returns the tree and every erased loop."""
    stream = as_stream(rng)
    w = _walker(e)
    n = e.n
    order = range(n) if ordering is None else e.idx(list(ordering))
    if sorted(order) != list(range(n)):
        raise ValueError("ordering must be a permutation of the vertices")
    in_tree = [False] * (n + 1)
    in_tree[n] = True
    parent = [-1] * n
    erased: list[LoopSample] = []
    lam = w.lam
    for start in order:
        if in_tree[start]:
            continue
        skel = [start]
        hold = [_holding(stream, lam[start])]
        pos = {start: 0}
        cur = start
        while True:
            cur = w.step(cur, stream())
            if in_tree[cur]:
                break
            if cur in pos:
                i = pos[cur]
                erased.append(LoopSample(tuple(skel[i:]), tuple(hold[i:])))
                for v in skel[i:]:
                    del pos[v]
                del skel[i:]
                del hold[i:]
            pos[cur] = len(skel)
            skel.append(cur)
            hold.append(_holding(stream, lam[cur]))
        skel.append(cur)
        for a, b in zip(skel[:-1], skel[1:]):
            parent[a] = b
            in_tree[a] = True
    return SpanningTree(tuple(parent)), erased


def enumerate_trees(e: EnergyForm) -> list[tuple[SpanningTree, float]]:
    """All spanning trees rooted at the cemetery with their probabilities ``Z_e * prod C``."""
    n = e.n
    if n > MAX_ENUMERATION_SIZE:
        raise ValueError(f"tree enumeration limited to {MAX_ENUMERATION_SIZE} vertices")
    Ce = e.conductance_extended
    choices = [[p for p in range(n + 1) if p != x and Ce[x, p] > 0] for x in range(n)]
    z = zeta(e)
    out = []
    for parent in itertools.product(*choices):
        ok = True
        for x in range(n):
            seen = set()
            cur = x
            while cur != n:
                if cur in seen:
                    ok = False
                    break
                seen.add(cur)
                cur = parent[cur]
            if not ok:
                break
        if ok:
            weight = float(np.prod([Ce[x, parent[x]] for x in range(n)]))
            out.append((SpanningTree(tuple(parent)), z * weight))
    return out


def tree_probability(e: EnergyForm, parent: Mapping[str, str]) -> float:
    """``Z_e * prod C`` over the links of a tree given as a parent map."""
    Ce = e.conductance_extended
    w = 1.0
    for child, par in parent.items():
        w *= Ce[e.idx(child), e.idx(par)]
    return zeta(e) * w


def transfer_current_inclusion(e: EnergyForm, links: Iterable[tuple[str, str]]) -> float:
    """Probability that all the given nonoriented links lie in the random spanning tree."""
    idx = [(e.idx(u), e.idx(v)) for u, v in links]
    keys = [frozenset(l) for l in idx]
    if len(set(keys)) != len(keys):
        raise ValueError("repeated link")
    if not idx:
        return 1.0
    Ce = e.conductance_extended
    weight = float(np.prod([Ce[i, j] for i, j in idx]))
    if weight == 0.0:
        return 0.0
    return weight * float(np.linalg.det(transfer_entries(e, idx)))


def be_mass_exact(e: EnergyForm, x: str, eta: Sequence[str]) -> float:
    """Probability that the loop-erased path to death from ``x`` equals ``eta`` (which ends with ``DELTA``)."""
    if not eta or eta[0] != x or eta[-1] != DELTA:
        raise ValueError("eta must start at x and end at the cemetery")
    pts = e.idx(list(eta[:-1]))
    if len(set(pts)) != len(pts):
        raise ValueError("eta is not self-avoiding")
    C = e.conductance
    w = float(np.prod([C[a, b] for a, b in zip(pts[:-1], pts[1:])])) * e.killing[pts[-1]]
    if w == 0.0:
        return 0.0
    G = e.green_matrix
    return w * float(np.linalg.det(G[np.ix_(pts, pts)]))


def self_avoiding_paths_to_death(e: EnergyForm, x: str) -> list[tuple[str, ...]]:
    """Every self-avoiding path from ``x`` along links that ends with a jump to the cemetery."""
    C = e.conductance
    out = []
    start = e.idx(x)

    def extend(path: list[int]):
        last = path[-1]
        if e.killing[last] > 0:
            out.append(tuple(e.vertices[i] for i in path) + (DELTA,))
        for v in range(e.n):
            if C[last, v] > 0 and v not in path:
                extend(path + [v])

    extend([start])
    return out
