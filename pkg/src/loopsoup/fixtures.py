"""Small reference graphs and a seeded generator of random energy forms."""

from __future__ import annotations

import numpy as np

from .energy import EnergyForm, build_energy


def g2() -> EnergyForm:
    """Two vertices joined by a unit conductance, unit killing at both."""
    return build_energy(["a", "b"], [("a", "b", 1.0)], {"a": 1.0, "b": 1.0})


def k3() -> EnergyForm:
    """Triangle with unit conductances and unit killing."""
    return build_energy(
        ["a", "b", "c"],
        [("a", "b", 1.0), ("b", "c", 1.0), ("c", "a", 1.0)],
        {"a": 1.0, "b": 1.0, "c": 1.0},
    )


def sq1() -> EnergyForm:
    """Unit square (4-cycle a-b-c-d) with unit conductances and unit killing."""
    return build_energy(
        ["a", "b", "c", "d"],
        [("a", "b", 1.0), ("b", "c", 1.0), ("c", "d", 1.0), ("d", "a", 1.0)],
        {v: 1.0 for v in "abcd"},
    )


def grid3() -> EnergyForm:
    """3x3 grid, unit conductances, unit killing everywhere.  Vertices ``"i,j"`` row-major."""
    names = [f"{i},{j}" for i in range(3) for j in range(3)]
    edges = []
    for i in range(3):
        for j in range(3):
            if j < 2:
                edges.append((f"{i},{j}", f"{i},{j + 1}", 1.0))
            if i < 2:
                edges.append((f"{i},{j}", f"{i + 1},{j}", 1.0))
    return build_energy(names, edges, {v: 1.0 for v in names})


FIXTURES = {"g2": g2, "k3": k3, "sq1": sq1, "grid3": grid3}


def random_energy(rng: np.random.Generator, n: int | None = None, max_n: int = 10, density: float = 0.6) -> EnergyForm:
    """Random connected form with positive killing on at least one vertex."""
    if n is None:
        n = int(rng.integers(2, max_n + 1))
    C = np.zeros((n, n))
    # random spanning path keeps the graph connected
    order = rng.permutation(n)
    for a, b in zip(order[:-1], order[1:]):
        C[a, b] = C[b, a] = rng.uniform(0.2, 2.0)
    for i in range(n):
        for j in range(i + 1, n):
            if C[i, j] == 0 and rng.random() < density:
                C[i, j] = C[j, i] = rng.uniform(0.2, 2.0)
    kappa = np.where(rng.random(n) < 0.5, rng.uniform(0.1, 1.5, n), 0.0)
    kappa[rng.integers(n)] = rng.uniform(0.2, 1.5)
    return EnergyForm.from_matrices(C, kappa, [f"v{i}" for i in range(n)])
