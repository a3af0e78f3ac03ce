"""Nuclear-only effective models: directed dissipative bonds and coherent exchange.

Sites are numbered from 1. A directed bond ``(j, k, rate)`` moves an up
spin from site j to site k through the collapse operator
``sqrt(rate) I_j^- I_k^+``; a coherent bond ``(a, b, J)`` adds
``J (I_a^+ I_b^- + h.c.)`` to the Hamiltonian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spin_core import SpaceLayout

TOPOLOGIES = ("open", "ring", "tree")


def gamma_eff_law(Gamma_e, n_spins=3) -> float:
    """Analytic transport rate |ln(1 - 2^-n)| * Gamma_e."""
    return abs(math.log(1.0 - 2.0**-n_spins)) * Gamma_e


@dataclass(frozen=True)
class EffectiveModel:
    n_sites: int
    directed_bonds: tuple[tuple[int, int, float], ...] = ()
    coherent_bonds: tuple[tuple[int, int, float], ...] = ()
    topology: str = "open"

    def __post_init__(self):
        object.__setattr__(self, "directed_bonds", tuple((int(a), int(b), float(r)) for a, b, r in self.directed_bonds))
        object.__setattr__(self, "coherent_bonds", tuple((int(a), int(b), float(r)) for a, b, r in self.coherent_bonds))
        if self.n_sites < 1:
            raise ValueError("effective model needs at least one site")
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}; expected one of {TOPOLOGIES}")
        for a, b, r in self.directed_bonds + self.coherent_bonds:
            if not (1 <= a <= self.n_sites and 1 <= b <= self.n_sites):
                raise ValueError(f"dangling edge ({a}, {b}) in a {self.n_sites}-site model")
            if a == b:
                raise ValueError(f"self-bond on site {a}")
            if not math.isfinite(r):
                raise ValueError(f"non-finite bond strength on ({a}, {b})")
        for a, b, r in self.directed_bonds:
            if r < 0:
                raise ValueError(f"negative rate on directed bond ({a}, {b})")

    @classmethod
    def chain(cls, n_sites, rate) -> "EffectiveModel":
        bonds = [(j, j + 1, rate) for j in range(1, n_sites)]
        return cls(n_sites, tuple(bonds), (), "open")

    @classmethod
    def ring(cls, n_sites, rate) -> "EffectiveModel":
        if n_sites < 3:
            raise ValueError("ring needs at least 3 sites")
        bonds = [(j, j % n_sites + 1, rate) for j in range(1, n_sites + 1)]
        return cls(n_sites, tuple(bonds), (), "ring")

    @classmethod
    def tree(cls, coherent, directed, n_sites=None) -> "EffectiveModel":
        edges = list(coherent) + list(directed)
        n = n_sites or max(max(a, b) for a, b, _ in edges)
        return cls(n, tuple(directed), tuple(coherent), "tree")

    @property
    def dissipative_only(self) -> bool:
        return not any(J != 0 for _, _, J in self.coherent_bonds)

    @property
    def layout(self) -> SpaceLayout:
        return SpaceLayout(tuple((f"I{j}", 2) for j in range(1, self.n_sites + 1)))

    def rate(self, j, k) -> float:
        """Total directed rate from site j to site k (0 if absent)."""
        return sum(r for a, b, r in self.directed_bonds if (a, b) == (j, k))

    def has_bond(self, j, k) -> bool:
        return any((a, b) == (j, k) for a, b, _ in self.directed_bonds)

    def bond_arrays(self):
        """(from, to, rate) as 0-based int/float arrays for the kernels."""
        if not self.directed_bonds:
            return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0)
        a, b, r = zip(*self.directed_bonds)
        return np.array(a, np.int64) - 1, np.array(b, np.int64) - 1, np.array(r, float)
