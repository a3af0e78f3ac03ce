"""Site polarizations, bond currents and voltages, domain-wall statistics.

Site indices are 1-based. ``P_j = 2 <I_j^z>`` lies in [-1, 1]. States may be
nuclear-only QuantumStates (factors ``I1..IN``), full-model states together
with their model, or KMC configurations (0/1 arrays, 1 = up).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .effective import EffectiveModel
from .spin_core import QuantumState, expectation

POL_TOL = 1e-9


@dataclass(frozen=True)
class ObservableSeries:
    name: str
    site_indices: tuple
    times: np.ndarray
    values: np.ndarray  # (n_times, n_sites)
    stderr: np.ndarray | None = None
    kind: str = "polarization"

    def __post_init__(self):
        v = np.asarray(self.values, float)
        if v.shape != (len(self.times), len(self.site_indices)):
            raise ValueError(f"values shape {v.shape} does not match times x sites")
        if self.kind == "polarization" and np.any(np.abs(v) > 1 + POL_TOL):
            raise ValueError("polarization outside [-1, 1]")
        if self.kind == "current" and np.any(v < -1e-12):
            raise ValueError("negative spin current")
        if self.stderr is not None and np.shape(self.stderr) != v.shape:
            raise ValueError("stderr shape differs from values")


def _n_sites(state) -> int:
    if isinstance(state, QuantumState):
        return len(state.layout.factors)
    return np.shape(state)[-1]


def _check_site(j, n):
    if not 1 <= j <= n:
        raise IndexError(f"site {j} out of range 1..{n}")


def _nuclear_populations(state: QuantumState) -> np.ndarray:
    """Populations reshaped as (2,)*N with digit 0 = up."""
    if any(d != 2 for d in state.layout.dims):
        raise ValueError("nuclear-only state expected; pass the full model for electron-nuclear states")
    return state.populations.reshape(state.layout.dims)


def _marginal(pops, sites) -> np.ndarray:
    n = pops.ndim
    drop = tuple(i for i in range(n) if i not in sites)
    m = pops.sum(axis=drop) if drop else pops
    return m.transpose(np.argsort(np.argsort(sites)))


def site_polarization(state, j: int, model=None, frame: str = "dressed") -> float:
    """P_j of a nuclear state, a full-model state (with ``model``) or KMC configurations."""
    if model is not None and hasattr(model, "nuclear_labels"):
        labels = model.nuclear_labels
        _check_site(j, len(labels))
        if frame == "dressed":
            op = model.dressed_sz(labels[j - 1])
        elif frame == "lab":
            from .spin_core import embed, spin_matrices

            op = embed(spin_matrices(0.5)["z"], labels[j - 1], model.layout).as_hermitian()
        else:
            raise ValueError(f"unknown frame {frame!r}")
        return 2.0 * expectation(state, op).real
    if isinstance(state, QuantumState):
        n = _n_sites(state)
        _check_site(j, n)
        m = _marginal(_nuclear_populations(state), [j - 1])
        return float(m[0] - m[1])
    cfg = np.asarray(state)
    n = _n_sites(cfg)
    _check_site(j, n)
    return float(np.mean(2.0 * cfg[..., j - 1] - 1.0))


def polarization_profile(state, model=None) -> np.ndarray:
    if model is not None and hasattr(model, "nuclear_labels"):
        return np.array([site_polarization(state, j, model) for j in range(1, len(model.nuclear_labels) + 1)])
    if isinstance(state, QuantumState):
        pops = _nuclear_populations(state)
        return np.array([float(np.subtract(*_marginal(pops, [j]))) for j in range(pops.ndim)])
    cfg = np.asarray(state, float)
    return (2.0 * cfg - 1.0).reshape(-1, cfg.shape[-1]).mean(axis=0)


def bond_voltage(state, j: int, k: int) -> float:
    """Probability of up at site j and down at site k."""
    n = _n_sites(state)
    _check_site(j, n)
    _check_site(k, n)
    if j == k:
        raise ValueError("bond_voltage needs two distinct sites")
    if isinstance(state, QuantumState):
        m = _marginal(_nuclear_populations(state), [j - 1, k - 1])
        return float(m[0, 1])
    cfg = np.asarray(state)
    return float(np.mean((cfg[..., j - 1] == 1) & (cfg[..., k - 1] == 0)))


def _next_site(model: EffectiveModel, j):
    return j % model.n_sites + 1 if model.topology == "ring" else j + 1


def spin_current(state, j: int, model: EffectiveModel, k: int | None = None) -> float:
    """K_{j,k} = rate(j -> k) * P(up_j, down_k), in Hz."""
    k = _next_site(model, j) if k is None else k
    if not model.has_bond(j, k):
        raise ValueError(f"no directed bond {j} -> {k} in the model")
    return model.rate(j, k) * bond_voltage(state, j, k)


def net_polarization(state, model=None) -> float:
    return float(np.mean(polarization_profile(state, model)))


@dataclass(frozen=True)
class DomainWallHistogram:
    weights: np.ndarray  # index i: sites 1..i down, i+1..N up
    non_domain_wall: float
    n_samples: int


def domain_wall_histogram(configs) -> DomainWallHistogram:
    """Empirical weights of the N+1 domain-wall states among final configurations."""
    cfg = np.atleast_2d(np.asarray(configs, np.uint8))
    n_samples, n = cfg.shape
    downs = n - cfg.sum(axis=1)
    # a domain-wall state has its first `downs` sites down and the rest up
    expected = (np.arange(n)[None, :] >= downs[:, None]).astype(np.uint8)
    is_dw = np.all(cfg == expected, axis=1)
    weights = np.bincount(downs[is_dw], minlength=n + 1)[: n + 1] / n_samples
    return DomainWallHistogram(weights, float(1.0 - is_dw.mean()), n_samples)


def binomial_profile(N: int) -> np.ndarray:
    """Steady open-chain profile P_j = 2 * sum_{i<j} C(N, i) / 2^N - 1 (j = 1..N)."""
    from math import comb

    c = np.cumsum([comb(N, i) for i in range(N)]) / 2**N
    return 2 * c - 1
