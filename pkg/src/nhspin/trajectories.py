"""Stochastic unravelings: quantum jumps, kinetic Monte Carlo, field sweeps.

Quantum-jump trajectories propagate ``H_eff = H - (i/2) sum_k C_k^dag C_k``
exactly on each connected block of its sparsity graph (eigendecomposition
per block, cached per Hamiltonian). Three unravelings are available:

``waiting_time``
    draw r ~ U(0, 1), propagate until ||psi||^2 = r, then jump
    (exact in time; default).
``first_order``
    fixed sub-steps with jump probability dt <psi|C^dag C|psi>, the
    sub-step chosen so the total stays below ``p_max``.
``projection``
    every pumping channel is replaced by resets of the spin-1 into m = 0
    at a state-independent Poisson rate.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.sparse.csgraph import connected_components

from . import kernels
from .effective import EffectiveModel, gamma_eff_law
from .master import JumpSet, full_jumps
from .spin_core import LayoutError, QuantumState, SpinOperator, embed

QJM_DIM_CAP = 12**4
COND_LIMIT = 1e8
PIECE_PHASE = 2e-3  # rad; phase curvature budget per fine field piece
PERIODIC_JUMPS = 8.0  # whole-period stepping when period * (max jump rate) is below this


class TrajectoryError(RuntimeError):
    def __init__(self, msg, index=None):
        super().__init__(msg if index is None else f"trajectory {index}: {msg}")
        self.index = index


class OracleRegimeWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# seeds


@dataclass(frozen=True)
class TrajectorySeed:
    master: int
    index: int

    @property
    def stream_seed(self) -> int:
        """SplitMix64 seed for the compiled kernels."""
        return int(kernels.traj_seed(self.master & (2**64 - 1), self.index))

    def generator(self) -> np.random.Generator:
        key = ((self.master & (2**64 - 1)) << 64) | self.index
        return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# field protocol


@dataclass(frozen=True)
class FieldProtocol:
    B_center: float
    amplitude: float = 0.0
    frequency: float = 0.0
    waveform: str = "constant"
    steps_per_period: int = 100
    # extra field edges: ((B_lo, B_hi), ...) refined to ``fine_step`` (T)
    fine_windows: tuple = ()
    fine_step: float = 0.0

    def __post_init__(self):
        if self.waveform not in ("constant", "triangular"):
            raise ValueError(f"unknown waveform {self.waveform!r}")
        if self.waveform == "triangular":
            if self.frequency <= 0:
                raise ValueError("triangular waveform needs frequency > 0")
            if self.steps_per_period < 4 or self.steps_per_period % 4:
                raise ValueError("steps_per_period must be a positive multiple of 4")
        if self.fine_windows and not self.fine_step > 0:
            raise ValueError("fine_windows need fine_step > 0")
        for lo, hi in self.fine_windows:
            if not lo < hi:
                raise ValueError(f"empty fine window ({lo}, {hi})")

    @property
    def period(self) -> float:
        return 1.0 / self.frequency if self.waveform == "triangular" else math.inf

    @property
    def step(self) -> float:
        return self.period / self.steps_per_period


def field_edges(protocol: FieldProtocol) -> np.ndarray:
    """Sorted field values at which the piecewise-constant Hamiltonian changes."""
    if protocol.waveform == "constant":
        return np.array([protocol.B_center])
    lo, hi = protocol.B_center - protocol.amplitude, protocol.B_center + protocol.amplitude
    parts = [protocol.B_center + protocol.amplitude * np.linspace(-1.0, 1.0, protocol.steps_per_period // 2 + 1)]
    for a, b in protocol.fine_windows:
        a, b = max(a, lo), min(b, hi)
        if a < b:
            parts.append(np.arange(a, b, protocol.fine_step))
    e = np.sort(np.concatenate(parts))
    gap = 1e-6 * (protocol.fine_step or 2 * protocol.amplitude / protocol.steps_per_period)
    return e[np.concatenate(([True], np.diff(e) > gap))]


def switch_times(protocol: FieldProtocol, t_end) -> np.ndarray:
    """Times in (0, t_end) at which the swept field crosses an edge."""
    if protocol.waveform == "constant":
        return np.empty(0)
    e = field_edges(protocol)
    s = (e - protocol.B_center) / protocol.amplitude if protocol.amplitude > 0 else np.zeros(0)
    P = protocol.period
    # phase x in [0, 1): rising 0..1/4 (s = 4x), falling 1/4..3/4, rising 3/4..1
    up1 = s[s >= 0] / 4
    down = (2 - s) / 4
    up2 = (s[s <= 0] + 4) / 4
    phases = np.unique(np.concatenate((up1, down, up2, [0.0])) % 1.0)
    n = int(math.ceil(t_end / P)) + 1
    t = (np.arange(n)[:, None] + phases[None, :]).ravel() * P
    return t[(t > 0) & (t < t_end)]


def field_at(protocol: FieldProtocol, t) -> float:
    """Field at time t: symmetric triangle starting at the center, rising."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if protocol.waveform == "constant":
        return protocol.B_center
    x = (t * protocol.frequency) % 1.0
    if x < 0.25:
        s = 4 * x
    elif x < 0.75:
        s = 2 - 4 * x
    else:
        s = 4 * x - 4
    return protocol.B_center + protocol.amplitude * s


# ---------------------------------------------------------------------------
# block propagator


class BlockPropagator:
    """exp(-i H_eff tau) restricted to the connected blocks of H_eff."""

    def __init__(self, H: sp.spmatrix, decay: sp.spmatrix | None):
        Heff = sp.csr_matrix(H, dtype=complex)
        if decay is not None:
            Heff = Heff - 0.5j * decay
        self.Heff = sp.csr_matrix(Heff)
        self.Heff.sort_indices()
        # operators with equal sparsity share block labels
        self.pattern = hash((self.Heff.shape, self.Heff.indptr.tobytes(), self.Heff.indices.tobytes()))
        pattern = (abs(self.Heff) + abs(self.Heff).T) > 0
        self.n_blocks, self.labels = connected_components(pattern, directed=False)
        order = np.argsort(self.labels, kind="stable")
        bounds = np.searchsorted(self.labels[order], np.arange(self.n_blocks + 1))
        self._members = [order[bounds[b]:bounds[b + 1]] for b in range(self.n_blocks)]
        self._blocks = {}

    def _block(self, b):
        if b not in self._blocks:
            idx = self._members[b]
            Hb = self.Heff[idx][:, idx].toarray()
            lam, V = la.eig(Hb)
            Vi = la.inv(V)
            if np.linalg.norm(V, 1) * np.linalg.norm(Vi, 1) < COND_LIMIT:
                self._blocks[b] = (idx, lam, V, Vi, None)
            else:
                self._blocks[b] = (idx, None, None, None, Hb)
        return self._blocks[b]

    def support(self, psi):
        return np.unique(self.labels[np.nonzero(psi)[0]])

    def block_step(self, b, tau) -> np.ndarray:
        """Dense exp(-i H_eff tau) on block b."""
        idx, lam, V, Vi, Hb = self._block(b)
        if Hb is not None:
            return la.expm(-1j * tau * Hb)
        return (V * np.exp(-1j * lam * tau)) @ Vi

    def modal(self, psi, blocks=None):
        """Decompose psi into per-block modal coefficients (``blocks``: known support)."""
        out = []
        for b in self.support(psi) if blocks is None else blocks:
            idx, lam, V, Vi, Hb = self._block(b)
            c = psi[idx] if Hb is not None else psi[idx].copy()
            out.append((idx, lam, V, Vi @ c if Hb is None else c, Hb, b))
        return out

    @staticmethod
    def _block_at(entry, tau):
        idx, lam, V, c, Hb, _ = entry
        if Hb is None:
            return V @ (np.exp(-1j * lam * tau) * c)
        return la.expm(-1j * tau * Hb) @ c

    def evolve(self, modal, tau, dim):
        psi = np.zeros(dim, complex)
        for entry in modal:
            psi[entry[0]] = self._block_at(entry, tau)
        return psi

    def evolve_norm2(self, modal, tau, dim):
        """(psi(tau), ||psi(tau)||^2) in one pass."""
        psi = np.zeros(dim, complex)
        n2 = 0.0
        for entry in modal:
            v = self._block_at(entry, tau)
            psi[entry[0]] = v
            n2 += float(np.vdot(v, v).real)
        return psi, n2

    def norm2(self, modal, tau):
        return sum(float(np.vdot(v, v).real) for v in (self._block_at(e, tau) for e in modal))


class PeriodicPropagator:
    """No-jump propagator over whole periods of a piecewise-constant H_eff(t).

    ``pieces`` lists (BlockPropagator, duration) for one period; all pieces
    must share one block structure. Blocks of equal size are stacked so a
    period step is one batched product, and powers U^(2^j) are built on
    demand so runs of jump-free periods are skipped in O(log n) products.
    """

    def __init__(self, pieces):
        ref = pieces[0][0]
        if any(p.pattern != ref.pattern for p, _ in pieces):
            raise ValueError("period pieces do not share one block structure")
        by_size = {}
        for b, idx in enumerate(ref._members):
            by_size.setdefault(len(idx), []).append(b)
        self.index, first = [], []
        for size, bs in sorted(by_size.items()):
            U = np.broadcast_to(np.eye(size, dtype=complex), (len(bs), size, size)).copy()
            for prop, tau in pieces:
                U = np.array([prop.block_step(b, tau) for b in bs]) @ U
            self.index.append(np.array([ref._members[b] for b in bs]))
            first.append(U)
        self._powers = [first]

    def power(self, j):
        while len(self._powers) <= j:
            self._powers.append([U @ U for U in self._powers[-1]])
        return self._powers[j]

    def apply(self, psi, j=0):
        """U^(2^j) psi."""
        out = np.empty_like(psi)
        for idx, U in zip(self.index, self.power(j)):
            out[idx] = (U @ psi[idx][..., None])[..., 0]
        return out


# ---------------------------------------------------------------------------
# quantum jumps


@dataclass
class QJMResult:
    times: np.ndarray
    states: np.ndarray | None
    observables: dict[str, np.ndarray]
    jumps: list[tuple[float, str]] = field(default_factory=list)


def _as_source(hamiltonian_source):
    if isinstance(hamiltonian_source, SpinOperator):
        return lambda _t: hamiltonian_source, hamiltonian_source.layout
    if callable(hamiltonian_source):
        return hamiltonian_source, None
    raise TypeError("hamiltonian_source must be a SpinOperator or a callable t -> SpinOperator")


def projection_jumps(jumps: JumpSet) -> JumpSet:
    """Replace each pumping channel by resets |0><m| (m = +1, 0, -1) of its spin-1."""
    ops, labels = [], []
    for c, lab in zip(jumps.collapse_ops, jumps.labels):
        if not lab.startswith("op"):
            ops.append(c)
            labels.append(lab)
            continue
        site = lab.split(":", 1)[1]
        if site in {l.split(":", 1)[1] for l in labels if l.startswith("reset")}:
            continue
        gamma = float(np.max(np.abs(c.matrix.data))) ** 2 if c.matrix.nnz else 0.0
        for m, col in (("+1", 0), ("0", 1), ("-1", 2)):
            local = np.zeros((3, 3), complex)
            local[1, col] = math.sqrt(gamma)
            ops.append(embed(local, site, c.layout))
            labels.append(f"reset{m}:{site}")
    return JumpSet(tuple(ops), tuple(labels))


def _observe(psi, observables):
    out = {}
    for name, obs in observables.items():
        if isinstance(obs, SpinOperator):
            out[name] = float(np.vdot(psi, obs.matrix @ psi).real)
        else:
            out[name] = obs(psi)
    return out


def run_qjm(
    hamiltonian_source,
    jumps: JumpSet,
    psi0: QuantumState,
    t_grid,
    seed,
    mode: str = "waiting_time",
    switch_times=None,
    observables: dict | None = None,
    store_states: bool = True,
    p_max: float = 0.1,
    min_step: float = 1e-15,
    cache: dict | None = None,
    period: float | None = None,
) -> QJMResult:
    """One quantum-jump trajectory.

    ``hamiltonian_source`` is a SpinOperator or a callable ``t -> SpinOperator``
    that is treated as piecewise constant between consecutive ``switch_times``
    (evaluated at each piece's midpoint). Returning the same object for equal
    fields lets propagators be reused; pass a shared ``cache`` dict to reuse
    them across trajectories with the same jump set.

    With ``period`` the source must be periodic with that period and only
    the ``switch_times`` inside the first period are used; jump-free whole
    periods are then crossed with a precomputed period propagator.
    """
    if psi0.kind != "pure":
        raise ValueError("run_qjm needs a pure initial state")
    d = psi0.layout.total_dim
    if d > QJM_DIM_CAP:
        raise ValueError(f"QJM dimension {d} exceeds cap {QJM_DIM_CAP}")
    if jumps.layout is not None and jumps.layout != psi0.layout:
        raise LayoutError("jump operators and state layouts differ")
    if mode not in ("waiting_time", "first_order", "projection"):
        raise ValueError(f"unknown QJM mode {mode!r}")
    if period is not None and not period > 0:
        raise ValueError("period must be positive")
    if mode == "projection":
        jumps = projection_jumps(jumps)
    rng = seed.generator() if isinstance(seed, TrajectorySeed) else np.random.default_rng(seed)
    source, _ = _as_source(hamiltonian_source)
    t_grid = np.asarray(t_grid, float)
    if np.any(np.diff(t_grid) < 0):
        raise ValueError("t_grid must be ascending")
    observables = observables or {}

    decay = jumps.decay_operator()
    Cs = [c.matrix for c in jumps.collapse_ops]
    props = {} if cache is None else cache

    def propagator(H):
        key = (id(H), mode == "projection")
        if key not in props:
            props[key] = (H, BlockPropagator(H.matrix, decay))
        return props[key][1]

    psi = np.array(psi0.data, complex)
    r = rng.random()
    t = float(t_grid[0])
    rec_states, rec_obs, log = [], {k: [] for k in observables}, []
    state = {"blocks": None, "pattern": None}

    def record():
        v = psi / np.linalg.norm(psi)
        if store_states:
            rec_states.append(v)
        for k, val in _observe(v, observables).items():
            rec_obs[k].append(val)

    def jump():
        nonlocal psi, r
        cand = [C @ psi for C in Cs]
        w = np.array([np.vdot(v, v).real for v in cand])
        tot = w.sum()
        if tot <= 0:
            raise TrajectoryError(f"no jump channel has weight at t={t}")
        k = int(np.searchsorted(np.cumsum(w) / tot, rng.random(), side="right"))
        k = min(k, len(w) - 1)
        if w[k] <= 0:
            raise TrajectoryError(f"zero-norm post-jump state at t={t}")
        psi = cand[k] / math.sqrt(w[k])
        log.append((float(t), jumps.labels[k]))
        r = rng.random()

    def advance(H, a, b):
        """Carry psi from a to b under a constant H, jumping as needed."""
        nonlocal psi, t
        prop = propagator(H)
        if mode == "first_order":
            psi = _first_order_segment(prop, psi, a, b, Cs, decay, rng, p_max, min_step, d, jumps.labels, log)
            t = b
            return
        if prop.pattern != state["pattern"]:
            state["blocks"], state["pattern"] = None, prop.pattern
        while True:
            modal = prop.modal(psi, state["blocks"])
            state["blocks"] = [e[5] for e in modal]
            end, n2 = prop.evolve_norm2(modal, b - t, d)
            if not Cs or n2 > r:
                psi = end
                t = b
                return
            tau = brentq(lambda x: prop.norm2(modal, x) - r, 0.0, b - t, xtol=1e-14 * max(b - a, 1e-300),
                         rtol=1e-13)
            psi = prop.evolve(modal, tau, d)
            t = t + tau
            jump()
            state["blocks"] = None
            if b - t <= 0:
                t = b
                return

    record()
    if period is None:
        edges = set(t_grid.tolist())
        if switch_times is not None:
            edges |= {float(x) for x in switch_times if t_grid[0] < x < t_grid[-1]}
        edges = np.array(sorted(edges))
        outputs = set(t_grid.tolist())
        for a, b in zip(edges[:-1], edges[1:]):
            advance(source(0.5 * (a + b)), a, b)
            if b in outputs:
                record()
    else:
        T = float(period)
        inner = sorted({float(x) for x in (() if switch_times is None else switch_times) if 0 < x < T})
        phases = [0.0] + inner + [T]
        piece_H = [source(0.5 * (a + b)) for a, b in zip(phases[:-1], phases[1:])]
        per = None
        if mode != "first_order":
            key = ("period", T, tuple(id(H) for H in piece_H), mode == "projection")
            if key not in props:
                try:
                    props[key] = PeriodicPropagator(
                        [(propagator(H), b - a) for H, a, b in zip(piece_H, phases[:-1], phases[1:])])
                except ValueError:  # pieces differ in block structure
                    props[key] = None
            per = props[key]
        for o in t_grid[1:]:
            while t < o:
                k = int(math.floor(t / T + 1e-9))
                base = k * T
                if base > t:
                    # t sits a rounding sliver below a period boundary: finish the old period
                    advance(piece_H[-1], t, min(base, o))
                    continue
                if per is not None and abs(t - base) <= 1e-9 * T:
                    # leap over jump-free periods: the no-jump norm only decreases
                    n_free = int(math.floor((o - base) / T * (1 + 1e-12)))
                    leaped = False
                    j = n_free.bit_length() - 1
                    while j >= 0:
                        cand = per.apply(psi, j)
                        if np.vdot(cand, cand).real > r:
                            psi = cand
                            k += 1 << j
                            n_free -= 1 << j
                            t = k * T
                            leaped = True
                            state["blocks"] = None
                            j = min(j, n_free.bit_length() - 1)
                        else:
                            j -= 1
                    if leaped:
                        continue
                for i, H in enumerate(piece_H):
                    a, b = base + phases[i], base + phases[i + 1]
                    if b <= t:
                        continue
                    if a >= o:
                        break
                    advance(H, max(a, t), min(b, o))
            record()

    return QJMResult(
        times=t_grid,
        states=np.array(rec_states) if store_states else None,
        observables={k: np.array(v) for k, v in rec_obs.items()},
        jumps=log,
    )


def _first_order_segment(prop, psi, a, b, Cs, decay, rng, p_max, min_step, d, labels, log):
    psi = psi / np.linalg.norm(psi)
    bound = float(abs(decay).sum(axis=1).max()) if decay is not None else 0.0
    n_steps = max(1, math.ceil((b - a) * bound / p_max * (1 + 1e-12)))
    dt = (b - a) / n_steps
    if dt < min_step * max(abs(b), 1.0) and bound > 0:
        raise TrajectoryError(f"step-size underflow: dt={dt:.3g} s on [{a}, {b}]")
    t = a
    for _ in range(n_steps):
        cand = [C @ psi for C in Cs]
        p = dt * np.array([np.vdot(v, v).real for v in cand])
        u = rng.random()
        if Cs and u < p.sum():
            k = min(int(np.searchsorted(np.cumsum(p), u, side="right")), len(p) - 1)
            psi = cand[k] / math.sqrt(p[k] / dt)
            log.append((float(t + dt), labels[k]))
        else:
            psi = prop.evolve(prop.modal(psi), dt, d)
            psi = psi / np.linalg.norm(psi)
        t += dt
    return psi


# ---------------------------------------------------------------------------
# kinetic Monte Carlo on the effective model


@dataclass
class KMCResult:
    times: np.ndarray
    configs: np.ndarray  # (n_times, N) uint8, 1 = up
    event_times: np.ndarray
    event_bonds: np.ndarray  # index into model.directed_bonds


def _kmc_arrays(model: EffectiveModel):
    if not model.dissipative_only:
        raise ValueError("model has coherent bonds; use the quantum solver (evolve_qme / run_qjm) instead of KMC")
    bf, bt, rate = model.bond_arrays()
    n = model.n_sites
    adj = [[] for _ in range(n)]
    for b, (x, y) in enumerate(zip(bf, bt)):
        adj[x].append(b)
        adj[y].append(b)
    ptr = np.cumsum([0] + [len(a) for a in adj]).astype(np.int64)
    flat = np.array([b for a in adj for b in a], np.int64)
    return n, bf, bt, rate, ptr, flat


def config_array(config, n) -> np.ndarray:
    """Accept a bitmask (bit j-1 set = site j up) or a 0/1 sequence."""
    if isinstance(config, (int, np.integer)):
        if config < 0 or config >= 1 << n:
            raise ValueError(f"bitmask {config} out of range for {n} sites")
        return np.array([(int(config) >> j) & 1 for j in range(n)], np.uint8)
    arr = np.asarray(config, np.uint8)
    if arr.shape != (n,) or np.any(arr > 1):
        raise ValueError(f"configuration must be {n} entries of 0/1")
    return arr


def run_kmc_effective(model: EffectiveModel, config0, t_max, seed, t_grid=None, record_events=True) -> KMCResult:
    """Gillespie sampling of the directed hopping process."""
    n, bf, bt, rate, ptr, adj = _kmc_arrays(model)
    cfg = config_array(config0, n)
    t_grid = np.linspace(0.0, t_max, 101) if t_grid is None else np.asarray(t_grid, float)
    s = seed.stream_seed if isinstance(seed, TrajectorySeed) else int(seed) & (2**64 - 1)
    samples, ev_t, ev_b = kernels.kmc_run(n, bf, bt, rate, ptr, adj, cfg, float(t_max), s, t_grid, record_events)
    return KMCResult(t_grid, samples, ev_t, ev_b)


@dataclass
class TrajectoryEnsemble:
    n_traj: int
    master_seed: int
    times: np.ndarray
    observables: dict[str, tuple[np.ndarray, np.ndarray]]  # name -> (mean, stderr)
    extras: dict = field(default_factory=dict)

    def mean(self, name):
        return self.observables[name][0]

    def stderr(self, name):
        return self.observables[name][1]


def kmc_ensemble(model: EffectiveModel, n_traj, master_seed, t_grid, config0=None, keep_final=False) -> TrajectoryEnsemble:
    """Ensemble of KMC trajectories; uniformly random initial configs when config0 is None.

    Observables: ``P`` (site polarization 2<up>-1) and ``V`` (probability
    of up/down across each directed bond).
    """
    n, bf, bt, rate, ptr, adj = _kmc_arrays(model)
    t_grid = np.asarray(t_grid, float)
    cfg = np.zeros(n, np.uint8) if config0 is None else config_array(config0, n)
    up, bond, final = kernels.kmc_ensemble(n, bf, bt, rate, ptr, adj, cfg, config0 is None, int(n_traj),
                                           int(master_seed) & (2**64 - 1), t_grid, keep_final)
    p_up = up / n_traj
    v = bond / n_traj
    P = 2 * p_up - 1
    if n_traj > 1:
        se_P = 2 * np.sqrt(p_up * (1 - p_up) * n_traj / (n_traj - 1) / n_traj)
        se_V = np.sqrt(v * (1 - v) * n_traj / (n_traj - 1) / n_traj)
    else:
        se_P, se_V = np.zeros_like(P), np.zeros_like(v)
    extras = {"final": final} if keep_final else {}
    return TrajectoryEnsemble(int(n_traj), int(master_seed), t_grid, {"P": (P, se_P), "V": (v, se_V)}, extras)


# ---------------------------------------------------------------------------
# ensembles


def _reduce(results, n_traj, master_seed):
    times = np.asarray(results[0][0])
    names = list(results[0][1])
    obs = {}
    for name in names:
        data = np.array([np.asarray(r[1][name], float) for r in results])
        mean = data.mean(axis=0)
        se = data.std(axis=0, ddof=1) / math.sqrt(n_traj) if n_traj > 1 else np.zeros_like(mean)
        obs[name] = (mean, se)
    return TrajectoryEnsemble(n_traj, master_seed, times, obs)


def ensemble_run(job: Callable[[TrajectorySeed], tuple], n_traj: int, master_seed: int, threads: int = 1):
    """Run ``job(seed) -> (times, {name: array})`` for every trajectory and average.

    Seeds depend only on (master_seed, index), and the reduction runs in
    index order, so results do not depend on ``threads``.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")

    def one(i):
        try:
            return job(TrajectorySeed(int(master_seed), i))
        except Exception as exc:
            raise TrajectoryError(str(exc), index=i) from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(n_traj)))
    else:
        results = [one(i) for i in range(n_traj)]
    return _reduce(results, n_traj, int(master_seed))


# ---------------------------------------------------------------------------
# full-model jobs


def balanced_nuclei(n, index):
    """Nuclear projections of configuration ``index mod 2^n`` (bit set = down, site 1 first)."""
    k = index % (1 << n)
    return [-0.5 if (k >> (n - 1 - j)) & 1 else 0.5 for j in range(n)]


def random_product_state(model, rng, nuclei="random", S_state=0, Sp_state="random", B=None):
    """Dressed product state with per-factor projections drawn as requested."""
    cfg = {}
    for lab in model.spin1:
        cfg[lab] = S_state
    for lab in model.spin_half:
        cfg[lab] = rng.choice([0.5, -0.5]) if Sp_state == "random" else Sp_state
    for j, lab in enumerate(model.nuclear_labels):
        if nuclei == "random":
            cfg[lab] = rng.choice([0.5, -0.5])
        else:
            cfg[lab] = nuclei[j]
    return QuantumState.pure(model.layout, model.dressed_state(cfg, B))


def polarization_observables(model, B=None) -> dict[str, SpinOperator]:
    """P_j = 2 <I_j^z> along each nucleus' local hyperfine axis."""
    return {f"P{j + 1}": 2.0 * model.dressed_sz(lab, B) for j, lab in enumerate(model.nuclear_labels)}


def qjm_ensemble(model, t_grid, n_traj, master_seed, B=None, initial="random", Sp_state="random",
                 mode="waiting_time", threads=1, jumps=None, extra_observables=None):
    """QJM ensemble of a full model at a fixed field with dressed-frame polarizations.

    ``initial`` is a QuantumState, ``"random"`` nuclei, ``"balanced"``
    (trajectory i starts in nuclear configuration i mod 2^N, so every
    block of 2^N trajectories is exactly unpolarized) or a list of
    nuclear projections.
    """
    B = model.spec.B if B is None else B
    H = model.hamiltonian(B)
    jumps = full_jumps(model) if jumps is None else jumps
    obs = polarization_observables(model, B)
    obs.update(extra_observables or {})
    cache = {}

    def job(seed: TrajectorySeed):
        rng = seed.generator()
        if isinstance(initial, QuantumState):
            psi0 = initial
        else:
            nuclei = balanced_nuclei(len(model.nuclear_labels), seed.index) if initial == "balanced" else initial
            psi0 = random_product_state(model, rng, nuclei=nuclei, Sp_state=Sp_state, B=B)
        res = run_qjm(H, jumps, psi0, t_grid, rng, mode=mode, observables=obs, store_states=False, cache=cache)
        return res.times, res.observables

    return ensemble_run(job, n_traj, master_seed, threads)


def run_defect_protocol(spec, protocol: FieldProtocol, psi0, t_grid, seed, model=None, mode="waiting_time",
                        observables=None, store_states=False, frame_field=None, cache=None,
                        periodic=None) -> QJMResult:
    """QJM of a (possibly non-uniform) chain under a field protocol.

    The Hamiltonian is piecewise constant between the times at which the
    field crosses an edge of ``field_edges`` (uniform steps plus any fine
    windows) and is evaluated at the midpoint field of each piece;
    polarizations are measured in the dressed frame at ``frame_field``
    (default: the protocol center). A ``cache`` dict shared between calls
    with the same model and protocol reuses Hamiltonians and propagators.
    ``periodic`` selects whole-period stepping; by default it is used when
    at most a few jumps can fall in one period (``PERIODIC_JUMPS``).
    """
    from .model import chain_model

    model = chain_model(spec) if model is None else model
    cache = {} if cache is None else cache
    hams = cache.setdefault("hamiltonians", {})
    jumps = cache.setdefault("jumps", full_jumps(model))
    props = cache.setdefault("propagators", {})

    edges = field_edges(protocol)
    mids = 0.5 * (edges[:-1] + edges[1:]) if len(edges) > 1 else edges

    def source(t):
        # snap to the grid of piece fields so equal pieces share a propagator
        B = float(mids[int(np.argmin(np.abs(mids - field_at(protocol, t))))])
        if B not in hams:
            hams[B] = model.hamiltonian(B)
        return hams[B]

    t_grid = np.asarray(t_grid, float)
    period = None
    switch = None
    if protocol.waveform == "triangular":
        if periodic is None:
            decay = jumps.decay_operator()
            bound = float(decay.diagonal().real.max()) if decay is not None else 0.0
            periodic = protocol.period * bound < PERIODIC_JUMPS
        if periodic and mode != "first_order":
            period = protocol.period
            switch = switch_times(protocol, period)
        else:
            switch = switch_times(protocol, t_grid[-1])
    frame = protocol.B_center if frame_field is None else frame_field
    obs = polarization_observables(model, frame) if observables is None else observables
    if isinstance(psi0, dict):
        psi0 = QuantumState.pure(model.layout, model.dressed_state(psi0, frame))
    return run_qjm(source, jumps, psi0, t_grid, seed, mode=mode, switch_times=switch, observables=obs,
                   store_states=store_states, cache=props, period=period)


def crossing_windows(spec, branch="alpha", half_widths=15.0, resolution=4.0, sweep_rate=None):
    """Fine field windows around the avoided crossing of every open-chain bond.

    Each window spans ``half_widths`` resonance widths J / (2 gamma_e) on
    either side of the crossing. The step is the smallest width divided by
    ``resolution``; with a ``sweep_rate`` (T/s) it may grow to the largest
    step whose detuning spread keeps the in-piece phase curvature
    2 gamma_e dB^2 / rate below ``PIECE_PHASE``, since fast sweeps need
    coarser pieces for the same accuracy.
    """
    from .model import avoided_crossing

    windows, step = [], math.inf
    for bond in range(spec.n_sites - 1):
        ac = avoided_crossing(spec, branch, "chain", bond)
        w = ac.coupling / (2 * spec.gamma_e)
        windows.append((ac.B_m - half_widths * w, ac.B_m + half_widths * w))
        step = min(step, w / resolution)
    if sweep_rate:
        step = max(step, math.sqrt(PIECE_PHASE * sweep_rate / (2 * spec.gamma_e)))
    return tuple(windows), step


def defect_ensemble(spec, protocol: FieldProtocol, t_grid, n_traj, master_seed, initial="balanced",
                    threads=1, model=None, cache=None) -> TrajectoryEnsemble:
    """Ensemble of ``run_defect_protocol`` trajectories plus the net polarization ``Pc``."""
    from .model import chain_model

    model = chain_model(spec) if model is None else model
    cache = {} if cache is None else cache
    n = len(model.nuclear_labels)

    def job(seed: TrajectorySeed):
        rng = seed.generator()
        nuclei = balanced_nuclei(n, seed.index) if initial == "balanced" else initial
        psi0 = random_product_state(model, rng, nuclei=nuclei, B=protocol.B_center)
        res = run_defect_protocol(spec, protocol, psi0, t_grid, rng, model=model, cache=cache)
        obs = dict(res.observables)
        obs["Pc"] = np.mean([obs[f"P{j}"] for j in range(1, n + 1)], axis=0)
        return res.times, obs

    return ensemble_run(job, n_traj, master_seed, threads)


# ---------------------------------------------------------------------------
# interval oracle for the effective transport rate


@dataclass
class OracleResult:
    rate: float
    stderr: float
    times: np.ndarray
    survival: np.ndarray
    expected: float
    warning: str | None = None


def gamma_eff_oracle(Gamma_op, Gamma_e, n_intervals=40, n_samples=100_000, seed=0, two_spins=False) -> OracleResult:
    """Simulate interval-synchronized electron resampling and fit the nuclear transfer rate.

    Each interval of length 1/Gamma_e resamples n = 3 (or 2) electron
    projections; in the single enabling configuration the nuclear pair
    flips with probability 1 - exp(-Gamma_op/Gamma_e).
    """
    if Gamma_e <= 0:
        raise ValueError("Gamma_e must be > 0")
    warn = None
    if Gamma_op <= Gamma_e:
        warn = f"Gamma_op/Gamma_e = {Gamma_op / Gamma_e:.3g} <= 1 lies outside the oracle's validity regime"
        warnings.warn(warn, OracleRegimeWarning, stacklevel=2)
    n_spins = 2 if two_spins else 3
    p_flip = 1.0 - math.exp(-Gamma_op / Gamma_e)
    surv = kernels.oracle_survival(p_flip, n_spins, int(n_intervals), int(n_samples), int(seed) & (2**64 - 1))
    frac = surv / n_samples
    times = np.arange(n_intervals + 1) / Gamma_e
    ok = surv >= max(50, n_samples // 1000)
    if ok.sum() < 3:
        raise ValueError("too few surviving samples to fit a rate; raise n_samples or lower n_intervals")
    fit = np.polyfit(times[ok], np.log(frac[ok]), 1, cov=True)
    rate, var = -fit[0][0], fit[1][0, 0]
    return OracleResult(float(rate), float(math.sqrt(max(var, 0.0))), times, frac,
                        gamma_eff_law(Gamma_e, n_spins), warn)
