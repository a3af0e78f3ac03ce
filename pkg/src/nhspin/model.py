"""Full electron/nuclear Hamiltonians, hyperfine eigenframes and matching fields.

Units: every frequency is stored in Hz and used directly as an angular
rate in the Hamiltonian (hbar = 1, H in s^-1). Fields are in tesla and
gyromagnetic ratios in Hz/T.

Two geometries are supported. The *pair* is the four-spin set
``I1 - S ... S' - I2``; the *chain* is a sequence of dressed cells
``(S'_j, I_j, S_j)`` where ``S_j`` couples to ``S'_{j+1}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize_scalar
from scipy.sparse.csgraph import connected_components

from .spin_core import SpaceLayout, SpinOperator, embed_many, spin_matrices

GAMMA_E = 28.024e9  # Hz/T, magnitude
GAMMA_N = 10.705e6  # Hz/T, 13C
ZFS_D = 2.87e9  # Hz

DIM_CAP = 12**4

_S1 = spin_matrices(1)
_SH = spin_matrices(0.5)
_SQRT2 = math.sqrt(2.0)


class MatchingError(RuntimeError):
    pass


class DegenerateFrameError(ValueError):
    pass


@dataclass(frozen=True)
class SiteSpec:
    A_zz: float = 13e6
    A_zx: float = 13e6
    Ap_zz: float = 4e6
    Ap_zx: float = 4e6

    def __post_init__(self):
        for name in ("A_zz", "A_zx", "Ap_zz", "Ap_zx"):
            v = getattr(self, name)
            if not math.isfinite(v) or abs(v) >= 1e9:
                raise ValueError(f"hyperfine {name}={v} outside sanity bound (|A| < 1 GHz)")


@dataclass(frozen=True)
class ChainSpec:
    sites: tuple[SiteSpec, ...]
    topology: str = "open"
    J_d: float = 62e3
    D: float = ZFS_D
    gamma_e: float = GAMMA_E
    gamma_n: float = GAMMA_N
    B: float = 0.0
    Gamma_op: float = 0.0
    Gamma_e: float = 0.0
    relax_S: bool = False

    def __post_init__(self):
        object.__setattr__(self, "sites", tuple(self.sites))
        if not self.sites:
            raise ValueError("chain needs at least one site")
        if self.topology not in ("open", "ring"):
            raise ValueError(f"full-model topology must be 'open' or 'ring', got {self.topology!r}")
        if self.topology == "ring" and len(self.sites) < 3:
            raise ValueError("ring topology requires at least 3 sites")
        for name in ("J_d", "D", "Gamma_op", "Gamma_e", "B"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def omega_e(self) -> float:
        return abs(self.gamma_e) * self.B

    @property
    def omega_n(self) -> float:
        return self.gamma_n * self.B

    def with_field(self, B) -> "ChainSpec":
        return replace(self, B=float(B))

    @property
    def uniform(self) -> bool:
        return all(s == self.sites[0] for s in self.sites)


@dataclass(frozen=True)
class HyperfineFrame:
    m_S: int
    m_Sp: float
    theta: float
    delta: float
    axis: tuple[float, float]

    @property
    def splitting(self) -> float:
        """Signed splitting of the rotated up state; -delta when it sits against the axis."""
        x, z = self.axis
        return z * math.cos(self.theta) + x * math.sin(self.theta)


@dataclass(frozen=True)
class MatchingCondition:
    branch: str
    B_m: float
    residual: float
    geometry: str = "chain"
    coupling: float | None = None


def hyperfine_frame(site: SiteSpec, m_S, m_Sp, omega_n) -> HyperfineFrame:
    """Quantization axis of a nucleus for fixed electron projections.

    The angle is taken on the principal branch (-pi/2, pi/2], so the
    rotated "up" state is the one continuously connected to lab up.
    """
    if m_S not in (-1, 0, 1) or m_Sp not in (-0.5, 0.5):
        raise ValueError(f"bad projections m_S={m_S}, m_Sp={m_Sp}")
    x = m_S * site.A_zx + m_Sp * site.Ap_zx
    z = m_S * site.A_zz + m_Sp * site.Ap_zz - omega_n
    return _frame_from_axis(x, z, m_S, m_Sp)


def _frame_from_axis(x, z, m_S=0, m_Sp=0.5) -> HyperfineFrame:
    delta = math.hypot(x, z)
    if delta == 0.0:
        raise DegenerateFrameError("zero quantization axis; frame undefined")
    theta = math.atan(x / z) if z != 0 else math.copysign(math.pi / 2, x)
    if theta == -math.pi / 2:
        theta = math.pi / 2
    return HyperfineFrame(m_S, m_Sp, theta, delta, (x, z))


def _rot(theta) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


# ---------------------------------------------------------------------------
# generic spin system: electrons + nuclei + couplings


@dataclass(frozen=True)
class Nucleus:
    label: str
    # (electron label, A_zz, A_zx)
    couplings: tuple[tuple[str, float, float], ...]


@dataclass
class FullModel:
    """Explicit description of an electron/nuclear spin set."""

    spec: ChainSpec
    layout: SpaceLayout
    electrons: dict[str, float]  # label -> spin number
    nuclei: list[Nucleus]
    bonds: list[tuple[str, str]]  # dipolar (spin-1, spin-1/2) pairs
    geometry: str = "chain"
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.layout.total_dim

    @property
    def spin1(self) -> list[str]:
        return [l for l, s in self.electrons.items() if s == 1]

    @property
    def spin_half(self) -> list[str]:
        return [l for l, s in self.electrons.items() if s == 0.5]

    @property
    def nuclear_labels(self) -> list[str]:
        return [n.label for n in self.nuclei]

    # -- basis bookkeeping -------------------------------------------------

    @cached_property
    def digits(self) -> np.ndarray:
        """Per-basis-state factor indices, shape (dim, n_factors)."""
        return np.array(np.unravel_index(np.arange(self.dim), self.layout.dims)).T

    def m_values(self, label) -> np.ndarray:
        """Magnetic projection of one factor for every basis state."""
        k = self.layout.index(label)
        d = self.layout.dims[k]
        s = (d - 1) / 2
        return s - self.digits[:, k]

    def nuclear_axes(self, B) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """(x, z) axis components per nucleus for every basis state."""
        wn = self.spec.gamma_n * B
        out = {}
        for nuc in self.nuclei:
            x = np.zeros(self.dim)
            z = np.full(self.dim, -wn)
            for e, a_zz, a_zx in nuc.couplings:
                m = self.m_values(e)
                x += m * a_zx
                z += m * a_zz
            out[nuc.label] = (x, z)
        return out

    # -- Hamiltonian -------------------------------------------------------

    def _hamiltonian_parts(self, include_dipolar):
        """(field-independent part, electron Zeeman S^z sum, nuclear I^z sum), cached."""
        key = ("H_parts", include_dipolar)
        if key in self._cache:
            return self._cache[key]
        spec = self.spec
        L = self.layout
        zero = sp.csr_matrix((self.dim, self.dim), dtype=complex)
        H0, Ze, Zn = zero, zero, zero
        for e, s in self.electrons.items():
            sz = (_S1 if s == 1 else _SH)["z"]
            Ze = Ze + embed_many({e: sz}, L).matrix
            if s == 1:
                H0 = H0 + spec.D * embed_many({e: sz @ sz}, L).matrix
        for nuc in self.nuclei:
            Zn = Zn + embed_many({nuc.label: _SH["z"]}, L).matrix
            for e, a_zz, a_zx in nuc.couplings:
                sz = (_S1 if self.electrons[e] == 1 else _SH)["z"]
                H0 = H0 + a_zz * embed_many({e: sz, nuc.label: _SH["z"]}, L).matrix
                H0 = H0 + a_zx * embed_many({e: sz, nuc.label: _SH["x"]}, L).matrix
        if include_dipolar and spec.J_d:
            for a, b in self.bonds:
                ma, mb = _S1 if self.electrons[a] == 1 else _SH, _S1 if self.electrons[b] == 1 else _SH
                up = embed_many({a: ma["plus"], b: mb["plus"]}, L).matrix
                H0 = H0 + 0.5 * spec.J_d * (up + up.conj().T)
        parts = tuple(sp.csr_matrix(x) for x in (H0, Ze, Zn))
        self._cache[key] = parts
        return parts

    def hamiltonian(self, B=None, include_dipolar=True) -> SpinOperator:
        spec = self.spec
        B = spec.B if B is None else B
        we, wn = abs(spec.gamma_e) * B, spec.gamma_n * B
        H0, Ze, Zn = self._hamiltonian_parts(include_dipolar)
        H = sp.csr_matrix(H0 + we * Ze - wn * Zn)
        H.eliminate_zeros()
        op = SpinOperator(self.layout, H)
        if abs(H - H.conj().T).max() > 1e-12 * max(1.0, abs(H).max()):
            raise AssertionError("constructed Hamiltonian is not Hermitian")
        return op.as_hermitian()

    # -- dressed (hyperfine eigenframe) basis ------------------------------

    def dressed_unitary(self, B=None) -> sp.csr_matrix:
        """Unitary whose columns are the dressed product states.

        Column k is the product state whose nuclear digits are read in the
        local eigenframes fixed by the electron projections of state k.
        """
        B = self.spec.B if B is None else B
        key = ("U", float(B))
        if key in self._cache:
            return self._cache[key]
        axes = self.nuclear_axes(B)
        dims = self.layout.dims
        rows, cols, vals = [], [], []
        nuc_idx = [self.layout.index(n) for n in self.nuclear_labels]
        thetas = {}
        for lab, (x, z) in axes.items():
            th = np.where(z != 0, np.arctan(np.divide(x, z, out=np.zeros_like(x), where=z != 0)),
                          np.copysign(np.pi / 2, x))
            th = np.where(np.isclose(th, -np.pi / 2), np.pi / 2, th)
            thetas[lab] = th
        # enumerate nuclear digit combinations for each column
        n_nuc = len(nuc_idx)
        combos = np.array(np.unravel_index(np.arange(2**n_nuc), [2] * n_nuc)).T
        for k in range(self.dim):
            dk = self.digits[k]
            rs = [_rot(thetas[lab][k]) for lab in self.nuclear_labels]
            for c in combos:
                amp = 1.0 + 0j
                for i, (ci, R) in enumerate(zip(c, rs)):
                    amp *= R[ci, dk[nuc_idx[i]]]
                if amp == 0:
                    continue
                dr = dk.copy()
                dr[nuc_idx] = c
                rows.append(int(np.ravel_multi_index(tuple(dr), dims)))
                cols.append(k)
                vals.append(amp)
        U = sp.csr_matrix((vals, (rows, cols)), shape=(self.dim, self.dim))
        self._cache[key] = U
        return U

    def dressed_energies(self, B=None) -> np.ndarray:
        """Diagonal energies of every dressed product state (no dipolar term)."""
        spec = self.spec
        B = spec.B if B is None else B
        we = abs(spec.gamma_e) * B
        E = np.zeros(self.dim)
        for e, s in self.electrons.items():
            m = self.m_values(e)
            E += we * m
            if s == 1:
                E += spec.D * m**2
        for lab, (x, z) in self.nuclear_axes(B).items():
            m = self.m_values(lab)  # +1/2 for dressed up
            E += 2 * m * np.sign(np.where(z == 0, 1.0, z)) * np.hypot(x, z) / 2
        return E

    def dressed_sz(self, label, B=None) -> SpinOperator:
        """Nuclear spin component along its local quantization axis (lab basis)."""
        B = self.spec.B if B is None else B
        key = ("Sz", label, float(B))
        if key not in self._cache:
            U = self.dressed_unitary(B)
            m = self.m_values(label)
            self._cache[key] = SpinOperator(self.layout, (U @ sp.diags(m) @ U.conj().T).tocsr()).as_hermitian()
        return self._cache[key]

    def basis_index(self, config: dict) -> int:
        """Flat index from a mapping label -> magnetic projection."""
        digits = []
        for lab, d in self.layout.factors:
            m = config[lab]
            s = (d - 1) / 2
            idx = int(round(s - m))
            if not 0 <= idx < d:
                raise ValueError(f"projection {m} invalid for {lab}")
            digits.append(idx)
        return self.layout.basis_index(digits)

    def dressed_state(self, config: dict, B=None) -> np.ndarray:
        """Lab-basis vector of a dressed product state."""
        U = self.dressed_unitary(B)
        return np.asarray(U[:, self.basis_index(config)].toarray()).ravel()

    def sectors(self) -> tuple[int, np.ndarray]:
        """Connected components of the Hamiltonian coupling graph."""
        if "sectors" not in self._cache:
            H = self.hamiltonian(B=max(self.spec.B, 1e-3)).matrix
            pattern = (abs(H) > 0).astype(int)
            self._cache["sectors"] = connected_components(pattern, directed=False)
        return self._cache["sectors"]


def chain_model(spec: ChainSpec, cap: int = DIM_CAP) -> FullModel:
    """Dressed-cell chain: cell order (S'_j, I_j, S_j)."""
    n = spec.n_sites
    if 12**n > cap:
        raise ValueError(
            f"chain of {n} dressed sites has dimension {12**n} > cap {cap}; "
            "use the effective model or kinetic Monte Carlo for larger chains"
        )
    factors, electrons, nuclei = [], {}, []
    for j, site in enumerate(spec.sites, start=1):
        factors += [(f"Sp{j}", 2), (f"I{j}", 2), (f"S{j}", 3)]
        electrons[f"Sp{j}"] = 0.5
        electrons[f"S{j}"] = 1
        nuclei.append(Nucleus(f"I{j}", ((f"S{j}", site.A_zz, site.A_zx), (f"Sp{j}", site.Ap_zz, site.Ap_zx))))
    bonds = [(f"S{j}", f"Sp{j + 1}") for j in range(1, n)]
    if spec.topology == "ring":
        bonds.append((f"S{n}", "Sp1"))
    return FullModel(spec, SpaceLayout(tuple(factors)), electrons, nuclei, bonds, "chain")


def pair_model(spec: ChainSpec) -> FullModel:
    """Four-spin set |m_I1, m_S, m_S', m_I2>: I1-S hyperfine, I2-S' hyperfine."""
    if spec.n_sites != 2:
        raise ValueError("pair model needs exactly two sites")
    s1, s2 = spec.sites
    layout = SpaceLayout((("I1", 2), ("S", 3), ("Sp", 2), ("I2", 2)))
    nuclei = [Nucleus("I1", (("S", s1.A_zz, s1.A_zx),)), Nucleus("I2", (("Sp", s2.Ap_zz, s2.Ap_zx),))]
    return FullModel(spec, layout, {"S": 1, "Sp": 0.5}, nuclei, [("S", "Sp")], "pair")


def build_pair_hamiltonian(spec: ChainSpec) -> SpinOperator:
    return pair_model(spec).hamiltonian()


def build_chain_hamiltonian(spec: ChainSpec, cap: int = DIM_CAP) -> SpinOperator:
    return chain_model(spec, cap).hamiltonian()


# ---------------------------------------------------------------------------
# effective couplings


def pair_angles(spec: ChainSpec, omega_1):
    s1, s2 = spec.sites
    th1 = _frame_from_axis(-s1.A_zx, -s1.A_zz - omega_1).theta
    th2p = _frame_from_axis(0.5 * s2.Ap_zx, 0.5 * s2.Ap_zz - omega_1).theta
    th2m = _frame_from_axis(-0.5 * s2.Ap_zx, -0.5 * s2.Ap_zz - omega_1).theta
    return th1, th2m, th2p


def effective_coupling_pair(spec: ChainSpec, omega_1=None) -> float:
    """Flip-flop matrix element <dn,-1,-1/2,up|H|up,0,+1/2,dn> of the pair.

    Includes the spin-1 ladder factor sqrt(2) carried by S-.
    """
    if omega_1 is None:
        omega_1 = spec.gamma_n * matching_field(spec, "alpha", geometry="pair").B_m
    th1, th2m, th2p = pair_angles(spec, omega_1)
    return _SQRT2 * spec.J_d / 2 * math.sin(-th1 / 2) * math.sin((th2m - th2p) / 2)


def chain_angles(site: SiteSpec, omega_n):
    t0m = hyperfine_frame(site, 0, -0.5, omega_n).theta
    t1m = hyperfine_frame(site, -1, -0.5, omega_n).theta
    t0p = hyperfine_frame(site, 0, 0.5, omega_n).theta
    return t0m, t1m, t0p


def effective_coupling_chain(spec: ChainSpec, omega_n=None) -> float:
    """Inter-cell flip-flop element for a translation-invariant chain."""
    if not spec.uniform:
        raise ValueError("effective_coupling_chain assumes identical sites (translational invariance)")
    if omega_n is None:
        omega_n = spec.omega_n
    t0m, t1m, t0p = chain_angles(spec.sites[0], omega_n)
    return _SQRT2 * spec.J_d / 2 * math.sin((t0m - t1m) / 2) * math.sin((t0m - t0p) / 2)


# ---------------------------------------------------------------------------
# matching fields

_RESONANT = {
    # geometry, branch -> (state a, state b)
    ("pair", "alpha"): ({"I1": 0.5, "S": 0, "Sp": 0.5, "I2": -0.5}, {"I1": -0.5, "S": -1, "Sp": -0.5, "I2": 0.5}),
    ("pair", "beta"): ({"I1": -0.5, "S": 0, "Sp": 0.5, "I2": 0.5}, {"I1": 0.5, "S": -1, "Sp": -0.5, "I2": -0.5}),
    ("chain", "alpha"): (
        {"Sp1": -0.5, "I1": 0.5, "S1": 0, "Sp2": 0.5, "I2": -0.5, "S2": 0},
        {"Sp1": -0.5, "I1": -0.5, "S1": -1, "Sp2": -0.5, "I2": 0.5, "S2": 0},
    ),
    ("chain", "beta"): (
        {"Sp1": -0.5, "I1": -0.5, "S1": 0, "Sp2": 0.5, "I2": 0.5, "S2": 0},
        {"Sp1": -0.5, "I1": 0.5, "S1": -1, "Sp2": -0.5, "I2": -0.5, "S2": 0},
    ),
}


def resonant_states(geometry, branch):
    try:
        return _RESONANT[(geometry, branch)]
    except KeyError:
        raise ValueError(f"unknown geometry/branch {geometry!r}/{branch!r}") from None


def _two_cell(spec: ChainSpec, bond=0) -> FullModel:
    sites = (spec.sites[bond], spec.sites[(bond + 1) % spec.n_sites])
    return chain_model(replace(spec, sites=sites, topology="open"))


def _model_for(spec, geometry, bond=0) -> FullModel:
    if geometry == "pair":
        return pair_model(spec)
    if geometry == "chain":
        return _two_cell(spec, bond)
    raise ValueError(f"unknown geometry {geometry!r}")


def matching_residual(spec: ChainSpec, B, branch="alpha", geometry="chain", bond=0) -> float:
    """E_a - E_b of the two resonant dressed states at field B (Hz)."""
    model = _model_for(spec, geometry, bond)
    return _residual(model, B, branch)


def _residual(model: FullModel, B, branch):
    a, b = resonant_states(model.geometry, branch)
    s = model.spec
    we, wn = abs(s.gamma_e) * B, s.gamma_n * B

    def energy(cfg):
        e = 0.0
        for lab, spin in model.electrons.items():
            m = cfg[lab]
            e += we * m + (s.D * m * m if spin == 1 else 0.0)
        for nuc in model.nuclei:
            x = sum(cfg[el] * azx for el, _, azx in nuc.couplings)
            z = sum(cfg[el] * azz for el, azz, _ in nuc.couplings) - wn
            sign = 1.0 if z >= 0 else -1.0
            e += cfg[nuc.label] * sign * math.hypot(x, z)
        return e

    return energy(a) - energy(b)


def matching_field(spec: ChainSpec, branch="alpha", geometry="chain", bond=0,
                   n_scan=2000, max_iter=60) -> MatchingCondition:
    """Field where the two resonant dressed states are degenerate.

    Scans B in [1 uT, D/|gamma_e|] for a sign change, then bisects until the
    energy residual is below 1 Hz.
    """
    if spec.D <= 0 or not abs(spec.gamma_e) > spec.gamma_n > 0:
        raise MatchingError("need D > 0 and |gamma_e| > gamma_n > 0")
    model = _model_for(spec, geometry, bond)
    f = lambda B: _residual(model, B, branch)
    grid = np.linspace(1e-6, spec.D / abs(spec.gamma_e), n_scan)
    vals = np.array([f(B) for B in grid])
    idx = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]
    if len(idx) == 0:
        raise MatchingError(
            f"no matching field for branch {branch}: residual spans [{vals.min():.4g}, {vals.max():.4g}] Hz"
        )
    lo, hi = grid[idx[0]], grid[idx[0] + 1]
    flo = f(lo)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) < 1.0 and hi - lo < 1e-9:
            break
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi = mid
    B = 0.5 * (lo + hi)
    res = f(B)
    if abs(res) >= 1.0:
        raise MatchingError(f"bisection did not reach |residual| < 1 Hz (got {res})")
    return MatchingCondition(branch, float(B), float(res), geometry)


def avoided_crossing(spec: ChainSpec, branch="alpha", geometry="chain", bond=0, window=20e-6):
    """Refine the matching field on the full Hamiltonian.

    Returns the condition at the minimum splitting of the two eigenstates
    that carry the resonant dressed states; ``coupling`` is half that
    minimum splitting, i.e. the exact flip-flop amplitude.
    """
    base = matching_field(spec, branch, geometry, bond)
    model = _model_for(spec, geometry, bond)
    a, b = resonant_states(model.geometry, branch)
    ia, ib = model.basis_index(a), model.basis_index(b)
    _, labels = model.sectors()
    block = np.nonzero(labels == labels[ia])[0]
    if labels[ib] != labels[ia]:
        raise MatchingError("resonant states are not coupled by the Hamiltonian")

    def gap(B):
        H = model.hamiltonian(B).matrix[block][:, block].toarray()
        U = model.dressed_unitary(B)[:, [ia, ib]].toarray()[block]
        w, v = np.linalg.eigh(H)
        weight = np.sum(np.abs(v.conj().T @ U) ** 2, axis=1)
        top = np.argsort(weight)[-2:]
        return abs(w[top[0]] - w[top[1]])

    grid = base.B_m + np.linspace(-window, window, 81)
    g = np.array([gap(B) for B in grid])
    k = int(np.argmin(g))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    opt = minimize_scalar(gap, bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
    B = float(opt.x)
    return MatchingCondition(branch, B, _residual(model, B, branch), geometry, coupling=float(opt.fun) / 2)


def detuning_of(B, matching: MatchingCondition, gamma_e=GAMMA_E) -> float:
    return 2.0 * abs(B - matching.B_m) * abs(gamma_e)


def effective_pair_hamiltonian(delta_eff, J_eff) -> SpinOperator:
    layout = SpaceLayout((("I1", 2), ("I2", 2)))
    z1 = embed_many({"I1": _SH["z"]}, layout)
    z2 = embed_many({"I2": _SH["z"]}, layout)
    ff = embed_many({"I1": _SH["plus"], "I2": _SH["minus"]}, layout)
    H = delta_eff * z1 - delta_eff * z2 + J_eff * (ff + ff.dag)
    return H.as_hermitian()


# ---------------------------------------------------------------------------
# Table A.1 block

TABLE_STATES = [
    # (m_S'1, m_I1, m_S1, m_S'2, m_I2, m_S2)
    (-0.5, 0.5, 0, 0.5, 0.5, 0),
    (-0.5, 0.5, 0, 0.5, -0.5, 0),
    (-0.5, -0.5, 0, 0.5, 0.5, 0),
    (-0.5, -0.5, 0, 0.5, -0.5, 0),
    (-0.5, 0.5, -1, -0.5, 0.5, 0),
    (-0.5, 0.5, -1, -0.5, -0.5, 0),
    (-0.5, -0.5, -1, -0.5, 0.5, 0),
    (-0.5, -0.5, -1, -0.5, -0.5, 0),
]
_TABLE_LABELS = ("Sp1", "I1", "S1", "Sp2", "I2", "S2")


def reduced_block(spec: ChainSpec) -> np.ndarray:
    """8x8 block of the two-cell Hamiltonian in the dressed basis.

    Rows/columns follow ``TABLE_STATES``.
    """
    if spec.n_sites != 2 or spec.topology != "open":
        raise ValueError("reduced_block needs an open two-site chain")
    model = chain_model(spec)
    U = model.dressed_unitary()
    idx = [model.basis_index(dict(zip(_TABLE_LABELS, st))) for st in TABLE_STATES]
    Uk = U[:, idx]
    H = model.hamiltonian().matrix
    block = (Uk.conj().T @ H @ Uk).toarray()
    check = (U.conj().T @ H @ U)[idx][:, idx].toarray()
    if not np.allclose(block, check):
        raise AssertionError("subspace extraction mismatch")
    return block


def analytic_block(spec: ChainSpec) -> np.ndarray:
    """Closed-form 8x8 block (global 1/2 applied, spin-1 ladder sqrt(2) on J_d)."""
    site = spec.sites[0]
    wn = spec.omega_n
    t0m, t1m, t0p = chain_angles(site, wn)
    # the m_S' = -1/2 axes point against the field when omega_n > 0; signed
    # splittings keep the block valid when an axis crosses z = 0
    d0m = -hyperfine_frame(site, 0, -0.5, wn).splitting
    d1m = -hyperfine_frame(site, -1, -0.5, wn).splitting
    d0p = hyperfine_frame(site, 0, 0.5, wn).splitting
    dw = spec.D - 2 * spec.omega_e
    c1, s1 = math.cos((t0m - t1m) / 2), math.sin((t0m - t1m) / 2)
    c2, s2 = math.cos((t0m - t0p) / 2), math.sin((t0m - t0p) / 2)
    J = spec.J_d * _SQRT2
    M = np.zeros((8, 8))
    M[0, 0] = d0p - d0m
    M[1, 1] = -d0p - d0m
    M[2, 2] = d0p + d0m
    M[3, 3] = -d0p + d0m
    M[4, 4] = 2 * dw - d0m - d1m
    M[5, 5] = 2 * dw + d0m - d1m
    M[6, 6] = 2 * dw - d0m + d1m
    M[7, 7] = 2 * dw + d0m + d1m
    upper = J * np.array([
        [c2 * c1, -s2 * c1, c2 * s1, -s2 * s1],
        [s2 * c1, c2 * c1, s2 * s1, c2 * s1],
        [-c2 * s1, s2 * s1, c2 * c1, -s2 * c1],
        [-s2 * s1, -c2 * s1, s2 * c1, c2 * c1],
    ])
    M[:4, 4:] = upper
    M[4:, :4] = upper.T
    return M / 2
