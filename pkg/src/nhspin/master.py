"""Lindblad generators, QME integration, steady states and the adjoint generator.

Density matrices are vectorized row-major, ``vec(rho) = rho.ravel()``,
so ``vec(A rho B) = (A kron B^T) vec(rho)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.sparse.linalg import expm_multiply

from .effective import EffectiveModel
from .spin_core import (
    LayoutError,
    QuantumState,
    SpaceLayout,
    SpinOperator,
    embed,
    embed_many,
    spin_matrices,
    zero,
)

RTOL = 1e-8
ATOL = 1e-10
DENSITY_CAP = 4096
EXPM_CAP = 256  # auto method: exponential up to this Hilbert dimension
DENSE_EXPM_CAP = 1500  # dense expm up to this many reachable superoperator entries
KERNEL_CAP = 32  # dense kernel search for steady states up to this dimension
TRACE_DRIFT = 1e-7
STEADY_TOL = 1e-9

_SH = spin_matrices(0.5)


class IntegrationError(RuntimeError):
    pass


class MultipleSteadyStateError(RuntimeError):
    def __init__(self, kernel_dim):
        super().__init__(
            f"Liouvillian kernel has dimension {kernel_dim}; supply an initial state to select the asymptotic state"
        )
        self.kernel_dim = kernel_dim


@dataclass(frozen=True)
class JumpSet:
    collapse_ops: tuple[SpinOperator, ...] = ()
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        ops, labels = tuple(self.collapse_ops), tuple(self.labels)
        if len(labels) != len(ops):
            labels = tuple(labels) + tuple(f"C{k}" for k in range(len(labels), len(ops)))
        if ops and any(c.layout != ops[0].layout for c in ops):
            raise LayoutError("collapse operators must share one layout")
        object.__setattr__(self, "collapse_ops", ops)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.collapse_ops)

    def __add__(self, other: "JumpSet") -> "JumpSet":
        return JumpSet(self.collapse_ops + other.collapse_ops, self.labels + other.labels)

    @property
    def layout(self):
        return self.collapse_ops[0].layout if self.collapse_ops else None

    def decay_operator(self) -> sp.csr_matrix:
        """sum_k C_k^dag C_k."""
        if not self.collapse_ops:
            return None
        return sum((c.matrix.conj().T @ c.matrix for c in self.collapse_ops)).tocsr()


@dataclass(frozen=True)
class Liouvillian:
    hamiltonian: SpinOperator
    jumps: JumpSet = JumpSet()

    def __post_init__(self):
        if self.jumps.layout is not None and self.jumps.layout != self.hamiltonian.layout:
            raise LayoutError("Hamiltonian and collapse operators live on different layouts")

    @property
    def layout(self) -> SpaceLayout:
        return self.hamiltonian.layout

    @property
    def dim(self) -> int:
        return self.layout.total_dim

    def superoperator(self) -> sp.csr_matrix:
        d = self.dim
        eye = sp.identity(d, dtype=complex, format="csr")
        H = self.hamiltonian.matrix
        L = -1j * (sp.kron(H, eye) - sp.kron(eye, H.T))
        for c in self.jumps.collapse_ops:
            C = c.matrix
            CdC = C.conj().T @ C
            L = L + sp.kron(C, C.conj()) - 0.5 * sp.kron(CdC, eye) - 0.5 * sp.kron(eye, CdC.T)
        return sp.csr_matrix(L)

    def rate_scale(self) -> float:
        """Largest frequency scale of the generator (Hz)."""
        h = self.hamiltonian.matrix
        s = float(np.max(np.abs(h.data))) if h.nnz else 0.0
        for c in self.jumps.collapse_ops:
            if c.matrix.nnz:
                s = max(s, float(np.max(np.abs(c.matrix.data))) ** 2)
        return s

    def classical_generator(self):
        """Rate matrix G (dp/dt = G p) if the dynamics close on diagonals, else None.

        Closure holds when H is diagonal and every collapse operator maps
        each basis state to at most one basis state injectively.
        """
        H = self.hamiltonian.matrix.tocoo()
        if np.any(H.row != H.col):
            return None
        d = self.dim
        rows, cols, vals = [], [], []
        for c in self.jumps.collapse_ops:
            C = c.matrix.tocoo()
            if C.nnz == 0:
                continue
            if len(np.unique(C.col)) != C.nnz or len(np.unique(C.row)) != C.nnz:
                return None
            r = np.abs(C.data) ** 2
            rows += [C.row, C.col]
            cols += [C.col, C.col]
            vals += [r, -r]
        if not rows:
            return sp.csr_matrix((d, d))
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(d, d))


# ---------------------------------------------------------------------------
# collapse operators


def optical_pumping_jump(layout: SpaceLayout, site_S_label: str, Gamma_op) -> SpinOperator:
    """sqrt(Gamma_op) (|0><-1| + |0><+1|) on a spin-1 factor."""
    if layout.dim(site_S_label) != 3:
        raise LayoutError(f"optical pumping needs a spin-1 factor; {site_S_label!r} has dim {layout.dim(site_S_label)}")
    if Gamma_op < 0:
        raise ValueError("Gamma_op must be >= 0")
    local = np.zeros((3, 3), dtype=complex)
    local[1, 0] = local[1, 2] = 1.0
    return embed(math.sqrt(Gamma_op) * local, site_S_label, layout)


def optical_pumping_channels(layout: SpaceLayout, site_S_label: str, Gamma_op) -> list[SpinOperator]:
    """Incoherent variant: separate jumps sqrt(Gamma_op)|0><-1| and sqrt(Gamma_op)|0><+1|.

    Same decay operator as the coherent form but without its dark state
    (|+1> - |-1>)/sqrt(2), so |0><0| is the unique fixed point.
    """
    if layout.dim(site_S_label) != 3 or Gamma_op < 0:
        optical_pumping_jump(layout, site_S_label, Gamma_op)
    ops = []
    for col in (0, 2):
        local = np.zeros((3, 3), dtype=complex)
        local[1, col] = math.sqrt(Gamma_op)
        ops.append(embed(local, site_S_label, layout))
    return ops


def relaxation_jumps(layout: SpaceLayout, site_label: str, Gamma_e) -> list[SpinOperator]:
    """Infinite-temperature longitudinal relaxation of a spin-1/2 at net rate Gamma_e."""
    if layout.dim(site_label) != 2:
        raise LayoutError(f"relaxation jumps need a spin-1/2 factor; {site_label!r} has dim {layout.dim(site_label)}")
    if Gamma_e < 0:
        raise ValueError("Gamma_e must be >= 0")
    if Gamma_e == 0:
        return []
    a = math.sqrt(Gamma_e / 2)
    return [embed(a * _SH["plus"], site_label, layout), embed(a * _SH["minus"], site_label, layout)]


def full_jumps(model, Gamma_op=None, Gamma_e=None, relax_S=None, incoherent_pumping=False) -> JumpSet:
    """Pumping on every spin-1 and relaxation on every spin-1/2 electron of a full model."""
    spec = model.spec
    Gamma_op = spec.Gamma_op if Gamma_op is None else Gamma_op
    Gamma_e = spec.Gamma_e if Gamma_e is None else Gamma_e
    relax_S = spec.relax_S if relax_S is None else relax_S
    ops, labels = [], []
    for lab in model.spin1:
        if Gamma_op > 0 and incoherent_pumping:
            ops += optical_pumping_channels(model.layout, lab, Gamma_op)
            labels += [f"op-:{lab}", f"op+:{lab}"]
        elif Gamma_op > 0:
            ops.append(optical_pumping_jump(model.layout, lab, Gamma_op))
            labels.append(f"op:{lab}")
        if relax_S and Gamma_e > 0:
            for sign, m in (("+", "plus"), ("-", "minus")):
                ops.append(embed(math.sqrt(Gamma_e / 2) * spin_matrices(1)[m] / math.sqrt(2), lab, model.layout))
                labels.append(f"relax{sign}:{lab}")
    for lab in model.spin_half:
        for sign, op in zip("+-", relaxation_jumps(model.layout, lab, Gamma_e)):
            ops.append(op)
            labels.append(f"relax{sign}:{lab}")
    return JumpSet(tuple(ops), tuple(labels))


def effective_lindbladian(model: EffectiveModel) -> Liouvillian:
    layout = model.layout
    ops, labels = [], []
    for a, b, r in model.directed_bonds:
        c = embed_many({f"I{a}": _SH["minus"], f"I{b}": _SH["plus"]}, layout)
        ops.append(math.sqrt(r) * c)
        labels.append(f"eff:{a}->{b}")
    H = zero(layout)
    for a, b, J in model.coherent_bonds:
        ff = embed_many({f"I{a}": _SH["plus"], f"I{b}": _SH["minus"]}, layout)
        H = H + J * (ff + ff.dag)
    return Liouvillian(H.as_hermitian(), JumpSet(tuple(ops), tuple(labels)))


# ---------------------------------------------------------------------------
# generator action


def _rhs_matrix(liouv: Liouvillian, rho: np.ndarray, H=None, decay=None) -> np.ndarray:
    H = liouv.hamiltonian.matrix if H is None else H
    # general form, valid for non-Hermitian rho so integrator error cannot feed back
    out = -1j * (H @ rho - rho @ H)
    if decay is None:
        decay = liouv.jumps.decay_operator()
    for c in liouv.jumps.collapse_ops:
        C = c.matrix
        out += C @ rho @ C.conj().T
    if decay is not None:
        out -= 0.5 * (decay @ rho + rho @ decay)
    return out


def lindblad_rhs(liouv: Liouvillian, rho: QuantumState) -> np.ndarray:
    if rho.layout != liouv.layout:
        raise LayoutError("state and Liouvillian layouts differ")
    if rho.kind != "density":
        rho = rho.to_density()
    return _rhs_matrix(liouv, np.asarray(rho.data))


def adjoint_generator(liouv: Liouvillian, observable: SpinOperator) -> SpinOperator:
    """Heisenberg-picture generator: dO/dt = i[H, O] + sum_k (C^dag O C - {C^dag C, O}/2)."""
    if observable.layout != liouv.layout:
        raise LayoutError("observable and Liouvillian layouts differ")
    O = observable.matrix
    H = liouv.hamiltonian.matrix
    out = 1j * (H @ O - O @ H)
    for c in liouv.jumps.collapse_ops:
        C = c.matrix
        Cd = C.conj().T
        CdC = Cd @ C
        out = out + Cd @ O @ C - 0.5 * (CdC @ O + O @ CdC)
    out = sp.csr_matrix(out)
    out.eliminate_zeros()
    return SpinOperator(liouv.layout, out, hermitian=observable.hermitian)


# ---------------------------------------------------------------------------
# time evolution


def _as_state(layout, rho, kind="density") -> QuantumState:
    if kind == "diagonal":
        p = np.clip(rho.real, 0.0, None)
        return QuantumState(layout, "diagonal", p / p.sum())
    rho = 0.5 * (rho + rho.conj().T)
    return QuantumState(layout, "density", rho / np.trace(rho).real)


def _initial_matrix(rho0: QuantumState) -> np.ndarray:
    if rho0.kind == "density":
        return np.array(rho0.data)
    return np.array(rho0.to_density().data)


def _is_diagonal(rho0: QuantumState) -> bool:
    if rho0.kind == "diagonal":
        return True
    if rho0.kind == "pure":
        return np.count_nonzero(np.abs(rho0.data) > 0) <= 1
    off = rho0.data - np.diag(np.diag(rho0.data))
    return not np.any(np.abs(off) > 1e-14)


def _check_grid(t_grid):
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or len(t) == 0 or np.any(np.diff(t) < 0):
        raise ValueError("t_grid must be a non-empty ascending sequence")
    return t


def evolve_qme(
    liouv: Liouvillian,
    rho0: QuantumState,
    t_grid,
    method: str = "auto",
    observer: Callable | None = None,
    rtol: float = RTOL,
    atol: float = ATOL,
):
    """Integrate the master equation and return the state at every grid time.

    ``method`` is ``"auto"``, ``"diagonal"`` (classical rate equation, valid
    when the generator closes on diagonal states), ``"expm"`` (exact
    superoperator exponential on the subspace reachable from rho0),
    ``"krylov"`` (the same with a sparse exponential action)
    or ``"rk45"``. When ``observer`` is given it
    is called as ``observer(t, state)`` and its return values are collected
    instead of the states.
    """
    if rho0.layout != liouv.layout:
        raise LayoutError("initial state and Liouvillian layouts differ")
    t = _check_grid(t_grid)
    d = liouv.dim
    G = None
    if method in ("auto", "diagonal") and _is_diagonal(rho0):
        G = liouv.classical_generator()
    if method == "diagonal" and G is None:
        raise ValueError("diagonal method needs a diagonal initial state and a diagonal-closing generator")
    if G is None and d > DENSITY_CAP:
        raise ValueError(f"density evolution limited to dimension {DENSITY_CAP}; got {d}")
    emit = observer if observer is not None else (lambda _t, s: s)

    if G is not None:
        p = rho0.populations.copy()
        out = []
        for k, tk in enumerate(t):
            if k:
                p = expm_multiply(G * (tk - t[k - 1]), p) if tk > t[k - 1] else p
            if abs(p.sum() - 1.0) > TRACE_DRIFT:
                raise IntegrationError(f"population drift {p.sum() - 1.0:.3g} at t={tk}")
            out.append(emit(tk, _as_state(liouv.layout, p, "diagonal")))
        return out

    if method == "auto":
        method = "expm" if d <= EXPM_CAP else "rk45"
    rho = _initial_matrix(rho0)
    if method == "expm":
        return _evolve_expm(liouv, rho, t, emit)
    if method == "krylov":
        return _evolve_expm(liouv, rho, t, emit, dense_cap=0)
    if method == "rk45":
        return _evolve_rk45(liouv, rho, t, emit, rtol, atol)
    raise ValueError(f"unknown method {method!r}")


def _reachable(L: sp.csr_matrix, v: np.ndarray) -> np.ndarray:
    """Indices reachable from supp(v) in the sparsity graph of L (an invariant subspace)."""
    pattern = (abs(L) > 0).astype(np.int8).tocsr()
    mask = v != 0
    while True:
        grown = mask | (pattern @ mask.astype(np.int8) > 0)
        if grown.sum() == mask.sum():
            return np.nonzero(mask)[0]
        mask = grown


def _evolve_expm(liouv, rho, t, emit, dense_cap=DENSE_EXPM_CAP):
    """Exact exponential on the invariant subspace reached from rho.

    Dense ``expm`` (cached per step length) when that subspace has at most
    ``dense_cap`` entries, sparse Krylov action otherwise.
    """
    d = liouv.dim
    L = liouv.superoperator().tocsr()
    v = rho.ravel().astype(complex)
    idx = _reachable(L, v)
    Lr = L[idx][:, idx]
    dense = len(idx) <= dense_cap
    if dense:
        Lr = Lr.toarray()
    cache = {}
    vr = v[idx]
    out = []
    for k, tk in enumerate(t):
        if k and tk > t[k - 1]:
            dt = tk - t[k - 1]
            if dense:
                key = round(dt, 15)
                if key not in cache:
                    cache[key] = la.expm(Lr * dt)
                vr = cache[key] @ vr
            else:
                vr = expm_multiply(Lr * dt, vr)
        full = np.zeros(d * d, complex)
        full[idx] = vr
        r = full.reshape(d, d)
        _trace_guard(r, tk)
        out.append(emit(tk, _as_state(liouv.layout, r)))
    return out


def _evolve_rk45(liouv, rho, t, emit, rtol, atol):
    d = liouv.dim
    H = liouv.hamiltonian.matrix
    decay = liouv.jumps.decay_operator()

    def f(_t, y):
        return _rhs_matrix(liouv, y.reshape(d, d), H, decay).ravel()

    y = rho.ravel()
    out = [emit(t[0], _as_state(liouv.layout, rho))]
    for k in range(1, len(t)):
        t0, t1 = t[k - 1], t[k]
        if t1 > t0:
            sol = solve_ivp(f, (t0, t1), y, method="RK45", rtol=rtol, atol=atol)
            if not sol.success:
                raise IntegrationError(f"RK45 failed on [{t0}, {t1}]: {sol.message}")
            y = sol.y[:, -1]
        r = y.reshape(d, d)
        _trace_guard(r, t1)
        out.append(emit(t1, _as_state(liouv.layout, r)))
    return out


def _trace_guard(r, t):
    drift = abs(np.trace(r) - 1.0)
    if drift > TRACE_DRIFT:
        raise IntegrationError(f"trace drift {drift:.3g} at t={t} exceeds {TRACE_DRIFT}")


# ---------------------------------------------------------------------------
# steady states


def residual_norm(liouv: Liouvillian, rho: QuantumState) -> float:
    """||L(rho)||_F relative to the generator's frequency scale."""
    if rho.kind == "diagonal":
        G = liouv.classical_generator()
        if G is not None:
            r = np.linalg.norm(G @ rho.populations)
            return r / max(liouv.rate_scale(), 1e-300)
    r = np.linalg.norm(lindblad_rhs(liouv, rho))
    return r / max(liouv.rate_scale(), 1e-300)


def _kernel_dense(L: np.ndarray, scale: float):
    w, v = la.eig(L)
    idx = np.nonzero(np.abs(w) < 1e-9 * max(scale, 1.0))[0]
    return idx, v


def steady_state(liouv: Liouvillian, rho0: QuantumState | None = None, t_max=None) -> QuantumState:
    """Stationary state of the generator.

    A unique kernel element is returned directly. With a degenerate kernel
    the state reached from ``rho0`` by long-time integration is returned,
    stopping once the relative residual ||L(rho)|| / scale drops below 1e-9.
    """
    d = liouv.dim
    if d > DENSITY_CAP:
        raise ValueError(f"steady_state limited to dimension {DENSITY_CAP}")
    scale = liouv.rate_scale()
    G = liouv.classical_generator() if rho0 is None or _is_diagonal(rho0) else None
    kdim = None
    if d <= KERNEL_CAP:
        L = liouv.superoperator().toarray()
        idx, v = _kernel_dense(L, scale)
        kdim = len(idx)
        if kdim == 1:
            rho = v[:, idx[0]].reshape(d, d)
            rho = rho / np.trace(rho)
            state = _as_state(liouv.layout, rho)
            if residual_norm(liouv, state) > STEADY_TOL:
                raise IntegrationError("kernel vector fails the residual check")
            return state
    if rho0 is None:
        if kdim is None:
            kdim = _kernel_dim_sparse(liouv, G)
            if kdim == 1:
                return _sparse_unique(liouv, G)
        raise MultipleSteadyStateError(kdim)
    return _long_time(liouv, rho0, G, t_max)


def _kernel_dim_sparse(liouv, G) -> int:
    if G is not None:
        w = la.eigvals(G.toarray())
    else:
        w = la.eigvals(liouv.superoperator().toarray())
    return int(np.sum(np.abs(w) < 1e-9 * max(liouv.rate_scale(), 1.0)))


def _sparse_unique(liouv, G):
    if G is not None:
        w, v = la.eig(G.toarray())
        p = v[:, np.argmin(np.abs(w))].real
        return _as_state(liouv.layout, p / p.sum(), "diagonal")
    w, v = la.eig(liouv.superoperator().toarray())
    d = liouv.dim
    rho = v[:, np.argmin(np.abs(w))].reshape(d, d)
    return _as_state(liouv.layout, rho / np.trace(rho))


def _long_time(liouv, rho0, G, t_max):
    scale = max(liouv.rate_scale(), 1e-300)
    t_step = 10.0 / scale if t_max is None else t_max / 64
    limit = 1e6 / scale if t_max is None else t_max
    state, t = rho0, 0.0
    method = "diagonal" if G is not None else "auto"
    while True:
        state = evolve_qme(liouv, state, [0.0, t_step], method=method)[-1]
        t += t_step
        res = residual_norm(liouv, state)
        if res < STEADY_TOL:
            return state
        if t >= limit:
            raise IntegrationError(f"no convergence to a steady state by t={t:.3g} s (residual {res:.3g})")
        t_step *= 2


def limit_state(N: int) -> QuantumState:
    """Binomial mixture over the N+1 domain-wall states (down spins on the left)."""
    if not 1 <= N <= 20:
        raise ValueError("limit_state supports 1 <= N <= 20")
    layout = SpaceLayout(tuple((f"I{j}", 2) for j in range(1, N + 1)))
    w = np.zeros(2**N)
    for i in range(N + 1):
        w[domain_wall_index(N, i)] = math.comb(N, i) / 2**N
    return QuantumState(layout, "diagonal", w)


def domain_wall_index(N: int, i: int) -> int:
    """Basis index of the state with sites 1..i down and i+1..N up (digit 1 = down)."""
    return ((1 << i) - 1) << (N - i)
