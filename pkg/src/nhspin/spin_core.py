"""Operator algebra over labeled tensor-product spaces.

Every factor is ordered by descending magnetic quantum number, so for a
spin-1/2 index 0 is up and index 1 is down, and for a spin-1 the order
is (+1, 0, -1).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce

import numpy as np
import scipy.sparse as sp

NORM_TOL = 1e-10
HERM_TOL = 1e-12
DENSITY_TOL = 1e-7  # trace and positivity slack for integrated density matrices
DENSE_LIMIT = 64


class LayoutError(ValueError):
    """Raised for unknown labels or mismatched layouts/dimensions."""


@dataclass(frozen=True)
class SpaceLayout:
    factors: tuple[tuple[str, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple((str(l), int(d)) for l, d in self.factors))
        labels = [l for l, _ in self.factors]
        if len(set(labels)) != len(labels):
            raise LayoutError(f"duplicate factor labels in {labels}")
        for label, dim in self.factors:
            if dim < 2:
                raise LayoutError(f"factor {label!r} has dimension {dim} < 2")

    @property
    def labels(self) -> list[str]:
        return [l for l, _ in self.factors]

    @property
    def dims(self) -> list[int]:
        return [d for _, d in self.factors]

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims)) if self.factors else 1

    def index(self, label: str) -> int:
        for i, (l, _) in enumerate(self.factors):
            if l == label:
                return i
        raise LayoutError(f"unknown factor label {label!r}; have {self.labels}")

    def dim(self, label: str) -> int:
        return self.factors[self.index(label)][1]

    def basis_index(self, digits) -> int:
        """Flat index of a product basis state given per-factor indices."""
        return int(np.ravel_multi_index(tuple(digits), self.dims))

    def digits(self, index: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(index, self.dims))

    def sub(self, labels) -> "SpaceLayout":
        keep = set(labels)
        return SpaceLayout(tuple(f for f in self.factors if f[0] in keep))


@dataclass(frozen=True)
class SpinOperator:
    layout: SpaceLayout
    matrix: sp.csr_matrix
    hermitian: bool = False

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix, dtype=complex)
        n = self.layout.total_dim
        if m.shape != (n, n):
            raise LayoutError(f"operator shape {m.shape} does not match layout dimension {n}")
        object.__setattr__(self, "matrix", m)
        if self.hermitian:
            diff = m - m.conj().T
            if diff.nnz and np.max(np.abs(diff.data)) > HERM_TOL * max(1.0, _maxabs(m)):
                raise ValueError("operator flagged Hermitian is not Hermitian")

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    @property
    def dag(self) -> "SpinOperator":
        return SpinOperator(self.layout, self.matrix.conj().T.tocsr(), self.hermitian)

    def _check(self, other):
        if other.layout != self.layout:
            raise LayoutError("operator layouts differ")

    def __add__(self, other):
        self._check(other)
        return SpinOperator(self.layout, self.matrix + other.matrix)

    def __sub__(self, other):
        self._check(other)
        return SpinOperator(self.layout, self.matrix - other.matrix)

    def __mul__(self, scalar):
        return SpinOperator(self.layout, self.matrix * complex(scalar))

    __rmul__ = __mul__

    def __matmul__(self, other):
        self._check(other)
        return SpinOperator(self.layout, (self.matrix @ other.matrix).tocsr())

    def as_hermitian(self) -> "SpinOperator":
        return SpinOperator(self.layout, self.matrix, hermitian=True)


@dataclass(frozen=True)
class QuantumState:
    layout: SpaceLayout
    kind: str
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        n = self.layout.total_dim
        if self.kind == "pure":
            if data.shape != (n,):
                raise LayoutError(f"pure state shape {data.shape} != ({n},)")
            if abs(np.linalg.norm(data) - 1.0) > NORM_TOL:
                raise ValueError(f"pure state norm {np.linalg.norm(data)} != 1")
        elif self.kind == "density":
            if data.shape != (n, n):
                raise LayoutError(f"density shape {data.shape} != ({n}, {n})")
            if abs(np.trace(data) - 1.0) > DENSITY_TOL:
                raise ValueError(f"density trace {np.trace(data)} != 1")
            if np.max(np.abs(data - data.conj().T), initial=0.0) > HERM_TOL * max(1.0, np.max(np.abs(data))):
                raise ValueError("density matrix not Hermitian")
            if n <= 256 and np.linalg.eigvalsh(data)[0] < -DENSITY_TOL:
                raise ValueError("density matrix has negative eigenvalue")
        elif self.kind == "diagonal":
            # density matrix diagonal in the product basis, stored as weights
            if data.shape != (n,):
                raise LayoutError(f"diagonal state shape {data.shape} != ({n},)")
            if np.max(np.abs(data.imag), initial=0.0) > HERM_TOL or data.real.min() < -1e-8:
                raise ValueError("diagonal weights must be real and nonnegative")
            if abs(data.sum() - 1.0) > NORM_TOL:
                raise ValueError(f"diagonal weights sum to {data.sum().real} != 1")
        else:
            raise ValueError(f"unknown state kind {self.kind!r}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def pure(cls, layout, vec, normalize=False):
        vec = np.asarray(vec, dtype=complex)
        if normalize:
            vec = vec / np.linalg.norm(vec)
        return cls(layout, "pure", vec)

    @classmethod
    def density(cls, layout, rho, clean=False):
        rho = np.asarray(rho, dtype=complex)
        if clean:
            rho = 0.5 * (rho + rho.conj().T)
            rho = rho / np.trace(rho).real
        return cls(layout, "density", rho)

    @classmethod
    def maximally_mixed(cls, layout):
        n = layout.total_dim
        return cls(layout, "density", np.eye(n) / n)

    @classmethod
    def product(cls, layout, digits):
        vec = np.zeros(layout.total_dim, dtype=complex)
        vec[layout.basis_index(digits)] = 1.0
        return cls(layout, "pure", vec)

    @classmethod
    def diagonal(cls, layout, weights):
        return cls(layout, "diagonal", np.asarray(weights, dtype=complex))

    @property
    def populations(self) -> np.ndarray:
        if self.kind == "diagonal":
            return self.data.real
        if self.kind == "pure":
            return np.abs(self.data) ** 2
        return np.diag(self.data).real

    def to_density(self) -> "QuantumState":
        if self.kind == "density":
            return self
        if self.kind == "diagonal":
            return QuantumState(self.layout, "density", np.diag(self.data))
        return QuantumState(self.layout, "density", np.outer(self.data, self.data.conj()))


def _maxabs(m) -> float:
    return float(np.max(np.abs(m.data))) if m.nnz else 0.0


def spin_matrices(spin_number) -> dict[str, np.ndarray]:
    """Return ``{"z", "plus", "minus", "x", "y"}`` for spin 1/2 or 1."""
    s = Fraction(spin_number).limit_denominator(4)
    if s not in (Fraction(1, 2), Fraction(1)):
        raise ValueError(f"unsupported spin number {spin_number}; use 1/2 or 1")
    s = float(s)
    m = np.arange(s, -s - 1, -1)
    dim = len(m)
    plus = np.zeros((dim, dim), dtype=complex)
    for k in range(1, dim):
        # <m+1|S+|m> with m = m[k], m+1 = m[k-1]
        plus[k - 1, k] = np.sqrt(s * (s + 1) - m[k] * (m[k] + 1))
    minus = plus.T.copy()
    return {
        "z": np.diag(m).astype(complex),
        "plus": plus,
        "minus": minus,
        "x": 0.5 * (plus + minus),
        "y": -0.5j * (plus - minus),
    }


def embed(local_op, site_label: str, layout: SpaceLayout) -> SpinOperator:
    """Place ``local_op`` on one factor, identity elsewhere."""
    return embed_many({site_label: local_op}, layout)


def embed_many(ops: dict, layout: SpaceLayout) -> SpinOperator:
    """Tensor product of local operators on several labeled factors."""
    for label, op in ops.items():
        d = layout.dim(label)
        if np.shape(op) != (d, d):
            raise LayoutError(f"local operator shape {np.shape(op)} does not fit factor {label!r} (dim {d})")
    mats = []
    for label, d in layout.factors:
        op = ops.get(label)
        mats.append(sp.identity(d, dtype=complex, format="csr") if op is None else sp.csr_matrix(op, dtype=complex))
    out = reduce(lambda a, b: sp.kron(a, b, format="csr"), mats)
    return SpinOperator(layout, out)


def identity(layout: SpaceLayout) -> SpinOperator:
    return SpinOperator(layout, sp.identity(layout.total_dim, dtype=complex, format="csr"), hermitian=True)


def zero(layout: SpaceLayout) -> SpinOperator:
    n = layout.total_dim
    return SpinOperator(layout, sp.csr_matrix((n, n), dtype=complex), hermitian=True)


def expectation(state: QuantumState, op: SpinOperator) -> complex:
    if state.layout != op.layout:
        raise LayoutError("state and operator layouts differ")
    if state.kind == "pure":
        val = np.vdot(state.data, op.matrix @ state.data)
    elif state.kind == "diagonal":
        val = np.dot(state.data, op.matrix.diagonal())
    else:
        # Tr(rho M) = sum_ij rho_ji M_ij
        m = op.matrix.tocoo()
        val = np.sum(m.data * state.data[m.col, m.row])
    val = complex(val)
    if op.hermitian and abs(val.imag) > 1e-9:
        raise ValueError(f"Hermitian expectation has imaginary part {val.imag}")
    return val


def partial_trace(state: QuantumState, keep_labels) -> QuantumState:
    if state.kind == "pure":
        raise ValueError("partial_trace needs a density state; call to_density() first")
    layout = state.layout
    keep = [layout.index(l) for l in keep_labels]
    keep = sorted(set(keep))
    dims = layout.dims
    n = len(dims)
    if state.kind == "diagonal":
        p = state.data.reshape(dims)
        traced = tuple(i for i in range(n) if i not in keep)
        p = p.sum(axis=traced).ravel() if traced else p.ravel()
        return QuantumState(SpaceLayout(tuple(layout.factors[i] for i in keep)), "diagonal", p)
    rho = state.data.reshape(dims + dims)
    traced = [i for i in range(n) if i not in keep]
    # move kept row/col axes first, trace the rest pairwise
    perm = keep + traced + [n + i for i in keep] + [n + i for i in traced]
    rho = np.transpose(rho, perm)
    dk = int(np.prod([dims[i] for i in keep])) if keep else 1
    dt = int(np.prod([dims[i] for i in traced])) if traced else 1
    rho = rho.reshape(dk, dt, dk, dt)
    red = np.einsum("ajbj->ab", rho)
    sub = SpaceLayout(tuple(layout.factors[i] for i in keep))
    return QuantumState(sub, "density", red)
