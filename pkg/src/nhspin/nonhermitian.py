"""Non-Hermitian pumped Hamiltonians, eigenvalue surfaces and the exceptional point."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
from scipy.optimize import root

from .model import ChainSpec, pair_model, resonant_states
from .spin_core import SpinOperator, embed


class ExceptionalPointError(RuntimeError):
    pass


def reduced_nhh(delta_eff, Gamma_op, J_eff) -> np.ndarray:
    """[[delta + i Gamma, J], [J, -delta - i Gamma]]."""
    z = complex(delta_eff, Gamma_op)
    return np.array([[z, J_eff], [J_eff, -z]], dtype=complex)


def discriminant(delta_eff, Gamma_op, J_eff) -> complex:
    """lambda^2 of the reduced matrix: (delta + i Gamma)^2 + J^2."""
    return complex(delta_eff, Gamma_op) ** 2 + J_eff**2


def reduced_eigenvalues(delta_eff, Gamma_op, J_eff) -> np.ndarray:
    s = cmath.sqrt(discriminant(delta_eff, Gamma_op, J_eff))
    return np.array([s, -s])


def full_nhh(spec: ChainSpec, Gamma_op, B=None) -> SpinOperator:
    """Four-spin Hamiltonian plus i Gamma |0><0| - i Gamma |-1><-1| on the spin-1."""
    model = pair_model(spec)
    H = model.hamiltonian(B)
    local = np.diag([0.0, 1j * Gamma_op, -1j * Gamma_op])
    return SpinOperator(model.layout, H.matrix + embed(local, "S", model.layout).matrix)


def projected_block(spec: ChainSpec, Gamma_op, B=None, branch="alpha") -> np.ndarray:
    """2x2 block of full_nhh on the two resonant dressed states (mean energy removed)."""
    model = pair_model(spec)
    U = model.dressed_unitary(B)
    a, b = resonant_states("pair", branch)
    cols = [model.basis_index(a), model.basis_index(b)]
    P = U[:, cols]
    M = (P.conj().T @ full_nhh(spec, Gamma_op, B).matrix @ P).toarray()
    return M - 0.5 * np.trace(M).real * np.eye(2)


@dataclass(frozen=True)
class EigenSurface:
    delta_grid: np.ndarray
    gamma_grid: np.ndarray
    eigenvalues: np.ndarray  # (n_delta, n_gamma, 2), branch-continuous along rows
    J_eff: float


def _match(prev, cur):
    """Order ``cur`` (two values) to follow ``prev`` by nearest neighbour."""
    keep = abs(cur[0] - prev[0]) + abs(cur[1] - prev[1])
    swap = abs(cur[1] - prev[0]) + abs(cur[0] - prev[1])
    return cur if keep <= swap else cur[::-1]


def riemann_scan(J_eff, delta_range, gamma_range, n_points) -> EigenSurface:
    """Eigenvalues on a (delta, Gamma) grid with nearest-neighbour branch continuation."""
    if isinstance(n_points, int):
        n_points = (n_points, n_points)
    nd, ng = n_points
    if nd < 1 or ng < 1:
        raise ValueError("grid sizes must be positive")
    deltas = np.linspace(*delta_range, nd)
    gammas = np.linspace(*gamma_range, ng)
    ev = np.empty((nd, ng, 2), complex)
    for i, d in enumerate(deltas):
        for j, g in enumerate(gammas):
            cur = la.eigvals(reduced_nhh(d, g, J_eff))
            if j > 0:
                cur = _match(ev[i, j - 1], cur)
            elif i > 0:
                cur = _match(ev[i - 1, 0], cur)
            else:
                cur = cur[np.argsort(cur.real)]
            ev[i, j] = cur
    return EigenSurface(deltas, gammas, ev, float(J_eff))


def loop_monodromy(J_eff, center=None, radius=None, n_steps=720) -> tuple[np.ndarray, np.ndarray]:
    """Follow both eigenvalues once around a circle in the (delta, Gamma) plane.

    Returns (start, end) eigenvalue pairs; around an exceptional point the
    branches come back exchanged.
    """
    cx, cy = (0.0, J_eff) if center is None else center
    radius = 0.1 * J_eff if radius is None else radius
    phis = np.linspace(0.0, 2 * np.pi, n_steps + 1)
    track = None
    start = None
    for phi in phis:
        cur = la.eigvals(reduced_nhh(cx + radius * math.cos(phi), cy + radius * math.sin(phi), J_eff))
        if track is None:
            cur = cur[np.argsort(cur.real)]
            start = cur.copy()
        else:
            cur = _match(track, cur)
        track = cur
    return start, track


def branches_swap(J_eff, center=None, radius=None, n_steps=720) -> bool:
    start, end = loop_monodromy(J_eff, center, radius, n_steps)
    tol = 1e-6 * max(abs(J_eff), 1e-300)
    return abs(end[0] - start[1]) < tol and abs(end[1] - start[0]) < tol and abs(start[0] - start[1]) > tol


@dataclass(frozen=True)
class ExceptionalPoint:
    delta_eff: float
    Gamma_op: float
    defect_measure: float  # |<v1|v2>| of normalized right eigenvectors
    gap: float
    rank: int


def find_exceptional_point(J_eff, n_grid=61) -> ExceptionalPoint:
    """Locate the zero of the discriminant: grid search, then a 2-D root solve."""
    if not J_eff > 0:
        raise ValueError("J_eff must be > 0")
    d = np.linspace(-3 * J_eff, 3 * J_eff, n_grid)
    g = np.linspace(0.0, 3 * J_eff, n_grid)
    D, G = np.meshgrid(d, g, indexing="ij")
    disc = np.abs((D + 1j * G) ** 2 + J_eff**2)
    i, j = np.unravel_index(np.argmin(disc), disc.shape)

    def f(x):
        z = discriminant(x[0], x[1], 1.0)
        return [z.real, z.imag]

    # solve in units of J_eff
    sol = root(f, [D[i, j] / J_eff, G[i, j] / J_eff], method="hybr", options={"xtol": 1e-15})
    if not sol.success:
        raise ExceptionalPointError(f"refinement did not converge: {sol.message}")
    delta, gamma = sol.x[0] * J_eff, sol.x[1] * J_eff
    if gamma < 0:
        delta, gamma = -delta, -gamma
    M = reduced_nhh(delta, gamma, J_eff)
    lam, V = la.eig(M)
    gap = abs(lam[0] - lam[1])
    V = V / np.linalg.norm(V, axis=0)
    overlap = abs(np.vdot(V[:, 0], V[:, 1]))
    lam0 = lam.mean()
    sv = la.svdvals(M - lam0 * np.eye(2))
    rank = int(np.sum(sv > 1e-8 * J_eff))
    if gap > 1e-6 * J_eff or overlap < 1 - 1e-4:
        raise ExceptionalPointError(f"no coalescence at ({delta}, {gamma}): gap {gap}, overlap {overlap}")
    return ExceptionalPoint(float(delta), float(gamma), float(overlap), float(gap), rank)


def grid_rows(surface: EigenSurface):
    """Rows (delta_Hz, gamma_Hz, re_l1, im_l1, re_l2, im_l2) for CSV output."""
    for i, dl in enumerate(surface.delta_grid):
        for j, gm in enumerate(surface.gamma_grid):
            l1, l2 = surface.eigenvalues[i, j]
            yield (dl, gm, l1.real, l1.imag, l2.real, l2.imag)
