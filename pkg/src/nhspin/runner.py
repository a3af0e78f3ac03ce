"""Scenario dispatch and result bundles (CSV series, JSON metadata).

Output directory layout::

    observables.csv   time_s, <observable columns...>, <column>_stderr...
                      (field_scan: B_T instead of time_s)
    ep_grid.csv       ep_scan only: delta_Hz, gamma_Hz, re_l1, im_l1, re_l2, im_l2
    metadata.json     resolved config, seeds, versions, wall time, derived values

Floats are written with ``repr`` so identical runs give identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy

from . import __version__, kernels
from .config import ExperimentSpec, spec_to_dict
from .effective import EffectiveModel, gamma_eff_law
from .master import Liouvillian, effective_lindbladian, evolve_qme, full_jumps
from .model import ChainSpec, avoided_crossing, chain_model, pair_model, resonant_states
from .nonhermitian import find_exceptional_point, grid_rows, riemann_scan
from .observables import bond_voltage, polarization_profile
from .spin_core import QuantumState, expectation
from .trajectories import (
    FieldProtocol,
    crossing_windows,
    defect_ensemble,
    gamma_eff_oracle,
    kmc_ensemble,
    polarization_observables,
    qjm_ensemble,
)

EXACT_SITES_CAP = 12
OUT_ENV = "NHSPIN_OUT"


class RunError(RuntimeError):
    pass


@dataclass
class RunResult:
    columns: list[str]
    rows: np.ndarray  # (n_rows, n_columns)
    derived: dict = field(default_factory=dict)
    extra_files: dict = field(default_factory=dict)  # name -> (header, rows)


# ---------------------------------------------------------------------------
# resolution of symbolic settings


def resolve_chain(spec: ExperimentSpec) -> tuple[ChainSpec, dict]:
    """Fix B (matching field) and Gamma_op (multiple of J_eff) for full-model scenarios.

    Chains use the mean over bonds of the refined crossing field and of the
    extracted coupling; for a uniform chain every bond gives the same value.
    """
    c = spec.chain
    if spec.scenario == "pair_dynamics":
        acs = [avoided_crossing(replace(c, B=0.0, Gamma_op=0.0), spec.branch, "pair")]
    else:
        acs = [avoided_crossing(c, spec.branch, "chain", b) for b in range(max(c.n_sites - 1, 1))]
    B_m = float(np.mean([a.B_m for a in acs]))
    J = float(np.mean([a.coupling for a in acs]))
    B = B_m if spec.field_mode == "matching" else c.B
    G = spec.gamma_op_factor * J if spec.gamma_op_factor is not None else c.Gamma_op
    derived = {"B_m_T": B_m, "J_eff_Hz": J, "B_T": B, "Gamma_op_Hz": G,
               "bond_crossings_T": [a.B_m for a in acs], "bond_couplings_Hz": [a.coupling for a in acs]}
    return replace(c, B=B, Gamma_op=G), derived


def _grid(spec):
    return np.linspace(0.0, spec.t_max, spec.n_outputs)


def _with_stderr(names, means, ses):
    cols = list(names) + [f"{n}_stderr" for n in names]
    return cols, np.column_stack(list(means) + list(ses))


def _nuclei(initial, n):
    if isinstance(initial, tuple):
        if len(initial) != n:
            raise RunError(f"initial_state has {len(initial)} spins, model has {n}")
        return [0.5 if x else -0.5 for x in initial]
    if initial in ("random", "balanced"):
        return initial
    raise RunError(f"initial_state {initial!r} not available for this scenario")


# ---------------------------------------------------------------------------
# scenarios


def _pair_dynamics(spec, threads):
    c, derived = resolve_chain(spec)
    model = pair_model(c)
    a, _ = resonant_states("pair", spec.branch)
    # reversed: same electron projections, nuclear projections exchanged
    named = {"forward": a, "reversed": {**a, "I1": a["I2"], "I2": a["I1"]}}
    if spec.initial_state not in named:
        raise RunError("pair_dynamics initial_state must be 'forward' or 'reversed'")
    psi0 = QuantumState.pure(model.layout, model.dressed_state(named[spec.initial_state], c.B))
    t = _grid(spec)
    obs = polarization_observables(model, c.B)
    names = list(obs)
    if spec.n_traj == 1:
        liouv = Liouvillian(model.hamiltonian(c.B), full_jumps(model))
        vals = evolve_qme(liouv, psi0.to_density(), t,
                          observer=lambda _t, s: [expectation(s, obs[k]).real for k in names])
        return RunResult(["time_s"] + names, np.column_stack([t, np.array(vals)]), derived)
    ens = qjm_ensemble(model, t, spec.n_traj, spec.master_seed, B=c.B, initial=psi0,
                       mode=spec.option("mode", "waiting_time"), threads=threads)
    cols, data = _with_stderr(names, [ens.mean(k) for k in names], [ens.stderr(k) for k in names])
    return RunResult(["time_s"] + cols, np.column_stack([t, data]), derived)


def _chain_qjm(spec, threads):
    c, derived = resolve_chain(spec)
    model = chain_model(c)
    t = _grid(spec)
    ens = qjm_ensemble(model, t, spec.n_traj, spec.master_seed, B=c.B,
                       initial=_nuclei(spec.initial_state, c.n_sites),
                       mode=spec.option("mode", "waiting_time"), threads=threads)
    names = [f"P{j}" for j in range(1, c.n_sites + 1)]
    cols, data = _with_stderr(names, [ens.mean(k) for k in names], [ens.stderr(k) for k in names])
    return RunResult(["time_s"] + cols, np.column_stack([t, data]), derived)


def _field_scan(spec, threads):
    c, derived = resolve_chain(spec)
    span = spec.option("scan_span", 10e-6)
    fields = np.linspace(c.B - span, c.B + span, int(spec.option("n_points", 21)))
    t = np.array([0.0, spec.t_max])
    n = c.n_sites
    names = [f"P{j}" for j in range(1, n + 1)]
    means, ses = [], []
    for B in fields:
        cb = replace(c, B=float(B))
        model = chain_model(cb)
        ens = qjm_ensemble(model, t, spec.n_traj, spec.master_seed, B=float(B),
                           initial=_nuclei(spec.initial_state, n), threads=threads)
        means.append([ens.mean(k)[-1] for k in names])
        ses.append([ens.stderr(k)[-1] for k in names])
    means, ses = np.array(means), np.array(ses)
    cols, data = _with_stderr(names, means.T, ses.T)
    return RunResult(["B_T"] + cols, np.column_stack([fields, data]), derived)


def build_protocol(spec: ExperimentSpec, c: ChainSpec, B_m: float) -> FieldProtocol:
    p = spec.protocol
    center = B_m if p.center is None else p.center
    windows, step = (), 0.0
    if p.refine and p.waveform == "triangular" and c.n_sites > 1:
        windows, step = crossing_windows(c, spec.branch, sweep_rate=4 * p.amplitude * p.frequency)
        if step >= 2 * p.amplitude / p.steps_per_period:
            windows, step = (), 0.0
    return FieldProtocol(center, p.amplitude, p.frequency, p.waveform, p.steps_per_period, windows, step)


def _defect_protocol(spec, threads):
    c, derived = resolve_chain(spec)
    protocol = build_protocol(spec, c, derived["B_m_T"])
    derived["protocol_center_T"] = protocol.B_center
    t = _grid(spec)
    ens = defect_ensemble(c, protocol, t, spec.n_traj, spec.master_seed,
                          initial=_nuclei(spec.initial_state, c.n_sites), threads=threads)
    names = [f"P{j}" for j in range(1, c.n_sites + 1)] + ["Pc"]
    cols, data = _with_stderr(names, [ens.mean(k) for k in names], [ens.stderr(k) for k in names])
    return RunResult(["time_s"] + cols, np.column_stack([t, data]), derived)


def _effective_initial(model: EffectiveModel, initial):
    if initial == "unpolarized":
        return QuantumState.maximally_mixed(model.layout)
    if isinstance(initial, tuple):
        if len(initial) != model.n_sites:
            raise RunError(f"initial_state has {len(initial)} spins, model has {model.n_sites}")
        return QuantumState.product(model.layout, [0 if x else 1 for x in initial])
    raise RunError(f"initial_state {initial!r} needs n_traj > 1 (kinetic Monte Carlo)")


def _bond_columns(model: EffectiveModel):
    bonds = [(a, b) for a, b, _ in model.directed_bonds]
    volts = list(bonds)
    if model.topology == "open" and model.n_sites > 2 and (model.n_sites, 1) not in volts:
        volts.append((model.n_sites, 1))
    return bonds, volts


def _effective(spec, threads):
    model: EffectiveModel = spec.chain
    n = model.n_sites
    t = _grid(spec)
    derived = {"directed_rates_Hz": [r for _, _, r in model.directed_bonds]}
    bonds, volts = _bond_columns(model)
    P_names = [f"P{j}" for j in range(1, n + 1)]
    K_names = [f"K{a}_{b}" for a, b in bonds]
    V_names = [f"V{a}_{b}" for a, b in volts]
    group_names = [f"P_{g}" for g, _ in spec.groups]
    use_kmc = spec.scenario == "kmc_large_n" or spec.n_traj > 1 or n > EXACT_SITES_CAP
    if use_kmc:
        if not model.dissipative_only:
            raise RunError("kinetic Monte Carlo needs a model without coherent bonds")
        if isinstance(spec.initial_state, tuple):
            cfg0 = list(spec.initial_state)
        elif spec.initial_state in ("random", "unpolarized"):
            cfg0 = None
        else:
            raise RunError(f"initial_state {spec.initial_state!r} not available for kinetic Monte Carlo")
        ens = kmc_ensemble(model, spec.n_traj, spec.master_seed, t, config0=cfg0)
        P, seP = ens.observables["P"]
        V, seV = ens.observables["V"]
        rates = np.array([r for _, _, r in model.directed_bonds])
        K, seK = V * rates, seV * rates
        means = [P[:, j] for j in range(n)] + [K[:, i] for i in range(len(bonds))]
        ses = [seP[:, j] for j in range(n)] + [seK[:, i] for i in range(len(bonds))]
        for g, sites in spec.groups:
            idx = [s - 1 for s in sites]
            means.append(P[:, idx].mean(axis=1))
            ses.append(np.sqrt((seP[:, idx] ** 2).sum(axis=1)) / len(idx))
        names = P_names + K_names + group_names
        cols, data = _with_stderr(names, means, ses)
        return RunResult(["time_s"] + cols, np.column_stack([t, data]), derived)

    liouv = effective_lindbladian(model)
    rho0 = _effective_initial(model, spec.initial_state)
    rates = {(a, b): r for a, b, r in model.directed_bonds}

    def observe(_t, s):
        P = polarization_profile(s)
        V = [bond_voltage(s, a, b) for a, b in volts]
        K = [rates[a, b] * bond_voltage(s, a, b) for a, b in bonds]
        G = [float(np.mean([P[x - 1] for x in sites])) for _, sites in spec.groups]
        return list(P) + K + V + G

    vals = np.array(evolve_qme(liouv, rho0, t, observer=observe))
    return RunResult(["time_s"] + P_names + K_names + V_names + group_names, np.column_stack([t, vals]), derived)


def _ep_scan(spec, threads):
    J = spec.option("J_eff", 17e3)
    n = int(spec.option("n_points", 61))
    ds, gs = spec.option("delta_span", 3.0), spec.option("gamma_span", 3.0)
    surf = riemann_scan(J, (-ds * J, ds * J), (0.0, gs * J), n)
    ep = find_exceptional_point(J)
    derived = {"J_eff_Hz": J, "ep_delta_Hz": ep.delta_eff, "ep_Gamma_op_Hz": ep.Gamma_op,
               "ep_overlap": ep.defect_measure, "ep_gap_Hz": ep.gap}
    rows = np.array(list(grid_rows(surf)))
    # observables: eigenvalues along delta = 0 (closest grid row)
    i0 = int(np.argmin(np.abs(surf.delta_grid)))
    ev = surf.eigenvalues[i0]
    cut = np.column_stack([surf.gamma_grid, ev[:, 0].real, ev[:, 0].imag, ev[:, 1].real, ev[:, 1].imag])
    header = ["delta_Hz", "gamma_Hz", "re_l1", "im_l1", "re_l2", "im_l2"]
    return RunResult(["gamma_Hz", "re_l1", "im_l1", "re_l2", "im_l2"], cut, derived,
                     {"ep_grid.csv": (header, rows)})


def _oracle(spec, threads):
    Gop = spec.option("Gamma_op", 1e3)
    Ge = spec.option("Gamma_e", 100.0)
    res = gamma_eff_oracle(Gop, Ge, n_intervals=int(spec.option("n_intervals", 40)),
                           n_samples=int(spec.option("n_samples", 100_000)), seed=spec.master_seed,
                           two_spins=bool(spec.option("two_spins", False)))
    derived = {"rate_Hz": res.rate, "rate_stderr_Hz": res.stderr, "law_Hz": res.expected,
               "warning": res.warning}
    return RunResult(["time_s", "survival"], np.column_stack([res.times, res.survival]), derived)


_DISPATCH = {
    "pair_dynamics": _pair_dynamics,
    "chain_qjm": _chain_qjm,
    "field_scan": _field_scan,
    "defect_protocol": _defect_protocol,
    "effective_chain": _effective,
    "effective_ring": _effective,
    "effective_tree": _effective,
    "kmc_large_n": _effective,
    "ep_scan": _ep_scan,
    "gamma_eff_oracle": _oracle,
}


def execute(spec: ExperimentSpec, threads: int = 1) -> RunResult:
    """Run a scenario in memory."""
    return _DISPATCH[spec.scenario](spec, threads)


# ---------------------------------------------------------------------------
# persistence


def _fmt(x) -> str:
    return repr(float(x))


def write_csv(path, header, rows):
    rows = np.asarray(rows, float)
    if rows.size and not np.all(np.isfinite(rows)):
        raise RunError(f"non-finite values in {os.path.basename(path)}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(x) for x in r] for r in rows[1:]])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else str(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def versions() -> dict:
    return {"nhspin": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "kernel_backend": kernels.BACKEND}


def run_experiment(spec: ExperimentSpec, out_dir, threads: int = 1, name: str | None = None) -> dict:
    """Run ``spec`` and write the result bundle into ``out_dir``; returns the metadata."""
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    res = execute(spec, threads)
    wall = time.perf_counter() - t0
    files = ["observables.csv"]
    write_csv(os.path.join(out_dir, "observables.csv"), res.columns, res.rows)
    for fname, (header, rows) in res.extra_files.items():
        write_csv(os.path.join(out_dir, fname), header, rows)
        files.append(fname)
    meta = {
        "status": "ok",
        "name": name,
        "config": spec_to_dict(spec),
        "seeds": {"master_seed": spec.master_seed, "n_traj": spec.n_traj,
                  "trajectory_seed": "TrajectorySeed(master_seed, index) for index < n_traj"},
        "threads": threads,
        "versions": versions(),
        "wall_time_s": wall,
        "derived": res.derived,
        "columns": res.columns,
        "files": files + ["metadata.json"],
        "argv": sys.argv,
    }
    with open(os.path.join(out_dir, "metadata.json"), "w", encoding="utf-8") as fh:
        json.dump(_clean(meta), fh, indent=2, allow_nan=False)
    return meta


def write_error(out_dir, exc: BaseException, name=None) -> dict:
    doc = {"status": "error", "name": name, "error_type": type(exc).__name__, "message": str(exc)}
    key = getattr(exc, "key", None)
    if key:
        doc["key"] = key
    line = getattr(exc, "line", None)
    if line:
        doc["line"] = line
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "error.json"), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
    return doc
