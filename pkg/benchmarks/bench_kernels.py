"""Compare the compiled and pure-Python kernel backends.

    python benchmarks/bench_kernels.py [--repeat 3]

Both backends consume the same random streams, so the outputs are also
checked for equality before timings are reported.
"""

import argparse
import time

import numpy as np

from nhspin import _kernels_py
from nhspin.effective import EffectiveModel, gamma_eff_law
from nhspin.trajectories import _kmc_arrays

try:
    from nhspin import _kernels
except ImportError:  # extension not built
    _kernels = None


def _kmc_case(impl, n_sites, n_traj):
    n, bf, bt, rate, ptr, adj = _kmc_arrays(EffectiveModel.chain(n_sites, gamma_eff_law(100.0)))
    t = np.linspace(0.0, 2.0, 21)
    cfg = np.zeros(n, np.uint8)
    return impl.kmc_ensemble(n, bf, bt, rate, ptr, adj, cfg, True, n_traj, 7, t, False)[0]


def _oracle_case(impl, n_samples):
    return impl.oracle_survival(1.0 - np.exp(-10.0), 3, 40, n_samples, 7)


CASES = [
    ("kmc N=32, 2000 traj", lambda impl: _kmc_case(impl, 32, 2000)),
    ("kmc N=64, 500 traj", lambda impl: _kmc_case(impl, 64, 500)),
    ("oracle 3 spins, 1e5 samples", lambda impl: _oracle_case(impl, 100_000)),
]


def _best(fn, impl, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(impl)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return 1
    print(f"{'case':32s} {'compiled s':>11s} {'python s':>10s} {'speedup':>8s}")
    for name, fn in CASES:
        tc, oc = _best(fn, _kernels, args.repeat)
        tp, op = _best(fn, _kernels_py, 1)
        if not np.array_equal(oc, op):
            raise SystemExit(f"{name}: backends disagree")
        print(f"{name:32s} {tc:11.4f} {tp:10.3f} {tp / tc:7.0f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
