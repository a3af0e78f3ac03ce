"""Kernel selection: compiled extension when importable, pure Python otherwise.

Set ``NHSPIN_PURE_PYTHON=1`` to force the fallback.
"""

import os

if os.environ.get("NHSPIN_PURE_PYTHON", "") not in ("", "0"):
    from . import _kernels_py as impl
else:
    try:
        from . import _kernels as impl
    except ImportError:  # extension not built
        from . import _kernels_py as impl

BACKEND = "compiled" if impl.__name__.endswith("._kernels") else "python"

mix64 = impl.mix64
traj_seed = impl.traj_seed
uniform_stream = impl.uniform_stream
kmc_run = impl.kmc_run
kmc_ensemble = impl.kmc_ensemble
oracle_survival = impl.oracle_survival
