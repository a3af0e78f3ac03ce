import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, print_blob=True)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_density(rng, n, rank=None):
    rank = n if rank is None else rank
    a = rng.normal(size=(n, rank)) + 1j * rng.normal(size=(n, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def random_hermitian(rng, n, scale=1.0):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return scale * 0.5 * (a + a.conj().T)


def pair_transfer(gamma_factor, t_max_in_periods, n_outputs=401, initial="forward"):
    """QME of the four-spin pair at its crossing with Gamma_op = gamma_factor * J_eff.

    Returns (t, P1, P2, J_eff); the window is ``t_max_in_periods * pi / J_eff``.
    """
    from dataclasses import replace

    from nhspin.config import preset
    from nhspin.runner import execute, resolve_chain

    spec = replace(preset("fig2b"), gamma_op_factor=float(gamma_factor), initial_state=initial)
    J = resolve_chain(spec)[1]["J_eff_Hz"]
    spec = replace(spec, t_max=t_max_in_periods * np.pi / J, n_outputs=n_outputs)
    res = execute(spec)
    col = {c: i for i, c in enumerate(res.columns)}
    return res.rows[:, 0], res.rows[:, col["P1"]], res.rows[:, col["P2"]], J


def backflow(P, swing=2.0):
    """Largest drop of P below its running maximum, relative to the full swing."""
    return float(np.max(np.maximum.accumulate(P) - P) / swing)


ACCEPTANCE = []  # one summary line per acceptance criterion, printed after the run


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
