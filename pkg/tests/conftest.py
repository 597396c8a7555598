import numpy as np
import pytest
from hypothesis import settings

from mectinj.atten_data import MaterialSet, bundled_table, table_from_rows
from mectinj.forward_model import MectSetup
from mectinj.spectra import EnergyGrid, Spectrum, default_grid, kramers_spectrum

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

MONO_ENERGIES = (30, 60, 90, 120)


def kramers_setup(materials, tps, filtration=2.5):
    mats = MaterialSet([bundled_table(m) for m in materials])
    return MectSetup([kramers_spectrum(tp, filtration) for tp in tps], mats)


def hat_spectrum(E0, grid=None):
    grid = grid if grid is not None else default_grid()
    w = np.zeros(len(grid))
    w[int(np.argmin(np.abs(grid.energies - E0)))] = 1.0
    return Spectrum(grid, w, label=f"hat{E0}")


def mono_setup(M):
    """Setup whose transform is exactly x -> M x.

    Spectrum i is a hat on the grid node E_i and every material is
    constant on [E_i - 1, E_i + 1] with value M[i][j].
    """
    M = np.asarray(M, dtype=float)
    n, m = M.shape
    energies = MONO_ENERGIES[:n]
    tables = []
    for j in range(m):
        rows = [(10.0, 1.0)]
        for i, E in enumerate(energies):
            rows += [(E - 1.0, M[i, j]), (E + 1.0, M[i, j])]
        rows.append((150.0, 1.0))
        tables.append(table_from_rows(f"mono{j}", rows))
    return MectSetup([hat_spectrum(E) for E in energies], MaterialSet(tables))


@pytest.fixture(scope="session")
def bw_setup():
    return kramers_setup(["bone", "water"], [80, 140])


@pytest.fixture(scope="session")
def biw_setup():
    return kramers_setup(["bone", "iodine", "water"], [40, 60, 140])


ACCEPTANCE: dict[int, str] = {}


def record_criterion(n: int, ok: bool, detail: str) -> str:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE[n] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
