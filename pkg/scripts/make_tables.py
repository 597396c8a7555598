"""Regenerate the bundled attenuation tables in src/mectinj/data/.

Needs ``xraydb`` (not a runtime dependency of mectinj). Values are total
mass attenuation (coherent + incoherent + photoelectric) from the Elam
tables shipped with xraydb, sampled every 1 keV over 10-150 keV plus a
pair of samples bracketing each K edge inside that range.
"""
from pathlib import Path

import numpy as np
import xraydb

OUT = Path(__file__).resolve().parents[1] / "src" / "mectinj" / "data"

# mass fractions, ICRU-44 cortical bone
CORTICAL_BONE = {
    "H": 0.034, "C": 0.155, "N": 0.042, "O": 0.435, "Na": 0.001,
    "Mg": 0.002, "P": 0.103, "S": 0.003, "Ca": 0.225,
}
WATER = {"H": 2 * 1.008 / 18.015, "O": 15.999 / 18.015}

MATERIALS = {
    "water": WATER,
    "bone": CORTICAL_BONE,
    "iodine": {"I": 1.0},
    "gadolinium": {"Gd": 1.0},
    "aluminum": {"Al": 1.0},
}
EDGE_HALF_GAP_EV = 10.0


def mass_attenuation(fractions, energies_ev):
    total = np.zeros_like(energies_ev, dtype=float)
    for element, w in fractions.items():
        total += w * xraydb.mu_elam(element, energies_ev, kind="total")
    return total


def sample_energies(fractions):
    energies = [float(e) for e in range(10_000, 150_001, 1000)]
    for element in fractions:
        edge = xraydb.xray_edge(element, "K").energy
        if 10_000 < edge < 150_000:
            energies += [edge - EDGE_HALF_GAP_EV, edge + EDGE_HALF_GAP_EV]
    return np.array(sorted(energies))


def main():
    for name, fractions in MATERIALS.items():
        ev = sample_energies(fractions)
        mu = mass_attenuation(fractions, ev)
        lines = ["energy_keV,mass_attenuation_cm2_g"]
        lines += [f"{e / 1000:.3f},{m:.6e}" for e, m in zip(ev, mu)]
        (OUT / f"{name}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(name, len(ev), "samples")


if __name__ == "__main__":
    main()
