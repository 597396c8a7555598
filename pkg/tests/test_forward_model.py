import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import kramers_setup, mono_setup
from oracles import fine_jacobian, fine_transform
from mectinj.atten_data import MaterialSet, bundled_table, table_from_rows
from mectinj.errors import DomainError, ShapeError
from mectinj.forward_model import MectSetup, SetupMap, jacobian, transform, transform_and_jacobian
from mectinj.rect_scan import default_rectangle
from mectinj.spectra import EnergyGrid, kramers_spectrum


def test_zero_maps_to_zero(bw_setup, biw_setup):
    assert np.all(transform(bw_setup, [0, 0]) == 0)
    assert np.all(transform(biw_setup, [0, 0, 0]) == 0)


def test_monochromatic_is_linear():
    M = np.array([[2.0, 1.0], [0.5, 3.0]])
    s = mono_setup(M)
    for x in ([0.3, 0.7], [2.0, 0.0], [5.0, 4.0]):
        assert np.allclose(transform(s, x), M @ np.array(x), rtol=1e-12, atol=1e-13)
        assert np.allclose(jacobian(s, x), M, rtol=1e-12)


def test_matches_fine_quadrature_oracle(bw_setup):
    ref = fine_transform(["bone", "water"], [80, 140], [1.0, 10.0])
    assert np.allclose(transform(bw_setup, [1.0, 10.0]), ref, rtol=1e-4, atol=0)


def test_jacobian_matches_oracle_and_origin(bw_setup):
    ref = fine_jacobian(["bone", "water"], [80, 140], [0.1, 1.0])
    assert np.allclose(jacobian(bw_setup, [0.1, 1.0]), ref, rtol=1e-4)
    # at x = 0 the Jacobian is the spectrum-weighted mean attenuation
    assert np.allclose(jacobian(bw_setup, [0, 0]), fine_jacobian(["bone", "water"], [80, 140], [0, 0]), rtol=1e-4)


def central_diff(setup, x, h=1e-5):
    cols = []
    for j in range(setup.m):
        e = np.zeros(setup.m)
        e[j] = h
        cols.append((transform(setup, x + e) - transform(setup, x - e)) / (2 * h))
    return np.stack(cols, axis=1)


def test_jacobian_finite_differences(biw_setup):
    rect = default_rectangle(biw_setup)
    rng = np.random.default_rng(7)
    # keep away from the x = 0 faces so the central stencil stays in the domain
    for x in rect.lower + 1e-4 + rng.random((20, 3)) * (rect.upper - rect.lower):
        J = jacobian(biw_setup, x)
        assert np.max(np.abs(central_diff(biw_setup, x) - J) / J) < 1e-6


def test_finite_differences_second_order(bw_setup):
    x = np.array([0.1, 1.0])
    d = np.array([0.6, -0.8])
    Jd = jacobian(bw_setup, x) @ d
    errs = [np.max(np.abs((transform(bw_setup, x + h * d) - transform(bw_setup, x - h * d)) / (2 * h) - Jd))
            for h in (1e-2, 5e-3)]
    assert errs[1] < errs[0] / 3.5


def test_batch_matches_pointwise(biw_setup):
    pts = default_rectangle(biw_setup).sample(np.random.default_rng(1), 5)
    v, J = transform_and_jacobian(biw_setup, pts)
    for k, x in enumerate(pts):
        assert np.allclose(v[k], transform(biw_setup, x), rtol=1e-14)
        assert np.allclose(J[k], jacobian(biw_setup, x), rtol=1e-14)


def test_negative_x_rejected(bw_setup):
    with pytest.raises(DomainError):
        transform(bw_setup, [-0.1, 1.0])
    with pytest.raises(DomainError):
        jacobian(bw_setup, [0.1, -1.0])


def test_setup_validation():
    mats = MaterialSet([bundled_table("bone"), bundled_table("water")])
    with pytest.raises(ShapeError):
        MectSetup([kramers_spectrum(80)], mats)
    short = table_from_rows("short", [(20, 1.0), (150, 0.5)])
    with pytest.raises(Exception):
        MectSetup([kramers_spectrum(80), kramers_spectrum(120)], MaterialSet([short, bundled_table("water")]))
    other = kramers_spectrum(80, grid=EnergyGrid.uniform(10, 150, 0.5))
    with pytest.raises(ShapeError):
        MectSetup([other, kramers_spectrum(120)], mats)


def test_subsystem_projection():
    s = kramers_setup(["bone", "water"], [60, 90, 140])
    x = np.array([0.2, 1.5])
    sub = s.subsystem([0, 2])
    assert np.allclose(transform(sub, x), transform(s, x)[[0, 2]], rtol=1e-14)
    assert np.allclose(jacobian(sub, x), jacobian(s, x)[[0, 2]], rtol=1e-14)


def test_refining_energy_grid_changes_little():
    x = np.array([0.1, 1.0])
    for materials, tps in ((["bone", "water"], [80, 140]), (["iodine", "water"], [50, 120])):
        coarse = kramers_setup(materials, tps)
        fine_grid = EnergyGrid.uniform(10, 150, 0.5)
        mats = MaterialSet([bundled_table(m) for m in materials])
        fine = MectSetup([kramers_spectrum(tp, grid=fine_grid) for tp in tps], mats)
        a, b = transform(coarse, x), transform(fine, x)
        assert np.max(np.abs(a - b) / b) < 1e-4


def test_setup_map_with_transform(bw_setup):
    A = np.array([[1.0, 0.0], [-0.5, 1.0]])
    F = SetupMap(bw_setup, A)
    x = np.array([0.1, 0.4])
    assert np.allclose(F.value(x), A @ transform(bw_setup, x))
    assert np.allclose(F.jacobian(x), A @ jacobian(bw_setup, x))


unit = st.floats(0.0, 1.0)


@given(st.tuples(unit, unit, unit), st.tuples(unit, unit, unit), st.floats(1e-3, 1.0))
def test_isotone_and_positive(u, v, gap):
    s = _biw()
    rect = default_rectangle(s)
    span = rect.upper - rect.lower
    a = rect.lower + np.array(u) * span * 0.9
    x = a + (0.05 + np.array(v)) * gap * span * 0.05
    assert np.all(transform(s, x) > transform(s, a))
    J = jacobian(s, x)
    assert J.min() > 0
    # e^{-M x} >= e^{-10 m} inside the default rectangle
    assert np.all(transform(s, rect.upper) <= 10 * s.m + 1e-9)


_cache = {}


def _biw():
    if "s" not in _cache:
        _cache["s"] = kramers_setup(["bone", "iodine", "water"], [40, 60, 140])
    return _cache["s"]
