import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nls_modecheck import liouville as lv
from nls_modecheck.ground_state import ground_state_pack
from nls_modecheck.operators import assemble_H0, assemble_Hb
from nls_modecheck.radial_core import GridError
from nls_modecheck.ssprofile import profile_on_grid, solve_profile

unit = st.floats(0.0, 3.0, allow_nan=False)


@pytest.fixture(scope="module")
def set0():
    return assemble_H0(ground_state_pack(1, h=0.02, r_max=20.0), 0)


@pytest.fixture(scope="module")
def setb():
    gs = ground_state_pack(1, h=0.02, r_max=30.0)
    prof = solve_profile(1, 5.2, 0.2845, 1.1876, gs.grid)
    return gs, assemble_Hb(profile_on_grid(prof, gs.grid), 0)


@given(unit, unit)
def test_psi_monotone_in_unit_interval(a, b):
    lo, hi = sorted((a, b))
    assert 0.0 <= lv.psi(lo) <= 1.0
    assert lv.psi(hi) <= lv.psi(lo) + 1e-15


@given(unit)
def test_chi_support(r):
    c = float(lv.chi(r))
    assert 0.0 <= c <= 1.0
    if r <= 1:
        assert c == 1.0
    if r >= 1.5:
        assert c == 0.0


def test_psi_endpoints_and_smoothness():
    assert lv.psi(1.0) == pytest.approx(1.0)
    assert lv.psi(2.0) == pytest.approx(0.0, abs=1e-12)
    for k in (1, 2, 3):
        assert lv.psi_derivative(np.array([1.0, 2.0]), k) == pytest.approx([0.0, 0.0])
    # C^3: the scaled third difference settles under refinement
    a, b = lv.psi_third_difference(0.3, 2001), lv.psi_third_difference(0.3, 4001)
    assert a == pytest.approx(b, rel=0.01)


def test_psi_inequality_report():
    out = lv.psi_inequality_check((0.1, 0.2, 0.3), n=4001)
    assert len(out["rows"]) == 3
    assert out["S_b_pass"]
    assert out["spread"] >= 1.0
    assert all(1.0 <= r["s_arg"] <= 2.0 for r in out["rows"])


def test_energy_conserved(set0):
    rng = np.random.default_rng(1)
    n = set0.grid.n
    u = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    w = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    assert lv.energy_conservation_check(set0, u, w)["residual"] <= 1e-12
    broken = lv.energy_conservation_check(set0, u, w, lp=lv.broken_lplus(set0))
    # the 1e-12 gate must see the injected non-hermitian part
    assert broken["residual"] > 1e-9


def test_lambda_r_antisymmetric(set0):
    cut = lv.build_cutoffs(0.3, set0.grid, R=6.0, need_psi=False)
    assert lv.lambda_r_defect(cut, np.random.default_rng(2)) <= 1e-12


def test_cutoff_guards(set0):
    with pytest.raises(ValueError):
        lv.build_cutoffs(0.0, set0.grid)
    with pytest.raises(GridError):
        lv.build_cutoffs(0.1, set0.grid)
    cut = lv.build_cutoffs(0.3, set0.grid, R=15.0, need_psi=False)
    u, w = lv.smooth_inputs(set0.grid, np.random.default_rng(0), 2)
    with pytest.raises(GridError):
        lv.virial_derivative_identity(set0, cut, u, w)


def test_virial_identity_second_order():
    vals = []
    for h in (0.04, 0.02):
        s0 = assemble_H0(ground_state_pack(1, h=h, r_max=20.0), 0)
        cut = lv.build_cutoffs(0.3, s0.grid, R=6.0, need_psi=False)
        u, w = lv.smooth_inputs(s0.grid, np.random.default_rng(5), 2)
        vals.append(lv.virial_derivative_identity(s0, cut, u, w)["relative"])
    assert math.log2(vals[0] / vals[1]) >= 1.7


def test_eb_form_basics(setb):
    gs, sb = setb
    z = np.zeros(sb.grid.n, dtype=complex)
    assert lv.eb_form(sb, z, z)["value"] == 0.0
    u, w = lv.smooth_inputs(sb.grid, np.random.default_rng(3), 2)
    out = lv.eb_form(sb, u, w)
    assert abs(out["imag"]) <= 1e-10 * abs(out["value"])


def test_eb_sampling_small(setb):
    gs, sb = setb
    out = lv.eb_sampling_check(sb, gs, np.random.default_rng(4), samples=10)
    assert len(out["values"]) == 10
    assert out["worst"] == min(out["values"])


def test_ebmu_regime_warning(setb):
    gs, sb = setb
    cut = lv.build_cutoffs(sb.profile.b, sb.grid)
    u, w = lv.smooth_inputs(sb.grid, np.random.default_rng(6), 2)
    assert lv.ebmu_assembly(sb, cut, 0.0, u, w)["in_regime"]
    with pytest.warns(UserWarning):
        out = lv.ebmu_assembly(sb, cut, 1.0, u, w)
    assert not out["in_regime"]


@settings(max_examples=20)
@given(st.floats(0.0, 100.0), st.floats(0.1, 2.0))
def test_varrho_bounds(r, mu):
    v = float(lv.varrho(r, mu))
    assert 0.0 < v <= 1.0


def test_checks_csv():
    text = lv.checks_csv([{"check": "x", "d": 1, "b": 0.1, "h": 0.01, "value": 1.0,
                           "status": "PASS"}])
    assert text.splitlines() == [",".join(lv.CHECK_FIELDS), "x,1,0.10000000000000001,0.01,1,PASS"]
