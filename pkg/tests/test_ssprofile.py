import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp, trapezoid

from nls_modecheck.ground_state import ground_state_pack
from nls_modecheck.radial_core import GridError, make_grid
from nls_modecheck.ssprofile import (ProfileB, ProfileError, compare_potentials,
                                     critical_exponent, potentials, profile_at_b,
                                     profile_on_grid, profile_residual, regauge,
                                     scaling_law_check, solve_profile, wkb_envelope)

# d = 1, p = 5.2 baseline; frozen from the shooting solver and confirmed by
# the independent RK45 oracle below to about 1e-7
A0_BASE = 1.1875886102195878
B_BASE = 0.2845199829387264


def _oracle_wiggle(d, p, a, b):
    """Relative oscillation of |Q| r^{2/(p-1)} on [15/b, 25/b] from a fresh RK45 shot.

    The admissible branch has a smooth power-law modulus; any admixture of
    the e^{-i b r^2 / 2} branch shows up as a ripple.
    """
    g = 2 / (p - 1)

    def rhs(r, y):
        q = y[0] + 1j * y[1]
        dq = y[2] + 1j * y[3]
        dd = -(d - 1) / r * dq + q - 1j * b * (g * q + r * dq) - q * abs(q) ** (p - 1)
        return [dq.real, dq.imag, dd.real, dd.imag]

    r0 = 1e-6
    c2 = (a - a ** p - 1j * b * g * a) / (2 * d)
    q0, dq0 = a + c2 * r0 ** 2, 2 * c2 * r0
    rs = np.linspace(15 / b, 25 / b, 3000)
    sol = solve_ivp(rhs, (r0, rs[-1]), [q0.real, q0.imag, dq0.real, dq0.imag], method="RK45",
                    rtol=1e-11, atol=1e-13, t_eval=rs)
    m = np.hypot(sol.y[0], sol.y[1]) * rs ** g
    trend = np.polyval(np.polyfit(rs ** -2.0, m, 3), rs ** -2.0)
    return np.max(np.abs(m - trend)) / np.mean(m)


@pytest.fixture(scope="module")
def prof():
    return solve_profile(1, 5.2, 0.29, 1.185, make_grid(1, 0, 0.02, 30.0))


def test_critical_exponent():
    assert critical_exponent(1, 5.2) == pytest.approx(0.5 - 2 / 4.2)
    assert critical_exponent(1, 5.2) == pytest.approx(0.0238095, abs=1e-6)
    assert critical_exponent(2, 3.0) == 0.0


def test_baseline_matches_frozen(prof):
    assert prof.b == pytest.approx(B_BASE, abs=1e-9)
    assert prof.a0 == pytest.approx(A0_BASE, abs=1e-9)
    assert prof.residual <= 1e-8


def test_oracle_confirms_baseline():
    base = _oracle_wiggle(1, 5.2, A0_BASE, B_BASE)
    assert base < 1e-5
    assert _oracle_wiggle(1, 5.2, A0_BASE, B_BASE + 1e-6) > 3 * base
    assert _oracle_wiggle(1, 5.2, A0_BASE + 1e-6, B_BASE) > 3 * base


def test_tail_power(prof):
    target = -2 / (5.2 - 1)
    assert prof.tail_fit["power"] == pytest.approx(target, rel=0.05)


def test_refinement_and_matching_radius(prof):
    fine = solve_profile(1, 5.2, prof.b, prof.a0, make_grid(1, 0, 0.01, 30.0))
    moved = solve_profile(1, 5.2, prof.b, prof.a0, make_grid(1, 0, 0.02, 30.0),
                          r_match=7.0 / prof.b)
    for other in (fine, moved):
        assert abs(other.b - prof.b) <= 1e-5
        assert abs(other.a0 - prof.a0) <= 1e-5


def test_grid_residual_second_order(prof):
    coarse = profile_residual(prof)
    fine = profile_residual(profile_on_grid(prof, make_grid(1, 0, 0.01, 30.0)))
    assert coarse / fine == pytest.approx(4, abs=0.6)


def test_critical_power_returns_ground_state():
    pr = solve_profile(1, 5.0, 0.1, 1.0, make_grid(1, 0, 0.02, 20.0))
    assert pr.b == 0
    assert pr.a0 == pytest.approx(3 ** 0.25, abs=1e-6)


def test_profile_guards():
    g = make_grid(1, 0, 0.02, 30.0)
    with pytest.raises(ValueError):
        solve_profile(1, 4.0, 0.3, 1.2, g)
    with pytest.raises(ValueError):
        solve_profile(1, 5.2, -0.3, 1.2, g)
    with pytest.raises(GridError):
        solve_profile(1, 5.2, 0.3, 1.2, make_grid(1, 0, 0.02, 20.0))
    with pytest.raises(GridError):
        solve_profile(1, 5.2, 0.3, 1.2, make_grid(1, 1, 0.02, 30.0))


def test_profile_at_b_hits_target():
    pr = profile_at_b(1, 0.3, 5.2, B_BASE, A0_BASE)
    assert pr.b == pytest.approx(0.3, abs=1e-9)
    assert pr.p > 5.2


def test_scaling_table_monotone():
    out = scaling_law_check(1, [5.2, 5.22, 5.24], B_BASE, A0_BASE, h=0.02)
    assert out["monotone"]
    assert len(out["rows"]) == 3


def test_potentials_near_ground_state(prof):
    gs = ground_state_pack(1, h=0.02, r_max=30.0)
    cmp = compare_potentials(prof, gs)
    assert np.isfinite(cmp["C1"]) and np.isfinite(cmp["C2"])
    pot = potentials(prof)
    assert np.allclose(pot.Wplus.values - pot.Wminus.values, 2 * pot.W2b.values.real)


def test_record_roundtrip(prof):
    back = ProfileB.from_json(prof.to_json())
    assert back.b == prof.b and back.a0 == prof.a0
    assert np.array_equal(back.Qb.values, prof.Qb.values)


def test_regauge_fixes_phase():
    v = np.exp(0.7j) * np.array([2.0, 1.0, 0.5])
    out = regauge(v)
    assert abs(out[0].imag) < 1e-15 and out[0].real > 0


@given(st.floats(0.05, 1.0), st.floats(0.0, 50.0))
def test_wkb_envelope_bounds(b, r):
    s = wkb_envelope(b, r)
    assert 0.0 <= s <= np.pi / (2 * b) + 1e-12
    if r >= 2 / b:
        assert s == 0.0


@settings(max_examples=20)
@given(st.floats(0.05, 1.0))
def test_wkb_envelope_origin(b):
    assert wkb_envelope(b, 0.0) == pytest.approx(np.pi / (2 * b), abs=1e-10)


def test_wkb_envelope_quadrature():
    b = 0.3
    s = np.linspace(0.5, 2 / b, 200001)
    num = trapezoid(np.sqrt(1 - b * b * s * s / 4), s)
    assert wkb_envelope(b, 0.5) == pytest.approx(num, rel=1e-6)
    with pytest.raises(ValueError):
        wkb_envelope(0.0, 1.0)


def test_profile_error_type():
    assert issubclass(ProfileError, RuntimeError)
