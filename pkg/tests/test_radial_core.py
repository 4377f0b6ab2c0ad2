import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import assume, given, settings, strategies as st

from nls_modecheck.radial_core import (GridError, RadialFunction, gregory_corrections, lambda0,
                                       lambda_phi, laplacian, make_grid, radial_derivative,
                                       resample, stiffness)

dims = st.integers(1, 10)
sectors = st.integers(0, 2)
steps = st.sampled_from([0.05, 0.1, 0.2])


def test_grid_rejects_bad_input():
    with pytest.raises(GridError):
        make_grid(0, 0, 0.1, 10)
    with pytest.raises(GridError):
        make_grid(11, 0, 0.1, 10)
    with pytest.raises(GridError):
        make_grid(1, 0, -0.1, 10)
    with pytest.raises(GridError):
        make_grid(1, 0, 0.1, 0.5)
    with pytest.raises(GridError):
        make_grid(1, 0, 0.1, 10, boundary="periodic")
    with pytest.raises(GridError):
        make_grid(1, 2, 0.1, 10)


def test_staggered_nodes():
    g = make_grid(2, 0, 0.1, 1.0)
    assert g.n == 10
    assert np.allclose(g.nodes, 0.05 + 0.1 * np.arange(10))
    assert g.r_wall == pytest.approx(1.0)


@given(dims, steps)
def test_cell_mass_sums_to_ball_volume(d, h):
    g = make_grid(d, 0, h, 5.0)
    assert g.mass.sum() == pytest.approx(g.r_wall ** d / d, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(dims, sectors, steps)
def test_stiffness_symmetric_positive(d, s, h):
    assume(d > 1 or s <= 1)
    g = make_grid(d, s, h, 4.0)
    k = stiffness(g)
    assert abs(k - k.T).max() == 0
    lam = np.linalg.eigvalsh(k.toarray())
    assert lam.min() > 0


@settings(max_examples=30, deadline=None)
@given(dims, sectors, steps)
def test_lambda0_antisymmetric_in_mass_pairing(d, s, h):
    assume(d > 1 or s <= 1)
    op = lambda0(make_grid(d, s, h, 4.0))
    assert op.symmetry_defect() <= 1e-14


def test_laplacian_second_order():
    # Delta e^{-r^2} = (4 r^2 - 2 d) e^{-r^2}
    for d in (1, 2, 3):
        errs = []
        for h in (0.04, 0.02, 0.01):
            g = make_grid(d, 0, h, 8.0)
            r = g.nodes
            lap = laplacian(g) @ np.exp(-r ** 2)
            errs.append(np.max(np.abs(lap - (4 * r ** 2 - 2 * d) * np.exp(-r ** 2))))
        assert np.log2(errs[0] / errs[1]) == pytest.approx(2, abs=0.3)
        assert np.log2(errs[1] / errs[2]) == pytest.approx(2, abs=0.3)


def test_lambda0_action_on_gaussian():
    # (d/2 + r d/dr) e^{-r^2} = (d/2 - 2 r^2) e^{-r^2}; interior only (wall coupling dropped)
    d = 3
    errs = []
    for h in (0.02, 0.01):
        g = make_grid(d, 0, h, 8.0)
        r = g.nodes
        out = lambda0(g) @ np.exp(-r ** 2)
        sel = r < 6
        errs.append(np.max(np.abs(out - (d / 2 - 2 * r ** 2) * np.exp(-r ** 2))[sel]))
    assert errs[1] < 1e-3
    assert errs[0] / errs[1] == pytest.approx(4, abs=0.5)


def test_lambda_phi_reduces_to_lambda0():
    g = make_grid(2, 0, 0.05, 5.0)
    full = lambda_phi(g, lambda r: np.ones_like(r)).matrix
    assert abs(full - lambda0(g).matrix).max() < 1e-14


def test_radial_derivative_parity_ghost():
    g = make_grid(1, 1, 0.01, 5.0)
    r = g.nodes
    err = np.max(np.abs(radial_derivative(g, np.sin(r)) - np.cos(r))[:-1])
    assert err < 1e-4


def test_gregory_weights_integrate_polynomial():
    assert gregory_corrections(4).shape == (4,)
    g = make_grid(1, 0, 0.01, 3.0)
    assert g.integrate(g.nodes ** 4) == pytest.approx(3.0 ** 5 / 5, rel=1e-10)


def test_resample_roundtrip_and_guards():
    src = make_grid(2, 0, 0.01, 10.0)
    f = RadialFunction(src, np.exp(-src.nodes ** 2))
    tgt = make_grid(2, 0, 0.02, 8.0)
    out = resample(f, tgt)
    assert np.max(np.abs(out.values - np.exp(-tgt.nodes ** 2))) < 1e-7
    with pytest.raises(GridError):
        resample(f, make_grid(2, 0, 0.02, 12.0))
    with pytest.raises(GridError):
        resample(f, make_grid(2, 1, 0.02, 8.0))


def test_real_flag_rejects_complex():
    g = make_grid(1, 0, 0.1, 2.0)
    with pytest.raises(GridError):
        RadialFunction(g, np.ones(g.n) * 1j)
    with pytest.raises(GridError):
        RadialFunction(g, np.ones(3))


def test_operator_adjoint_matches_weighted_transpose():
    g = make_grid(3, 1, 0.1, 3.0)
    op = laplacian(g)
    a = op.matrix
    m = sp.diags(op.weight())
    assert abs(m @ a - (m @ a).T).max() < 1e-12
