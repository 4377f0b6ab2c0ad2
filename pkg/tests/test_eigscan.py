import json

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from nls_modecheck.eigscan import (EIG_FIELDS, EigscanError, ScanWindow, classify, eig_csv,
                                   full_spectrum, h0_mode_stability, localization_score,
                                   near_origin_check, polish, profile_match, scan_json,
                                   wall_fraction)
from nls_modecheck.ground_state import ground_state_pack
from nls_modecheck.operators import assemble_H0
from nls_modecheck.radial_core import laplacian, make_grid

finite = st.floats(-50, 50, allow_nan=False)


def test_window_validation():
    with pytest.raises(ValueError):
        ScanWindow(delta=0.0)
    with pytest.raises(ValueError):
        ScanWindow(M=-1.0)


def test_window_default_gap_and_bounds():
    w = ScanWindow.for_profile(0.3, 1)
    assert w.sigma_gap == pytest.approx(0.3 ** 6)
    assert w.re_bound == pytest.approx(10 * 0.3 ** -2)
    assert w.im_floor == -10
    assert ScanWindow(b=0.0).re_bound == np.inf


@given(finite, finite, st.floats(0.01, 1.0), st.floats(-0.1, 0.1))
def test_window_membership(re, im, delta, gap):
    w = ScanWindow(delta=delta, sigma_gap=gap, M=10.0, b=0.3, d=1)
    z = complex(re, im)
    if w.contains(z):
        assert abs(z) >= delta and z.imag < gap and z.imag >= -10


def test_window_empty():
    assert ScanWindow(delta=100.0, sigma_gap=0.0, M=1.0, b=1.0, d=1).empty
    assert not ScanWindow.for_profile(0.3, 1).empty


def test_hermitian_path_matches_closed_form():
    # -u'' on (0, R), even at 0, Dirichlet at R: ((k - 1/2) pi / R)^2
    g = make_grid(1, 0, 0.01, 5.0)
    op = laplacian(g)
    op.blocks = [[-op.blocks[0][0]]]
    lam, vec = full_spectrum(op)
    assert np.all(lam.imag == 0)
    lam = np.sort(lam.real)[:3]
    exact = ((np.arange(1, 4) - 0.5) * np.pi / 5.0) ** 2
    assert np.allclose(lam, exact, rtol=1e-4)
    assert vec.shape == (g.n, g.n)


def test_h0_spectrum_symmetric():
    gs = ground_state_pack(1, h=0.1, r_max=10.0)
    lam, _ = full_spectrum(assemble_H0(gs, 0).H0, vectors=False)
    # real coefficients and the s1 symmetry: lambda -> conj(lambda), -lambda
    big = lam[np.abs(lam) > 1e-2]
    for z in big[:40]:
        assert np.min(np.abs(big + z)) < 1e-8 * (1 + abs(z))
        assert np.min(np.abs(big - np.conj(z))) < 1e-8 * (1 + abs(z))


def test_dense_limit():
    g = make_grid(1, 0, 0.1, 5.0)
    with pytest.raises(EigscanError):
        full_spectrum(laplacian(g), dense_limit=10)


def test_polish_converges_and_stagnates():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((30, 30))
    lam = np.linalg.eigvals(a)
    z, v, res = polish(sp.csr_matrix(a), lam[3] + 1e-4)
    # non-normal matrix: eigenvalue error ~ residual times condition number
    assert abs(z - lam[3]) < 1e-7
    assert res <= 1e-8
    with pytest.raises(EigscanError):
        polish(sp.csr_matrix(a), lam[3] + 0.5, maxiter=1)


def test_localization_and_wall():
    g = make_grid(1, 0, 0.05, 20.0)
    gauss = np.exp(-g.nodes ** 2)
    assert localization_score(g, gauss) == pytest.approx(1.0)
    assert wall_fraction(g, gauss) < 1e-12
    flat = np.ones(g.n)
    assert localization_score(g, flat) == pytest.approx(np.sqrt(0.5), abs=1e-2)
    both = np.concatenate([gauss, gauss])
    assert localization_score(g, both, nb=2) == pytest.approx(1.0)


def test_classify_branches():
    assert classify(1.0, 0.99, 0.0, 1e-5, 1e-5) == "localized"
    assert classify(1.0, 0.99, 0.0, 1e-1, 1e-5) == "continuum-artifact"
    assert classify(1.0, 0.5, 0.7) == "boundary-artifact"
    assert classify(1.0, 0.5, 0.1) == "continuum-artifact"
    with pytest.raises(EigscanError):
        classify(1.0, 0.99, 0.0)


@settings(max_examples=20)
@given(st.floats(0.5, 3.0))
def test_profile_match_scale_invariant(width):
    g1 = make_grid(1, 0, 0.05, 10.0)
    g2 = make_grid(1, 0, 0.025, 15.0)
    f1 = np.exp(-(g1.nodes / width) ** 2)
    f2 = 3.0 * np.exp(-(g2.nodes / width) ** 2)
    assert profile_match(g1, f1, g2, f2) > 0.999


def test_near_origin_check_skips_zero():
    b = 0.3
    rung = {"near_origin": [],
            "symmetry": [{"sector": 0, "target": 0.0, "distance": 0.5},
                         {"sector": 0, "target": -2j * b, "distance": 1e-5},
                         {"sector": 1, "target": -1j * b, "distance": 1e-5}]}
    out = near_origin_check(rung, b)
    assert out["pass"] and set(out["distances"]) == {"s0:-2bi", "s1:-1bi"}
    rung["symmetry"][2]["distance"] = 1e-3
    assert not near_origin_check(rung, b)["pass"]
    rung["symmetry"][2]["distance"] = 1e-5
    rung["near_origin"] = [{"sector": 0, "lam": 0.05j}]
    assert not near_origin_check(rung, b)["pass"]


def test_small_scan_structure():
    res = h0_mode_stability(1, h=0.2, r_max=8.0, sectors=(0,))
    assert set(res["rungs"]) == {"h/1,r*1", "h/2,r*1", "h/1,r*1.5", "h/2,r*1.5"}
    assert res["verdict"] in ("PASS", "FAIL", "UNSTABLE")
    text = eig_csv(res)
    assert text.splitlines()[0] == ",".join(EIG_FIELDS)
    assert len(text.splitlines()) > 100
    back = json.loads(scan_json(res))
    assert back["operator"] == "H0"
