import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hemtfit._kernels import dc_closed_form
from hemtfit.surrogate import (BiasPoint, DCParams, SmallSignalParams, TwoPortMatrix, dc_current, dc_currents,
                               embed_extrinsics, fixed_point_residual, intrinsic_y, iv_sweep, s_matrices, s_params,
                               s_to_y, y_to_s)

from conftest import FREQS, TRUE_DC, VDS_GRID, VGS_GRID

VT = 0.02585


def closed_form_oracle(p, vgs, vds):
    # straight transcription with the math module, zero contact resistance
    # in the log domain so deep subthreshold does not overflow
    n_vt = p.NFACTOR * VT
    veff = n_vt * np.logaddexp(0.0, (vgs - p.VOFF) / n_vt)
    mu = 1.0 / (1.0 + p.UA * veff + p.UB * veff ** 2)
    if vds == 0.0 or veff == 0.0:
        return 0.0
    vdeff = vds * math.exp(-np.logaddexp(0.0, p.DELTA * math.log(vds / veff)) / p.DELTA)
    return p.KGAIN * mu * (veff * vdeff - vdeff ** 2 / 2.0) * (1.0 + p.LAMBDA * vds)


dc_params = st.builds(
    DCParams,
    VOFF=st.floats(-3.0, -0.2), NFACTOR=st.floats(0.5, 3.0), KGAIN=st.floats(0.01, 1.0),
    UA=st.floats(0.0, 1.0), UB=st.floats(0.0, 0.5), DELTA=st.floats(1.0, 10.0), LAMBDA=st.floats(0.0, 0.1),
    RSC=st.floats(0.0, 5.0), RDC=st.floats(0.0, 5.0))


def test_vds_zero_gives_zero():
    assert dc_current(TRUE_DC, BiasPoint(0.0, 0.0)) == 0.0
    assert dc_current(TRUE_DC, BiasPoint(-0.7, 0.0)) == 0.0


def test_subthreshold_collapse():
    p = DCParams(VOFF=-1.0, NFACTOR=1.0, KGAIN=0.1)
    assert 0.0 <= dc_current(p, BiasPoint(-5.0, 5.0)) < 0.1 * 1e-60


def test_closed_form_example():
    p = DCParams(VOFF=-1.0, NFACTOR=1.0, KGAIN=0.1, DELTA=4.0)
    expected = closed_form_oracle(p, 0.0, 5.0)
    # veff ~ 1 V and vdeff ~ 5 / 626**0.25, so about 0.05 A
    assert expected == pytest.approx(0.05, rel=1e-3)
    assert dc_current(p, BiasPoint(0.0, 5.0)) == pytest.approx(expected, rel=1e-12)


@given(dc_params.map(lambda p: DCParams(**{**p.as_dict(), "RSC": 0.0, "RDC": 0.0})),
       st.floats(-3.0, 1.0), st.floats(0.0, 15.0))
def test_zero_resistance_matches_oracle(p, vgs, vds):
    got = dc_current(p, BiasPoint(vgs, vds))
    assert got == pytest.approx(closed_form_oracle(p, vgs, vds), rel=1e-10, abs=1e-300)


@given(dc_params)
def test_zero_resistance_path_is_exact(p):
    p0 = DCParams(**{**p.as_dict(), "RSC": 0.0, "RDC": 0.0})
    vgs, vds = np.meshgrid(VGS_GRID, VDS_GRID, indexing="ij")
    # same backend on both sides; numba and numpy differ by rounding only
    a = dc_currents(p0, vgs.ravel(), vds.ravel(), backend="numpy")
    b = dc_closed_form(vgs.ravel(), vds.ravel(), p0.as_array()[:7])
    assert np.array_equal(a, b)


@given(dc_params)
def test_fixed_point_consistency(p):
    vgs, vds = np.meshgrid(VGS_GRID, VDS_GRID, indexing="ij")
    cur = dc_currents(p, vgs.ravel(), vds.ravel())
    assert np.max(fixed_point_residual(p, vgs.ravel(), vds.ravel(), cur)) <= 1e-9


@given(dc_params)
def test_monotone_in_vds(p):
    cur = iv_sweep(p, VGS_GRID, VDS_GRID).id.reshape(len(VGS_GRID), len(VDS_GRID))
    assert np.all(cur >= 0)
    # flat saturation: neighbours may differ by the fixed-point tolerance
    assert np.all(np.diff(cur, axis=1) >= -2e-9 * cur[:, 1:])


@given(dc_params, st.floats(0.0, 1.0))
def test_monotone_in_vgs(p, u):
    # UB * Veff**2 <= 1 keeps mobility roll-off from beating the gain in the
    # linear region; beyond it the closed form is not monotone in vgs
    veff_max = VGS_GRID.max() - p.VOFF + 0.1
    p = DCParams(**{**p.as_dict(), "UB": u / veff_max ** 2})
    cur = iv_sweep(p, VGS_GRID, VDS_GRID).id.reshape(len(VGS_GRID), len(VDS_GRID))
    assert np.all(np.diff(cur, axis=0) >= -2e-9 * cur[1:])


def test_strong_mobility_rolloff_breaks_vgs_monotonicity():
    p = DCParams(VOFF=-2.0, NFACTOR=1.0, KGAIN=1.0, UB=0.5, DELTA=1.0)
    a = dc_current(p, BiasPoint(-0.3, 0.25))
    b = dc_current(p, BiasPoint(0.0, 0.25))
    assert b < a


@given(dc_params, st.floats(-2.5, 0.5), st.floats(0.1, 10.0))
def test_continuity_in_vgs(p, vgs, vds):
    eps = 1e-6
    a = dc_current(p, BiasPoint(vgs, vds))
    b = dc_current(p, BiasPoint(vgs + eps, vds))
    # gm is bounded by KGAIN * vds * (1 + LAMBDA * vds) for these ranges
    assert abs(b - a) <= 10.0 * eps


def test_sweep_order_and_count():
    iv = iv_sweep(TRUE_DC, VGS_GRID, VDS_GRID)
    assert len(iv) == 200
    assert np.array_equal(iv.vgs, np.repeat(VGS_GRID, 40))
    assert np.array_equal(iv.vds, np.tile(VDS_GRID, 5))


def test_single_point_sweep():
    iv = iv_sweep(TRUE_DC, [-0.5], [3.0])
    assert iv.rows == [(-0.5, 3.0, dc_current(TRUE_DC, BiasPoint(-0.5, 3.0)))]


def test_dc_params_validation():
    with pytest.raises(ValueError):
        DCParams(VOFF=-1, NFACTOR=0.0, KGAIN=0.1)
    with pytest.raises(ValueError):
        DCParams(VOFF=-1, NFACTOR=1.0, KGAIN=0.1, DELTA=0.5)
    with pytest.raises(ValueError):
        DCParams(VOFF=-1, NFACTOR=1.0, KGAIN=0.1, RSC=-1.0)


W1G = 2 * math.pi * 1e9


def test_intrinsic_resistive_only():
    y = intrinsic_y(SmallSignalParams(gds=0.02), W1G)
    np.testing.assert_array_equal(y.data, [[0, 0], [0, 0.02]])


def test_intrinsic_dc_limit():
    y = intrinsic_y(SmallSignalParams(gm=0.1, tau=1e-12, Cgs=1e-12, Ri=3.0), 1e-3)
    assert y[1, 0] == pytest.approx(0.1, rel=1e-9)


def test_intrinsic_cgd_example():
    y = intrinsic_y(SmallSignalParams(Cgd=1e-12), W1G)
    assert y[0, 1] == pytest.approx(-6.2832e-3j, rel=1e-5)
    assert y[0, 1] == -1j * W1G * 1e-12


def test_intrinsic_full_formula():
    p = SmallSignalParams(gm=0.08, tau=3e-12, gds=4e-3, Cgs=0.6e-12, Cgd=0.07e-12, Cds=0.12e-12, Ri=2.5)
    w = 2 * math.pi * 7e9
    ygs = 1j * w * p.Cgs / (1 + 1j * w * p.Ri * p.Cgs)
    ygd = 1j * w * p.Cgd
    expected = [[ygs + ygd, -ygd],
                [p.gm * np.exp(-1j * w * p.tau) / (1 + 1j * w * p.Ri * p.Cgs) - ygd, p.gds + 1j * w * p.Cds + ygd]]
    np.testing.assert_allclose(intrinsic_y(p, w).data, expected, rtol=1e-14)


def test_intrinsic_rejects_nonpositive_omega():
    with pytest.raises(ValueError):
        intrinsic_y(SmallSignalParams(), 0.0)


def test_embedding_identity():
    y = TwoPortMatrix([[0.01 + 0.002j, -1e-4j], [0.05, 0.003]], "Y")
    np.testing.assert_array_equal(embed_extrinsics(y, SmallSignalParams(), W1G).data, y.data)


def test_embedding_pads_only():
    y = TwoPortMatrix([[0.01, 0.0], [0.05, 0.003]], "Y")
    c = 0.2e-12
    out = embed_extrinsics(y, SmallSignalParams(CPG=c, CPD=c), W1G).data
    np.testing.assert_array_equal(out - y.data, [[1j * W1G * c, 0], [0, 1j * W1G * c]])


def test_embedding_source_resistor_by_hand():
    # Z = diag(100, 50) + 5 = [[105, 5], [5, 55]], det 5750
    y = TwoPortMatrix(np.diag([0.01, 0.02]), "Y")
    out = embed_extrinsics(y, SmallSignalParams(RS=5.0), W1G).data
    np.testing.assert_allclose(out, np.array([[55, -5], [-5, 105]]) / 5750, rtol=1e-13)


@given(st.integers(0, 2**32 - 1))
def test_embedding_matches_z_domain_oracle(seed):
    rng = np.random.default_rng(seed)
    p = SmallSignalParams(gm=rng.uniform(0, 0.2), tau=rng.uniform(0, 5e-12), gds=rng.uniform(1e-3, 1e-2),
                          Cgs=rng.uniform(0.1e-12, 1e-12), Cgd=rng.uniform(0.01e-12, 0.1e-12),
                          Cds=rng.uniform(0.01e-12, 0.2e-12), Ri=rng.uniform(0, 5),
                          RG=rng.uniform(0, 3), RD=rng.uniform(0, 3), RS=rng.uniform(0, 2),
                          LG=rng.uniform(0, 2e-10), LD=rng.uniform(0, 2e-10), LS=rng.uniform(0, 5e-11),
                          CPG=rng.uniform(0, 1e-13), CPD=rng.uniform(0, 1e-13))
    w = 2 * math.pi * rng.uniform(1e9, 2e10)
    yi = intrinsic_y(p, w)
    zg, zd, zs = p.RG + 1j * w * p.LG, p.RD + 1j * w * p.LD, p.RS + 1j * w * p.LS
    z = np.linalg.inv(yi.data) + np.array([[zg + zs, zs], [zs, zd + zs]])
    expected = np.linalg.inv(z) + np.diag([1j * w * p.CPG, 1j * w * p.CPD])
    np.testing.assert_allclose(embed_extrinsics(yi, p, w).data, expected, rtol=1e-9)


def test_y_to_s_open():
    np.testing.assert_array_equal(y_to_s(TwoPortMatrix(np.zeros((2, 2)), "Y")).data, np.eye(2))


def test_y_to_s_series_impedance():
    g = 1 / 100.0
    s = y_to_s(TwoPortMatrix([[g, -g], [-g, g]], "Y"), 50.0).data
    np.testing.assert_allclose(s, [[0.5, 0.5], [0.5, 0.5]], rtol=1e-14)


@given(st.integers(0, 2**32 - 1))
def test_s_y_round_trip(seed):
    rng = np.random.default_rng(seed)
    y = (rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))) * 0.01 + np.eye(2) * 0.02
    s = y_to_s(TwoPortMatrix(y, "Y"), 50.0)
    back = y_to_s(s_to_y(s), 50.0)
    assert np.max(np.abs(back.data - s.data)) <= 1e-10 * np.max(np.abs(s.data))
    np.testing.assert_allclose(s_to_y(s).data, y, rtol=1e-10, atol=1e-14)


passive = st.builds(
    SmallSignalParams, gds=st.floats(0, 0.05), Cgs=st.floats(0, 2e-12), Cgd=st.floats(0, 0.5e-12),
    Cds=st.floats(0, 1e-12), Ri=st.floats(0, 10), RG=st.floats(0, 5), RD=st.floats(0, 5), RS=st.floats(0, 5),
    LG=st.floats(0, 5e-10), LD=st.floats(0, 5e-10), LS=st.floats(0, 1e-10), CPG=st.floats(0, 2e-13),
    CPD=st.floats(0, 2e-13))


@given(passive)
def test_passive_network_is_passive_and_reciprocal(p):
    for s in s_matrices(p, FREQS):
        assert np.linalg.svd(s, compute_uv=False)[0] <= 1 + 1e-9
        assert abs(s[0, 1] - s[1, 0]) <= 1e-10


def test_s_params_grid():
    ds = s_params(SmallSignalParams(gm=0.1, gds=5e-3, Cgs=0.5e-12), FREQS)
    assert len(ds) == 10
    assert np.all(np.diff(ds.freqs) > 0)
    assert ds.freqs[0] == 1e9 and ds.freqs[-1] == 1e10
    with pytest.raises(ValueError):
        s_matrices(SmallSignalParams(), [2e9, 1e9])
