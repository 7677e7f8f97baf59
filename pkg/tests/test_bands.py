"""Closed-form bands, extrema, mass identity and the ODE oracle.

Reference values come from an independent 50-digit evaluation of the
closed forms, computed before these tests were written.
"""
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chemoband.bands import (
    QuadratureConfig,
    band_extrema,
    band_mass,
    band_speed_from_mass,
    eval_band,
    eval_limited,
    eval_unlimited,
    first_order_residual,
    integrate_band_ode,
    limited_case,
    numeric_band_max,
    traveling_ode_residual,
)
from chemoband.errors import (
    BlowupDetected,
    MissingDerivatives,
    OverflowGuard,
    QuadratureNotConverged,
    RegimeMismatch,
    ValidationError,
)
from chemoband.model import BandParams, BandProfile, ModelParams, Regime, validate

# 50-digit reference values
U_D13_ZERO = 0.10174051267215569831
V_D13_ZERO = 0.059348632392090824015
V_LIM_ZERO = 0.89442719099991587856
UMAX_D1 = 0.33109149705429808944
ZETA0_D1 = 2.4860914612961948668


def test_unlimited_reference_point(table1):
    p = eval_unlimited(*table1, [0.0])
    assert p.u_vals[0] == pytest.approx(U_D13_ZERO, rel=1e-13)
    assert p.v_vals[0] == pytest.approx(V_D13_ZERO, rel=1e-13)


def test_limited_reference_point(limited):
    p = eval_limited(*limited, [0.0])
    assert p.u_vals[0] == pytest.approx(0.45 / 5.0, rel=1e-14)
    assert p.v_vals[0] == pytest.approx(V_LIM_ZERO, rel=1e-14)


def test_unlimited_tails(table1):
    p = eval_unlimited(*table1, [-200.0, 200.0])
    assert p.v_vals[1] == pytest.approx(1.0, rel=1e-12)
    assert p.u_vals[1] < 1e-40
    assert p.u_vals[0] < 1e-40 and p.v_vals[0] < 1e-40


def test_limited_tails(limited):
    p = eval_limited(*limited, [-200.0, 200.0])
    assert p.u_vals[0] == pytest.approx(0.45, rel=1e-14)
    assert p.v_vals[0] < 1e-20
    assert p.v_vals[1] == pytest.approx(1.0, rel=1e-14)


def test_overflow_guard_substitutes_limits(table1, limited):
    with pytest.warns(OverflowGuard):
        p = eval_unlimited(*table1, [-1e6, 1e6])
    np.testing.assert_array_equal(p.u_vals, [0.0, 0.0])
    np.testing.assert_array_equal(p.v_vals, [0.0, 1.0])
    assert p.n_clamped == 2
    with pytest.warns(OverflowGuard):
        q = eval_limited(*limited, [-1e6, 1e6])
    np.testing.assert_array_equal(q.u_vals, [validate(*limited).c4, 0.0])
    np.testing.assert_array_equal(q.v_vals, [0.0, 1.0])


def test_no_warning_inside_cap(table1):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        eval_unlimited(*table1, np.linspace(-100, 100, 11))


def test_regime_dispatch(table1, limited):
    with pytest.raises(RegimeMismatch):
        eval_unlimited(*limited, [0.0])
    with pytest.raises(RegimeMismatch):
        eval_limited(*table1, [0.0])
    assert eval_band(*limited, [0.0]).u_vals[0] == pytest.approx(0.09)


def test_critical_is_limit_of_general(critical):
    mp1, bp1 = critical
    z = np.linspace(-10, 10, 201)
    base = eval_unlimited(mp1, bp1, z)
    mp = ModelParams.from_d(1.0 + 1e-7, tau=mp1.tau, mu=mp1.mu)
    near = eval_unlimited(mp, BandParams(1.5, 4.0, 1.0), z)
    assert np.max(np.abs(near.v_vals - base.v_vals)) < 1e-6


@pytest.mark.parametrize("fixture", ["table1", "critical", "limited"])
def test_residual_of_closed_forms(fixture, request):
    mp, bp = request.getfixturevalue(fixture)
    z = np.linspace(-25, 25, 1001)
    res = traveling_ode_residual(mp, bp, eval_band(mp, bp, z))
    assert res.max_rel < 1e-12


def test_limited_first_order_residual(limited):
    z = np.linspace(-25, 25, 1001)
    r = first_order_residual(*limited, eval_limited(*limited, z))
    assert np.max(np.abs(r)) < 1e-10


def test_residual_detects_wrong_speed(table1):
    mp, bp = table1
    p = eval_unlimited(mp, bp, np.linspace(-10, 10, 201))
    wrong = BandParams(1.6, bp.c0, bp.v_inf)
    assert traveling_ode_residual(mp, wrong, p).max_rel > 1e-3


def test_residual_needs_derivatives(table1):
    p = eval_unlimited(*table1, [0.0, 1.0])
    bare = BandProfile(p.zeta, p.u_vals, p.v_vals)
    with pytest.raises(MissingDerivatives):
        traveling_ode_residual(*table1, bare)


def test_extrema_reference(critical):
    ext = band_extrema(*critical)
    assert ext.u_max == pytest.approx(UMAX_D1, rel=1e-13)
    assert ext.zeta0 == pytest.approx(ZETA0_D1, rel=1e-13)


@pytest.mark.parametrize("d", [1.0, 1.3, 2.0, 5.0])
def test_extrema_match_numeric(d):
    mp = ModelParams.from_d(d, tau=0.05, mu=0.25)
    bp = BandParams(1.5, 4.0, 1.0, Regime.UNLIMITED_CRITICAL if d == 1.0 else Regime.UNLIMITED_GENERAL)
    ext = band_extrema(mp, bp, verify=True)
    num = numeric_band_max(mp, bp)
    assert num.u_max == pytest.approx(ext.u_max, rel=1e-8)
    assert num.zeta0 == pytest.approx(ext.zeta0, rel=1e-8)


def test_extrema_rejects_limited(limited):
    with pytest.raises(RegimeMismatch):
        band_extrema(*limited)


def test_mass_identity_table1(table1, critical):
    for mp, bp in (table1, critical):
        est = band_speed_from_mass(mp, bp)
        assert est.c_est == pytest.approx(bp.c, rel=1e-10)
        assert est.error < 1e-9


def test_mass_prefactor_linearity(table1):
    mp, bp = table1
    base = band_speed_from_mass(mp, bp).c_est
    doubled = ModelParams(tau=mp.tau, mu=mp.mu, beta=mp.beta, k=2.0 * mp.k)
    # k/V_inf * mass: the mass scales like 1/k, so the identity is invariant
    assert band_speed_from_mass(doubled, bp).c_est == pytest.approx(base, rel=1e-10)
    mass, _ = band_mass(mp, bp)
    mass2, _ = band_mass(mp, BandParams(bp.c, bp.c0, 2.0 * bp.v_inf))
    assert mass2 == pytest.approx(2.0 * mass, rel=1e-10)


@pytest.mark.parametrize("v_inf,c0", [(0.5, 1.0), (2.0, 10.0), (1.0, 0.2)])
def test_mass_identity_other_parameters(table1, v_inf, c0):
    mp, _ = table1
    bp = BandParams(1.5, c0, v_inf)
    assert band_speed_from_mass(mp, bp).c_est == pytest.approx(1.5, rel=1e-9)


def test_truncated_quadrature(table1, critical):
    for mp, bp in (table1, critical):
        est = band_speed_from_mass(mp, bp, QuadratureConfig(method="truncate", window=(-60.0, 80.0)))
        assert est.c_est == pytest.approx(bp.c, rel=1e-9)
    with pytest.raises(QuadratureNotConverged) as info:
        band_speed_from_mass(*table1, QuadratureConfig(method="truncate", window=(-1.0, 1.0)))
    assert info.value.error > 0


def test_quadrature_config_errors(table1):
    with pytest.raises(ValidationError):
        band_mass(*table1, QuadratureConfig(method="truncate"))
    with pytest.raises(ValidationError):
        band_mass(*table1, QuadratureConfig(method="simpson"))


@pytest.mark.parametrize("fixture", ["table1", "critical"])
def test_ode_oracle_unlimited(fixture, request):
    mp, bp = request.getfixturevalue(fixture)
    z = np.linspace(-20, 20, 401)
    start = eval_unlimited(mp, bp, [20.0])
    ode = integrate_band_ode(mp, bp, (start.u_vals[0], start.v_vals[0]), (20.0, -20.0), zeta_eval=z)
    exact = eval_unlimited(mp, bp, z)
    np.testing.assert_allclose(ode.zeta, z)
    assert np.max(np.abs(ode.u_vals - exact.u_vals)) < 1e-9
    assert np.max(np.abs(ode.v_vals - exact.v_vals)) < 1e-9
    assert np.max(np.abs(ode.du - exact.du)) < 1e-8


def test_ode_oracle_limited_case2(limited):
    mp, bp = limited
    z = np.linspace(-20, 20, 401)
    start = eval_limited(mp, bp, [-20.0])
    ode = integrate_band_ode(mp, bp, (start.u_vals[0], start.v_vals[0]), (-20.0, 20.0), zeta_eval=z)
    exact = eval_limited(mp, bp, z)
    assert ode.meta["case"] == "II"
    assert np.max(np.abs(ode.u_vals - exact.u_vals)) < 1e-7
    assert np.max(np.abs(ode.v_vals - exact.v_vals)) < 1e-7


def test_ode_case1_constant(limited):
    mp, bp = limited
    ode = integrate_band_ode(mp, bp, (0.45, 1.0), (0.0, 20.0))
    assert ode.meta["case"] == "I"
    assert np.max(np.abs(ode.u_vals - 0.45)) < 1e-12


def test_ode_case3_blowup(limited):
    mp, bp = limited
    s = validate(mp, bp).decay_rate
    with pytest.raises(BlowupDetected) as info:
        integrate_band_ode(mp, bp, (0.9, 1.0), (0.0, 50.0))
    expected = -math.log(0.5) / s
    assert info.value.zeta_max == pytest.approx(expected, rel=1e-4)
    assert info.value.profile is not None and info.value.profile.zeta[-1] < expected


def test_limited_case_labels(limited):
    assert limited_case(*limited, 0.45) == "I"
    assert limited_case(*limited, 0.2) == "II"
    assert limited_case(*limited, 0.5) == "III"


def test_ode_rejects_nonpositive_ic(table1):
    with pytest.raises(ValidationError):
        integrate_band_ode(*table1, (0.0, 1.0), (0.0, 1.0))
    with pytest.raises(ValidationError):
        integrate_band_ode(*table1, (1.0, 1.0), (0.0, 0.0))


@settings(max_examples=30, deadline=None)
@given(
    d=st.floats(1.05, 6.0),
    tau=st.floats(0.01, 0.2),
    mu=st.floats(0.1, 1.0),
    c=st.floats(0.5, 3.0),
    c0=st.floats(0.1, 10.0),
    v_inf=st.floats(0.5, 2.0),
)
def test_unlimited_properties(d, tau, mu, c, c0, v_inf):
    mp = ModelParams.from_d(d, tau=tau, mu=mu)
    bp = BandParams(c, c0, v_inf)
    z = np.linspace(-20, 20, 201)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OverflowGuard)
        p = eval_unlimited(mp, bp, z)
    assert np.all(p.u_vals >= 0) and np.all(p.v_vals >= 0)
    assert np.all(p.v_vals <= v_inf * (1 + 1e-12))
    assert np.all(np.diff(p.v_vals) >= -1e-15)  # V increases
    assert traveling_ode_residual(mp, bp, p).max_rel < 1e-10


@settings(max_examples=30, deadline=None)
@given(
    beta=st.floats(0.02, 2.0),
    tau=st.floats(0.01, 0.2),
    mu=st.floats(0.1, 1.0),
    c=st.floats(0.5, 3.0),
    c0=st.floats(1.01, 10.0),
)
def test_limited_properties(beta, tau, mu, c, c0):
    mp = ModelParams(tau=tau, mu=mu, beta=beta)
    bp = BandParams(c, c0, 1.0, Regime.LIMITED)
    z = np.linspace(-20, 20, 201)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OverflowGuard)
        p = eval_limited(mp, bp, z)
    c4 = validate(mp, bp).c4
    assert np.all(p.u_vals <= c4 * (1 + 1e-14))
    assert np.all(np.diff(p.u_vals) <= 1e-15)  # U decreases
    assert traveling_ode_residual(mp, bp, p).max_rel < 1e-10


def test_ode_oracle_critical_far_tail():
    # ln V reaches about -1e9 at the left end; the oracle must stay accurate and quick
    mp = ModelParams.from_d(1.0, tau=0.08, mu=0.25, k=1.2)
    bp = BandParams(1.6, 3.6, 1.0, Regime.UNLIMITED_CRITICAL)
    z = np.linspace(-20, 20, 401)
    exact = eval_unlimited(mp, bp, z)
    ode = integrate_band_ode(mp, bp, (exact.u_vals[-1], exact.v_vals[-1]), (20.0, -20.0), zeta_eval=z)
    assert np.max(np.abs(ode.u_vals - exact.u_vals)) < 1e-9
    assert np.max(np.abs(ode.v_vals - exact.v_vals)) < 1e-9
