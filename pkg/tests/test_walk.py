import math

import numpy as np
import pytest
from scipy.special import erf

from chemoband.errors import GridMismatch, ValidationError
from chemoband.walk import DriftField, JumpDensity, WalkConfig, compare_density, simulate_walk


def _cfg(**kw):
    base = dict(n_particles=20000, tau_step=0.05, variance=0.25, n_steps=40, hist_range=(-8.0, 8.0), bin_width=0.25)
    base.update(kw)
    return WalkConfig(**base)


def test_moments_match_diffusion():
    cfg = _cfg(record_steps=(10, 20))
    series = simulate_walk(cfg, 0.0, seed=1)
    n = cfg.n_particles
    for steps, m, v in zip((10, 20, 40), series.mean, series.var):
        var = steps * cfg.variance
        assert abs(m) < 3 * math.sqrt(var / n)
        assert abs(v - var) < 3 * var * math.sqrt(2.0 / n)
    np.testing.assert_allclose(series.times, [0.5, 1.0, 2.0])


def test_constant_drift_shifts_mean():
    cfg = _cfg(drift=DriftField.constant(0.05))
    series = simulate_walk(cfg, 0.0, seed=2)
    sd = math.sqrt(40 * 0.25 / cfg.n_particles)
    assert abs(series.mean[-1] - 2.0) < 3 * sd


def test_density_and_particle_count():
    series = simulate_walk(_cfg(hist_range=(-30.0, 30.0)), 0.0, seed=3)
    h = series.final
    assert h.n_in_range == h.n_particles == 20000
    assert float(h.density @ h.widths) == pytest.approx(1.0, rel=1e-12)
    assert len(list(h.rows())) == h.counts.size
    assert np.all(h.stderr >= 0)


def test_skew_vanishes_with_steps():
    x = np.linspace(-1, 3, 401)
    skewed = JumpDensity("tabulated", x, np.exp(-(x + 1)))
    cfg = _cfg(jump=skewed, n_steps=64, record_steps=(1,), hist_range=(-40.0, 40.0))
    series = simulate_walk(cfg, 0.0, seed=4)
    assert abs(series.skew[-1]) < abs(series.skew[0]) / 4


def test_tabulated_density_is_standardized():
    x = np.linspace(-1, 1, 201)
    cfg = _cfg(jump=JumpDensity("tabulated", x, np.ones_like(x)), n_steps=1, n_particles=100000)
    series = simulate_walk(cfg, 0.0, seed=5)
    assert series.mean[-1] == pytest.approx(0.0, abs=3 * math.sqrt(0.25 / 1e5))
    assert series.var[-1] == pytest.approx(0.25, rel=0.02)


def test_thread_count_does_not_change_results():
    cfg = _cfg(chunk_size=4096)
    a = simulate_walk(cfg, 0.0, seed=9, workers=1)
    b = simulate_walk(cfg, 0.0, seed=9, workers=4)
    np.testing.assert_array_equal(a.final.counts, b.final.counts)
    assert a.var[-1] == b.var[-1]
    c = simulate_walk(cfg, 0.0, seed=10, workers=1)
    assert not np.array_equal(a.final.counts, c.final.counts)


def test_heat_kernel_agreement():
    cfg = _cfg(n_particles=50000, hist_range=(-5 * math.sqrt(10), 5 * math.sqrt(10)), bin_width=math.sqrt(10) / 4)
    hist = simulate_walk(cfg, 0.0, seed=6).final
    sd = math.sqrt(10.0)
    x = hist.centers
    dens = np.exp(-x ** 2 / (2 * sd * sd)) / (sd * math.sqrt(2 * math.pi))
    l1, sup = compare_density(hist, x, dens)
    assert l1 < 0.03
    fine = np.linspace(hist.edges[0], hist.edges[-1], 40 * hist.counts.size + 1)
    l1b, _ = compare_density(hist, fine, np.exp(-fine ** 2 / (2 * sd * sd)))
    assert l1b < 0.03
    # bin averages from the exact CDF match the fine-grid trapezoid averages
    cdf = 0.5 * (1 + erf(hist.edges / (sd * math.sqrt(2))))
    assert np.diff(cdf).sum() == pytest.approx(1.0, abs=1e-5)


def test_compare_density_identity_and_mismatch():
    cfg = _cfg(n_particles=1000, n_steps=5)
    hist = simulate_walk(cfg, 0.0, seed=0).final
    assert compare_density(hist, hist.centers, hist.density) == (0.0, 0.0)
    with pytest.raises(GridMismatch):
        compare_density(hist, hist.centers + 0.01, hist.density)
    with pytest.raises(GridMismatch):
        compare_density(hist, hist.centers, hist.density[:-1])


def test_from_log_v_drift():
    x = np.linspace(-5, 5, 101)
    drift = DriftField.from_log_v(0.2, x, -x ** 2 / 4)
    np.testing.assert_allclose(drift(x), -0.1 * x, atol=1e-12)
    assert drift(100.0) == pytest.approx(-0.5)
    with pytest.raises(ValidationError):
        DriftField.from_log_v(0.2, x ** 3, x)


def test_config_validation():
    with pytest.raises(ValidationError):
        _cfg(n_particles=0)
    with pytest.raises(ValidationError):
        _cfg(variance=0.0)
    with pytest.raises(ValidationError):
        _cfg(bin_edges=np.array([0.0, 0.0, 1.0]))
    with pytest.raises(ValidationError):
        JumpDensity("cauchy")
    with pytest.raises(ValidationError):
        simulate_walk(_cfg(), np.zeros(3))
    with pytest.raises(ValidationError):
        simulate_walk(_cfg(n_particles=2), [0.0, math.nan])


def test_zero_steps_is_initial_histogram():
    cfg = _cfg(n_particles=10, n_steps=0)
    series = simulate_walk(cfg, np.linspace(-1, 1, 10))
    assert series.final.t == 0.0
    assert series.final.n_in_range == 10
