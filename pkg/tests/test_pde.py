import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chemoband.bands import eval_limited
from chemoband.errors import NoBandDetected, PositivityViolation, ValidationError
from chemoband.model import FieldState, Grid1D, ModelParams, PerturbParams
from chemoband.pde import (
    Consumption,
    Dirichlet,
    Neumann,
    Scheme,
    SolverConfig,
    Trajectory,
    measure_wave_speed,
    run,
    step_linearized,
    step_nonlinear,
    traced_band,
)
from chemoband.stability import dispersion_relation, eigen_lambda, eigenvector


def _limited_ic(mp, bp):
    def ic(x):
        p = eval_limited(mp, bp, x)
        return p.u_vals, p.v_vals

    return ic


def test_constants_are_steady():
    mp = ModelParams(tau=0.05, mu=0.25, beta=0.3, k=0.0)
    g = Grid1D(0.0, 1.0, 101)
    s = FieldState(g, np.full(101, 2.0), np.full(101, 3.0))
    cfg = SolverConfig(g, dt=1e-3, t_end=1.0)
    new = step_nonlinear(s, mp, Consumption.UNLIMITED, cfg)
    np.testing.assert_allclose(new.u, 2.0, atol=1e-13, rtol=0)
    np.testing.assert_allclose(new.v, 3.0, atol=1e-13, rtol=0)


@pytest.mark.parametrize("imex,theta,dt", [("cnab2", 1.0, 1e-4), ("euler", 1.0, 1e-5)])
def test_heat_kernel(imex, theta, dt):
    # flat v removes chemotaxis; u spreads with diffusivity mu/(2 tau)
    mp = ModelParams(tau=0.05, mu=0.25, beta=0.7, k=0.0)
    g = Grid1D.from_spacing(-6.0, 6.0, 1.0 / 400)
    s0 = 0.1
    cfg = SolverConfig(g, dt=dt, t_end=0.1, imex=imex, theta=theta)
    traj = run(cfg, lambda x: (np.exp(-x ** 2 / (2 * s0 ** 2)), np.full_like(x, 2.0)), mp)
    var = s0 ** 2 + 2 * (mp.mu / (2 * mp.tau)) * 0.1
    exact = s0 / math.sqrt(var) * np.exp(-g.x ** 2 / (2 * var))
    assert np.max(np.abs(traj.snapshots[-1].u - exact)) < 1e-3


def test_moving_limited_band(limited):
    mp, bp = limited
    g = Grid1D.from_spacing(-15.0, 15.0, 1.0 / 200)
    cfg = SolverConfig(
        g, dt=1e-4, t_end=1.0,
        bc_left=traced_band(mp, bp, g.x0), bc_right=traced_band(mp, bp, g.x1),
        output_times=np.linspace(0.1, 1.0, 10),
    )
    traj = run(cfg, _limited_ic(mp, bp), mp, Consumption.LIMITED)
    w = g.trapezoid_weights()
    exact = eval_limited(mp, bp, g.x - bp.c * 1.0).u_vals
    err = math.sqrt(w @ (traj.snapshots[-1].u - exact) ** 2)
    assert err <= 2e-3 * math.sqrt(w @ exact ** 2)
    assert measure_wave_speed(traj) == pytest.approx(bp.c, rel=2e-2)


def test_mass_conservation_pure_diffusion():
    mp = ModelParams(tau=0.05, mu=0.25, beta=0.0, k=0.0)
    g = Grid1D(0.0, 1.0, 201)
    u = 1.0 + np.cos(3 * g.x) ** 2
    s = FieldState(g, u, np.ones_like(u))
    cfg = SolverConfig(g, dt=1e-3, t_end=1.0)
    w = g.trapezoid_weights()
    m0 = w @ s.u
    for _ in range(20):
        s = step_nonlinear(s, mp, Consumption.UNLIMITED, cfg)
        assert abs(w @ s.u - m0) < 1e-12 * m0


def test_mass_conservation_with_chemotaxis():
    mp = ModelParams(tau=0.05, mu=0.25, beta=0.3, k=0.0)
    g = Grid1D(0.0, 1.0, 201)
    s = FieldState(g, 1.0 + np.sin(2 * g.x), np.exp(-(g.x - 0.4) ** 2))
    cfg = SolverConfig(g, dt=1e-3, t_end=1.0)
    w = g.trapezoid_weights()
    m0 = w @ s.u
    traj = run(cfg, s, mp)
    assert abs(traj.diagnostics[-1]["mass_u"] - m0) < 1e-11 * m0


def test_comparison_principle():
    mp = ModelParams(tau=0.05, mu=0.25, beta=0.0, k=0.0)
    g = Grid1D(0.0, 1.0, 101)
    rng = np.random.default_rng(1)
    s = FieldState(g, rng.random(101), np.ones(101))
    # backward Euler diffusion is an M-matrix solve; Crank-Nicolson is not monotone at this dt/h^2
    cfg = SolverConfig(g, dt=1e-3, t_end=1.0, imex="euler", theta=1.0)
    for _ in range(10):
        new = step_nonlinear(s, mp, Consumption.UNLIMITED, cfg)
        assert new.u.min() >= s.u.min() - 1e-15
        assert new.u.max() <= s.u.max() + 1e-15
        s = new


def test_explicit_guard():
    mp = ModelParams(tau=0.05, mu=0.25, beta=0.0, k=0.0)
    g = Grid1D(0.0, 1.0, 101)
    s = FieldState(g, np.ones(101), np.ones(101))
    bad = SolverConfig(g, dt=1e-3, t_end=1.0, scheme=Scheme.FULLY_EXPLICIT)
    with pytest.raises(ValidationError):
        step_nonlinear(s, mp, Consumption.UNLIMITED, bad)
    ok = SolverConfig(g, dt=0.9 * g.h ** 2 * mp.tau / mp.mu, t_end=1.0, scheme=Scheme.FULLY_EXPLICIT)
    step_nonlinear(s, mp, Consumption.UNLIMITED, ok)


def test_explicit_matches_semi_implicit():
    mp = ModelParams(tau=0.05, mu=0.25, beta=0.2, k=0.5)
    g = Grid1D(0.0, 1.0, 51)
    ic = (1.0 + 0.5 * np.cos(np.pi * g.x), 1.0 + 0.3 * g.x)
    dt = 0.5 * g.h ** 2 * mp.tau / mp.mu
    a = run(SolverConfig(g, dt=dt, t_end=0.05, scheme="fully_explicit"), lambda x: ic, mp).snapshots[-1]
    b = run(SolverConfig(g, dt=dt, t_end=0.05), lambda x: ic, mp).snapshots[-1]
    # the explicit scheme is first order in time
    assert np.max(np.abs(a.u - b.u)) < 1e-3


def test_v_floor_clamp_and_precondition():
    mp = ModelParams(tau=0.05, mu=0.25, beta=0.0, k=50.0)
    g = Grid1D(0.0, 1.0, 11)
    cfg = SolverConfig(g, dt=0.1, t_end=1.0, v_floor=1e-6)
    traj = run(cfg, lambda x: (np.ones_like(x), np.full_like(x, 1.0)), mp)
    assert traj.snapshots[-1].v.min() == pytest.approx(1e-6)
    assert sum(d["n_clamped"] for d in traj.diagnostics) > 0
    s = FieldState(g, np.ones(11), np.zeros(11))
    with pytest.raises(PositivityViolation):
        step_nonlinear(s, mp, Consumption.UNLIMITED, cfg)


def test_run_t_end_zero_and_nan():
    mp = ModelParams(tau=0.05, mu=0.25, beta=0.1)
    g = Grid1D(0.0, 1.0, 11)
    cfg = SolverConfig(g, dt=0.01, t_end=0.0)
    traj = run(cfg, lambda x: (np.ones_like(x), np.ones_like(x)), mp)
    assert len(traj.snapshots) == 1 and traj.snapshots[0].t == 0.0
    with pytest.raises(ValidationError):
        run(cfg, lambda x: (np.full_like(x, np.nan), np.ones_like(x)), mp)


def test_run_errors_carry_time():
    mp = ModelParams(tau=0.05, mu=0.25, beta=0.0)
    g = Grid1D(0.0, 1.0, 11)
    cfg = SolverConfig(g, dt=0.01, t_end=0.1)
    state = FieldState(g, -np.ones(11), np.ones(11))
    with pytest.raises(PositivityViolation) as info:
        run(cfg, state, mp)
    assert info.value.t == pytest.approx(0.01)


def test_snapshot_times_increase(limited):
    mp, bp = limited
    g = Grid1D(-5.0, 5.0, 101)
    cfg = SolverConfig(g, dt=0.01, t_end=0.1, output_times=[0.05, 0.02, 0.08],
                       bc_left=traced_band(mp, bp, -5.0), bc_right=traced_band(mp, bp, 5.0))
    traj = run(cfg, _limited_ic(mp, bp), mp, Consumption.LIMITED)
    np.testing.assert_allclose(traj.times, [0.0, 0.02, 0.05, 0.08, 0.1])


def test_richardson_self_convergence(limited):
    mp, bp = limited
    finals = []
    for n in (50, 100, 200):
        g = Grid1D.from_spacing(-10.0, 10.0, 1.0 / n)
        cfg = SolverConfig(g, dt=0.25 / n, t_end=0.5,
                           bc_left=traced_band(mp, bp, g.x0), bc_right=traced_band(mp, bp, g.x1))
        finals.append(run(cfg, _limited_ic(mp, bp), mp, Consumption.LIMITED).snapshots[-1].u[:: n // 50])
    e1 = np.linalg.norm(finals[0] - finals[1])
    e2 = np.linalg.norm(finals[1] - finals[2])
    assert math.log2(e1 / e2) >= 1.0


def test_traveling_frame_one_step(limited):
    mp, bp = limited
    errs = []
    for n in (100, 200):
        g = Grid1D.from_spacing(-10.0, 10.0, 1.0 / n)
        dt = 0.25 / n
        cfg = SolverConfig(g, dt=dt, t_end=dt, bc_left=traced_band(mp, bp, g.x0), bc_right=traced_band(mp, bp, g.x1))
        s = FieldState(g, *_limited_ic(mp, bp)(g.x))
        new = step_nonlinear(s, mp, Consumption.LIMITED, cfg)
        exact = eval_limited(mp, bp, g.x - bp.c * dt).u_vals
        errs.append(np.max(np.abs(new.u - exact)))
    # local error shrinks at least linearly with h (dt proportional to h)
    assert errs[1] < 0.6 * errs[0]


# -- linearized -----------------------------------------------------------------

def _lin_cfg(n=400, t_end=0.5, **kw):
    g = Grid1D(0.0, 1.0, n + 1)
    return SolverConfig(g, dt=0.25 / n, t_end=t_end, bc_left=Dirichlet(), bc_right=Neumann(), **kw)


MP_LIN = ModelParams(tau=0.05, mu=0.25, beta=0.25, big_d=0.1)


def test_linearized_zero_stays_zero():
    cfg = _lin_cfg(50)
    s = FieldState(cfg.grid, np.zeros(51), np.zeros(51))
    new = step_linearized(s, MP_LIN, PerturbParams(1, 1, 0.2, 0.5, 1), cfg)
    assert not np.any(new.u) and not np.any(new.v)


def test_linearized_requires_bcs():
    g = Grid1D(0.0, 1.0, 11)
    cfg = SolverConfig(g, dt=0.01, t_end=0.1)
    s = FieldState(g, np.zeros(11), np.zeros(11))
    with pytest.raises(ValidationError):
        step_linearized(s, MP_LIN, PerturbParams(1, 1, 0.2, 0.5, 1), cfg)


@pytest.mark.parametrize("a", [0.2, 0.5])
@pytest.mark.parametrize("coupling", [True, False])
def test_eigenmode_growth(a, coupling):
    pp = PerturbParams(1, 1, a, 0.5, 1)
    lam = eigen_lambda(0, 1.0)
    sigma = dispersion_relation(MP_LIN, pp, lam).sigma2.real
    us, vs = eigenvector(MP_LIN, pp, lam, sigma)
    cfg = _lin_cfg(output_times=np.linspace(0, 0.5, 26)[1:], implicit_coupling=coupling)
    traj = run(cfg, lambda x: (us * np.sin(lam * x), vs * np.sin(lam * x)), MP_LIN, pp=pp)
    norms = [math.sqrt(s.grid.trapezoid_weights() @ s.u ** 2) for s in traj.snapshots]
    rate = np.polyfit(traj.times, np.log(norms), 1)[0]
    assert rate == pytest.approx(sigma, rel=2e-2)


def test_zero_production_decays():
    pp = PerturbParams(1, 1, 1e-12, 0.5, 1)
    cfg = _lin_cfg(100, t_end=0.5)
    traj = run(cfg, lambda x: (np.sin(np.pi * x / 2), np.sin(np.pi * x / 2)), MP_LIN, pp=pp)
    assert traj.diagnostics[-1]["l2_u"] < traj.diagnostics[0]["l2_u"]


@settings(max_examples=15, deadline=None)
@given(alpha=st.sampled_from([-1.0, 2.0, 10.0]), seed=st.integers(0, 2 ** 16))
def test_linearized_is_linear(alpha, seed):
    rng = np.random.default_rng(seed)
    cfg = _lin_cfg(40)
    u = np.concatenate([[0.0], rng.standard_normal(40)])
    v = np.concatenate([[0.0], rng.standard_normal(40)])
    pp = PerturbParams(1, 1, 0.3, 0.5, 1)
    a = step_linearized(FieldState(cfg.grid, alpha * u, alpha * v), MP_LIN, pp, cfg)
    b = step_linearized(FieldState(cfg.grid, u, v), MP_LIN, pp, cfg)
    np.testing.assert_allclose(a.u, alpha * b.u, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(a.v, alpha * b.v, rtol=1e-12, atol=1e-12)


# -- wave speed ------------------------------------------------------------------

def test_wave_speed_constructed(limited):
    mp, bp = limited
    g = Grid1D(-15.0, 15.0, 601)
    snaps = [FieldState(g, *_limited_ic(mp, bp)(g.x - bp.c * t), t) for t in np.linspace(0, 2, 5)]
    assert measure_wave_speed(Trajectory(snaps, [])) == pytest.approx(bp.c, rel=1e-3)


def test_wave_speed_peak(table1):
    from chemoband.bands import eval_unlimited

    mp, bp = table1
    g = Grid1D(-20.0, 30.0, 1001)
    snaps = []
    for t in np.linspace(0, 2, 5):
        p = eval_unlimited(mp, bp, g.x - bp.c * t)
        snaps.append(FieldState(g, p.u_vals, p.v_vals, t))
    assert measure_wave_speed(Trajectory(snaps, []), method="peak") == pytest.approx(bp.c, rel=1e-3)


def test_wave_speed_flat():
    g = Grid1D(0.0, 1.0, 11)
    snaps = [FieldState(g, np.ones(11), np.ones(11), t) for t in (0.0, 1.0, 2.0)]
    with pytest.raises(NoBandDetected):
        measure_wave_speed(Trajectory(snaps, []))


def test_wave_speed_needs_three_snapshots():
    g = Grid1D(0.0, 1.0, 11)
    with pytest.raises(ValidationError):
        measure_wave_speed(Trajectory([FieldState(g, np.ones(11), np.ones(11))], []))
