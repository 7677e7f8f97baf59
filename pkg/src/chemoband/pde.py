"""Finite-difference time stepping for the chemotaxis system and its linearization.

Nonlinear system on a uniform grid::

    tau_u u_t = (mu/2) u_xx - beta (u (ln v)_x)_x
    v_t       = (D/(2 tau_v)) v_xx - K(u, v),    K = k u  or  k u v

Linearized system about a constant state (u0, v0), with gamma = beta u0/v0::

    tau ubar_t = (mu/2) ubar_xx - gamma vbar_xx
    tau vbar_t = (D/2) vbar_xx + a ubar - d_deg vbar

Diffusion is advanced with a theta scheme (backward Euler by default)
through a tridiagonal solve; chemotaxis and consumption are explicit.
Neumann ends use a mirror ghost node, which conserves the
trapezoid-weighted mass exactly.
"""
from __future__ import annotations

import enum
import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from . import _kernels
from .bands import eval_band
from .errors import (
    ChemobandError,
    LinearSolveFailure,
    NoBandDetected,
    PositivityViolation,
    ValidationError,
)
from .model import BandParams, FieldState, Grid1D, ModelParams, PerturbParams

logger = logging.getLogger(__name__)

#: Relative tolerance (to max|u|) below zero before PositivityViolation.
NEG_TOL = 1e-10


class Scheme(str, enum.Enum):
    SEMI_IMPLICIT = "semi_implicit"
    FULLY_EXPLICIT = "fully_explicit"


class Consumption(str, enum.Enum):
    UNLIMITED = "unlimited"  # k u
    LIMITED = "limited"  # k u v


# -- boundary conditions ---------------------------------------------------------

@dataclass(frozen=True)
class Neumann:
    """Zero-flux end."""


@dataclass(frozen=True)
class Dirichlet:
    """Prescribed end values.

    Either constant ``(u, v)`` values or ``traced``, a callable
    ``t -> (u, v)`` (for instance an analytic band sampled in the moving
    frame).
    """

    u: float = 0.0
    v: float = 0.0
    traced: Optional[Callable[[float], Tuple[float, float]]] = None

    def values(self, t: float) -> Tuple[float, float]:
        if self.traced is not None:
            u, v = self.traced(t)
            return float(u), float(v)
        return self.u, self.v


BoundaryCondition = Union[Neumann, Dirichlet]


def traced_band(mp: ModelParams, bp: BandParams, x_end: float) -> Dirichlet:
    """Dirichlet data following the analytic band at ``zeta = x_end - c t``."""

    def values(t):
        prof = eval_band(mp, bp, [x_end - bp.c * t])
        return prof.u_vals[0], prof.v_vals[0]

    return Dirichlet(traced=values)


# -- configuration ---------------------------------------------------------------

@dataclass(frozen=True)
class SolverConfig:
    """Time-stepping setup.

    ``tau_u`` defaults to ``mp.tau`` and ``tau_v`` to 1 (the traveling-band
    convention); pass ``tau_v=None`` with ``common_tau=True`` to use the
    model's tau for both equations.

    ``imex`` selects the nonlinear semi-implicit scheme: ``"cnab2"``
    (Crank-Nicolson diffusion with second-order Adams-Bashforth explicit
    terms, the default) or ``"euler"`` (theta-weighted diffusion with
    forward-Euler explicit terms).  ``theta`` applies to the ``"euler"``
    variant and to the linearized system (1 is backward Euler).
    ``output_times`` selects snapshots; the initial and final states are
    always kept.
    """

    grid: Grid1D
    dt: float
    t_end: float
    scheme: Scheme = Scheme.SEMI_IMPLICIT
    bc_left: BoundaryCondition = field(default_factory=Neumann)
    bc_right: BoundaryCondition = field(default_factory=Neumann)
    v_floor: float = 1e-12
    tau_u: Optional[float] = None
    tau_v: Optional[float] = 1.0
    common_tau: bool = False
    theta: float = 1.0
    imex: str = "cnab2"
    implicit_coupling: bool = True
    output_times: Optional[Sequence[float]] = None
    record_every: int = 1

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise ValidationError(f"dt must be positive, got {self.dt!r}")
        if not (self.t_end >= 0.0 and math.isfinite(self.t_end)):
            raise ValidationError(f"t_end must be non-negative, got {self.t_end!r}")
        if not self.v_floor > 0.0:
            raise ValidationError(f"v_floor must be positive, got {self.v_floor!r}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValidationError(f"theta must lie in [0, 1], got {self.theta!r}")
        if self.imex not in ("cnab2", "euler"):
            raise ValidationError(f"imex must be 'cnab2' or 'euler', got {self.imex!r}")
        if self.record_every < 1:
            raise ValidationError("record_every must be >= 1")

    def taus(self, mp: ModelParams) -> Tuple[float, float]:
        tau_u = mp.tau if self.tau_u is None else float(self.tau_u)
        if self.common_tau or self.tau_v is None:
            return tau_u, mp.tau
        return tau_u, float(self.tau_v)

    @property
    def theta_eff(self) -> float:
        """Diffusion weight for the linearized system."""
        return 0.0 if self.scheme is Scheme.FULLY_EXPLICIT else self.theta

    @property
    def theta_nonlinear(self) -> float:
        if self.scheme is Scheme.FULLY_EXPLICIT:
            return 0.0
        return 0.5 if self.imex == "cnab2" else self.theta

    def check_explicit(self, mp: ModelParams) -> None:
        if self.scheme is not Scheme.FULLY_EXPLICIT:
            return
        tau_u, tau_v = self.taus(mp)
        rate = max(mp.mu / tau_u, mp.big_d / tau_v)
        limit = self.grid.h ** 2 / rate
        if self.dt > limit:
            raise ValidationError(
                f"explicit scheme needs dt <= {limit:.3e} for h = {self.grid.h:.3e}, got {self.dt:.3e}"
            )


@dataclass
class Trajectory:
    snapshots: List[FieldState]
    diagnostics: List[dict]
    meta: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])


# -- implicit diffusion helpers -----------------------------------------------------

def _neumann_flags(cfg):
    return isinstance(cfg.bc_left, Neumann), isinstance(cfg.bc_right, Neumann)


def _diffusion_solve(f_old, coef, h, theta, dt_over_tau, nl, nr, left_val, right_val, extra_rhs):
    """Advance ``f_t = coef f_xx + extra`` (times already divided by tau) one step.

    ``extra_rhs`` is added explicitly.  Dirichlet values are imposed at
    the new time level.
    """
    n = f_old.size
    rhs = f_old + dt_over_tau * extra_rhs
    if theta < 1.0 and coef != 0.0:
        rhs = rhs + (1.0 - theta) * dt_over_tau * coef * _kernels.laplacian(f_old, h, nl, nr)
    if not nl:
        rhs[0] = left_val
    if not nr:
        rhs[-1] = right_val
    if theta == 0.0 or coef == 0.0:
        return rhs

    r = theta * dt_over_tau * coef / (h * h)
    lower = np.full(n, -r)
    upper = np.full(n, -r)
    diag = np.full(n, 1.0 + 2.0 * r)
    if nl:
        upper[0] = -2.0 * r
    else:
        diag[0], upper[0] = 1.0, 0.0
    if nr:
        lower[-1] = -2.0 * r
    else:
        diag[-1], lower[-1] = 1.0, 0.0
    try:
        out = _kernels.thomas(lower, diag, upper, rhs)
    except (ZeroDivisionError, np.linalg.LinAlgError) as exc:  # pragma: no cover - SPD system
        raise LinearSolveFailure(f"tridiagonal solve failed: {exc}") from exc
    if not np.all(np.isfinite(out)):
        raise LinearSolveFailure("tridiagonal solve produced non-finite values")
    return out


# -- nonlinear step -------------------------------------------------------------------

def _step_nonlinear(state, mp, consumption, cfg, prev=None):
    """One step; returns ``(state, n_clamped, explicit_terms)``.

    ``prev`` holds the explicit terms of the previous step, enabling the
    Adams-Bashforth extrapolation of the ``"cnab2"`` scheme.
    """
    consumption = Consumption(consumption)
    grid = state.grid
    h = grid.h
    dt = cfg.dt
    tau_u, tau_v = cfg.taus(mp)
    theta = cfg.theta_nonlinear
    nl, nr = _neumann_flags(cfg)
    u, v = state.u, state.v
    if np.any(v < cfg.v_floor):
        raise PositivityViolation(
            f"v below v_floor = {cfg.v_floor:g} at t = {state.t:g} (min v = {v.min():.3e})"
        )
    t_new = state.t + dt
    ul, vl = cfg.bc_left.values(t_new) if not nl else (0.0, 0.0)
    ur, vr = cfg.bc_right.values(t_new) if not nr else (0.0, 0.0)

    chemo = np.zeros_like(u)
    if mp.beta != 0.0:
        chemo = mp.beta * _kernels.chemotaxis_div(u, np.log(v), h, nl, nr)
    sink = mp.k * u
    if consumption is Consumption.LIMITED:
        sink = sink * v
    terms = (-chemo, -tau_v * sink)
    ex_u, ex_v = terms
    if prev is not None and cfg.imex == "cnab2" and cfg.scheme is Scheme.SEMI_IMPLICIT:
        ex_u = 1.5 * ex_u - 0.5 * prev[0]
        ex_v = 1.5 * ex_v - 0.5 * prev[1]
    u_new = _diffusion_solve(u, 0.5 * mp.mu, h, theta, dt / tau_u, nl, nr, ul, ur, ex_u)
    v_new = _diffusion_solve(v, 0.5 * mp.big_d, h, theta, dt / tau_v, nl, nr, vl, vr, ex_v)

    umax = float(np.max(np.abs(u_new))) if u_new.size else 0.0
    if np.min(u_new) < -NEG_TOL * max(umax, 1e-300):
        raise PositivityViolation(f"u went negative at t = {t_new:g} (min u = {u_new.min():.3e})")
    low = v_new < cfg.v_floor
    n_clamped = int(low.sum())
    if n_clamped:
        v_new[low] = cfg.v_floor
        logger.debug("clamped v at %d node(s) at t = %g", n_clamped, t_new)
    return FieldState(grid, u_new, v_new, t_new), n_clamped, terms


def step_nonlinear(state: FieldState, mp: ModelParams, consumption, cfg: SolverConfig) -> FieldState:
    """Advance the nonlinear system by one step of ``cfg.dt``.

    A lone step has no history, so the explicit terms are forward Euler
    whatever ``cfg.imex`` says; :func:`run` carries the history.

    Raises
    ------
    PositivityViolation
        ``v`` starts below ``cfg.v_floor`` or ``u`` turns negative.
    LinearSolveFailure
        The tridiagonal solve failed.
    """
    cfg.check_explicit(mp)
    new, n_clamped, _ = _step_nonlinear(state, mp, consumption, cfg)
    if n_clamped:
        logger.info("v clamped at %d node(s)", n_clamped)
    return new


# -- linearized step ------------------------------------------------------------------

def _lap_matrix(n, h):
    """Second difference on unknowns x_1..x_N with 0 at x_0 and a mirror at x_N."""
    main = np.full(n, -2.0)
    off = np.ones(n - 1)
    lap = sparse.diags([off, main, off], [-1, 0, 1], format="lil")
    lap[n - 1, n - 2] = 2.0
    return lap.tocsc() / (h * h)


@functools.lru_cache(maxsize=16)
def _linear_operators(n, h, tau, mu, big_d, gamma, a, d_deg, dt, theta, implicit_coupling):
    lap = _lap_matrix(n, h)
    eye = sparse.identity(n, format="csc")
    a_uu = 0.5 * mu * lap
    a_vv = 0.5 * big_d * lap - d_deg * eye
    if implicit_coupling:
        a_uv = -gamma * lap
        a_vu = a * eye
        op = sparse.bmat([[a_uu, a_uv], [a_vu, a_vv]], format="csc") / tau
        lhs = sparse.identity(2 * n, format="csc") - theta * dt * op
        try:
            lu = splu(lhs.tocsc())
        except RuntimeError as exc:
            raise LinearSolveFailure(f"sparse factorization failed: {exc}") from exc
        return op, lu, None
    lu_u = splu((eye - theta * dt * a_uu / tau).tocsc())
    lu_v = splu((eye - theta * dt * a_vv / tau).tocsc())
    return (a_uu / tau, a_vv / tau, -gamma * lap / tau, a * eye / tau), lu_u, lu_v


def _check_linear_bcs(cfg):
    left, right = cfg.bc_left, cfg.bc_right
    ok = (
        isinstance(left, Dirichlet)
        and left.traced is None
        and left.u == 0.0
        and left.v == 0.0
        and isinstance(right, Neumann)
    )
    if not ok:
        raise ValidationError("linearized problem needs zero Dirichlet at x0 and Neumann at x1")


def step_linearized(state: FieldState, mp: ModelParams, pp: PerturbParams, cfg: SolverConfig) -> FieldState:
    """Advance the linearized perturbation system by one step.

    The coupling terms ``-gamma vbar_xx`` and ``a ubar`` are implicit
    (one sparse block solve) when ``cfg.implicit_coupling`` is set and
    explicit otherwise.  Node 0 carries the zero Dirichlet value.
    """
    _check_linear_bcs(cfg)
    grid = state.grid
    n = grid.n - 1
    h = grid.h
    dt = cfg.dt
    theta = cfg.theta_eff
    tau = mp.tau
    gamma = mp.beta * pp.u0 / pp.v0
    key = (n, h, tau, mp.mu, mp.big_d, gamma, pp.a, pp.d_deg, dt, theta, cfg.implicit_coupling)
    op, lu, lu_v = _linear_operators(*key)
    u = state.u[1:]
    v = state.v[1:]

    if cfg.implicit_coupling:
        y = np.concatenate([u, v])
        rhs = y + (1.0 - theta) * dt * (op @ y) if theta < 1.0 else y
        y_new = lu.solve(rhs)
        u_new, v_new = y_new[:n], y_new[n:]
    else:
        a_uu, a_vv, a_uv, a_vu = op
        rhs_u = u + dt * (a_uv @ v) + (1.0 - theta) * dt * (a_uu @ u)
        rhs_v = v + dt * (a_vu @ u) + (1.0 - theta) * dt * (a_vv @ v)
        u_new = lu.solve(rhs_u)
        v_new = lu_v.solve(rhs_v)
    if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(v_new))):
        raise LinearSolveFailure(f"linearized step produced non-finite values at t = {state.t + dt:g}")
    zero = np.zeros(1)
    return FieldState(grid, np.concatenate([zero, u_new]), np.concatenate([zero, v_new]), state.t + dt)


# -- orchestration ----------------------------------------------------------------------

InitialSpec = Union[FieldState, Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]]


def _initial_state(cfg, initial):
    if isinstance(initial, FieldState):
        if initial.grid != cfg.grid:
            raise ValidationError("initial state grid differs from the solver grid")
        return initial
    if callable(initial):
        u, v = initial(cfg.grid.x)
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValidationError("initial condition contains non-finite values")
        return FieldState(cfg.grid, u, v, 0.0)
    raise ValidationError(f"unsupported initial condition {type(initial).__name__}")


def _diagnostics(state, n_clamped):
    w = state.grid.trapezoid_weights()
    return {
        "t": state.t,
        "mass_u": float(w @ state.u),
        "min_u": float(state.u.min()),
        "max_u": float(state.u.max()),
        "min_v": float(state.v.min()),
        "max_v": float(state.v.max()),
        "l2_u": math.sqrt(float(w @ state.u ** 2)),
        "l2_v": math.sqrt(float(w @ state.v ** 2)),
        "n_clamped": n_clamped,
    }


def run(
    cfg: SolverConfig,
    initial: InitialSpec,
    mp: ModelParams,
    consumption=Consumption.UNLIMITED,
    pp: Optional[PerturbParams] = None,
) -> Trajectory:
    """Integrate from ``initial`` to ``cfg.t_end``.

    Runs the linearized system when ``pp`` is given and the nonlinear one
    otherwise.  The step count is ``ceil(t_end/dt)`` with ``dt`` shrunk so
    the last step lands on ``t_end``.  For the nonlinear system, initial
    ``v`` below ``cfg.v_floor`` is clamped and counted.  Step errors are re-raised with the
    failing time attached as ``exc.t``.
    """
    state = _initial_state(cfg, initial)
    cfg.check_explicit(mp)
    n_clamped0 = 0
    if pp is None:
        low = state.v < cfg.v_floor
        n_clamped0 = int(low.sum())
        if n_clamped0:
            logger.info("initial v clamped at %d node(s)", n_clamped0)
            state = state.replace(v=np.where(low, cfg.v_floor, state.v))
    n_steps = int(math.ceil(cfg.t_end / cfg.dt - 1e-9)) if cfg.t_end > 0 else 0
    if n_steps:
        cfg = _replace_dt(cfg, cfg.t_end / n_steps)
    save_steps = {n_steps}
    for t_out in (() if cfg.output_times is None else cfg.output_times):
        if 0.0 < t_out <= cfg.t_end:
            save_steps.add(int(round(t_out / cfg.dt)))

    snapshots = [state]
    diagnostics = [_diagnostics(state, n_clamped0)]
    prev = None
    for i in range(1, n_steps + 1):
        try:
            if pp is not None:
                state, n_clamped = step_linearized(state, mp, pp, cfg), 0
            else:
                state, n_clamped, prev = _step_nonlinear(state, mp, consumption, cfg, prev)
        except ChemobandError as exc:
            exc.t = state.t + cfg.dt
            exc.args = (f"{exc.args[0] if exc.args else exc} (step to t = {exc.t:g})",) + exc.args[1:]
            raise
        if i % cfg.record_every == 0 or i == n_steps or n_clamped:
            diagnostics.append(_diagnostics(state, n_clamped))
        if i in save_steps:
            snapshots.append(state)
    total_clamped = sum(d["n_clamped"] for d in diagnostics)
    if total_clamped:
        logger.info("v clamped %d time(s) during run", total_clamped)
    return Trajectory(snapshots, diagnostics, meta={"n_steps": n_steps, "dt": cfg.dt})


def _replace_dt(cfg, dt):
    from dataclasses import replace

    return replace(cfg, dt=dt)


# -- wave speed -------------------------------------------------------------------------------

def _peak_position(x, u):
    i = int(np.argmax(u))
    if i == 0 or i == u.size - 1:
        return None
    y0, y1, y2 = u[i - 1], u[i], u[i + 1]
    denom = y0 - 2.0 * y1 + y2
    shift = 0.5 * (y0 - y2) / denom if denom != 0.0 else 0.0
    return x[i] + shift * (x[1] - x[0])


def _level_crossing(x, u, level):
    above = u >= level
    idx = np.nonzero(above[:-1] != above[1:])[0]
    if idx.size != 1:
        return None
    i = int(idx[0])
    w = (level - u[i]) / (u[i + 1] - u[i])
    return x[i] + w * (x[i + 1] - x[i])


def measure_wave_speed(traj: Trajectory, method: str = "auto") -> float:
    """Least-squares speed of the band from its snapshots.

    ``method="peak"`` tracks the argmax of ``u`` with parabolic refinement.
    ``"level"`` tracks the single crossing of the mid level between the
    first snapshot's min and max, which suits monotone fronts.  ``"auto"``
    uses the peak when it is interior in every snapshot and the level
    crossing otherwise.

    Raises
    ------
    NoBandDetected
        No interior peak and no unique level crossing (e.g. constant ``u``).
    """
    snaps = traj.snapshots
    if len(snaps) < 3:
        raise ValidationError(f"need at least 3 snapshots, got {len(snaps)}")
    times = np.array([s.t for s in snaps])
    first = snaps[0].u
    spread = float(first.max() - first.min())
    if not spread > 1e-12 * max(abs(float(first.max())), 1e-300):
        raise NoBandDetected("u is flat; no band to track")

    positions = None
    if method in ("auto", "peak"):
        peaks = [_peak_position(s.grid.x, s.u) for s in snaps]
        if all(p is not None for p in peaks):
            positions = peaks
        elif method == "peak":
            raise NoBandDetected("maximum of u lies on the boundary")
    if positions is None:
        if method not in ("auto", "level"):
            raise ValidationError(f"unknown method {method!r}")
        level = float(first.min()) + 0.5 * spread
        positions = [_level_crossing(s.grid.x, s.u, level) for s in snaps]
        if any(p is None for p in positions):
            raise NoBandDetected("no unique mid-level crossing in some snapshot")
    slope, _ = np.polyfit(times, np.asarray(positions, dtype=float), 1)
    return float(slope)
