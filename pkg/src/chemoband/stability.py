"""Linear stability of a constant bacteria/substrate state.

Eigenmodes ``sin(lambda x)`` of the linearized system (zero value at 0,
zero slope at L) grow like ``exp(sigma t)`` where sigma solves
``sigma^2 + b sigma + c_coef = 0``.  The sign of ``c_coef`` decides
stability.  The energy method gives explicit decay constants when the
chemotactic coupling and substrate production are both weak.
"""
from __future__ import annotations

import cmath
import enum
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import NonPositiveTraceValue, ValidationError
from .model import FieldState, ModelParams, PerturbParams

#: |c_coef| at or below this fraction of its largest term counts as zero.
MARGINAL_RTOL = 1e-12


class Stability(str, enum.Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    MARGINAL = "marginal"


def eigen_lambda(n: int, ell: float, full_family: bool = False) -> float:
    """Wavenumber of mode ``n``.

    The default family is ``(2 pi n + pi/2)/L``.  ``full_family`` returns
    ``(n + 1/2) pi / L`` instead, which also includes the modes the
    default family skips; both satisfy ``sin(0) = 0`` and ``cos(lambda L) = 0``.
    """
    if int(n) != n or n < 0:
        raise ValidationError(f"mode index must be a non-negative integer, got {n!r}")
    if not ell > 0.0:
        raise ValidationError(f"domain length must be positive, got {ell!r}")
    if full_family:
        return (n + 0.5) * math.pi / ell
    return (2.0 * math.pi * n + 0.5 * math.pi) / ell


@dataclass(frozen=True)
class DispersionResult:
    n: Optional[int]
    lam: float
    b: float
    c_coef: float
    sigma1: complex
    sigma2: complex
    stability: Stability

    @property
    def growth_rate(self) -> float:
        """Largest real part of the two roots."""
        return max(self.sigma1.real, self.sigma2.real)

    def row(self) -> dict:
        return {
            "n": self.n,
            "lambda": self.lam,
            "b": self.b,
            "c_coef": self.c_coef,
            "re_sigma1": self.sigma1.real,
            "re_sigma2": self.sigma2.real,
            "class": self.stability.value,
        }


def _coefficients(mp, pp, lam):
    lam2 = lam * lam
    tau = mp.tau
    b = (0.5 * (mp.big_d + mp.mu) * lam2 + pp.d_deg) / tau
    terms = (
        0.25 * mp.mu * mp.big_d * lam2,
        0.5 * mp.mu * pp.d_deg,
        -pp.a * mp.beta * pp.u0 / pp.v0,
    )
    scale = lam2 / (tau * tau)
    c_coef = scale * math.fsum(terms)
    c_scale = scale * max(abs(t) for t in terms)
    return b, c_coef, c_scale


def dispersion_relation(mp: ModelParams, pp: PerturbParams, lam: float, n: Optional[int] = None) -> DispersionResult:
    """Growth rates of the eigenmode with wavenumber ``lam``.

    Roots are ``(-b -+ sqrt(b^2 - 4 c_coef))/2``.  The second root is
    formed as ``c_coef/sigma1`` to avoid cancellation.  Complex roots are
    kept; classification uses real parts.
    """
    if not lam > 0.0:
        raise ValidationError(f"wavenumber must be positive, got {lam!r}")
    b, c_coef, c_scale = _coefficients(mp, pp, lam)
    if abs(c_coef) <= MARGINAL_RTOL * c_scale:
        return DispersionResult(n, lam, b, 0.0, complex(-b), 0j, Stability.MARGINAL)

    disc = b * b - 4.0 * c_coef
    root = cmath.sqrt(disc) if disc < 0.0 else complex(math.sqrt(disc))
    sigma1 = 0.5 * (-b - root)
    sigma2 = c_coef / sigma1
    if disc >= 0.0:
        sigma1, sigma2 = complex(sigma1.real), complex(sigma2.real)
    stability = Stability.STABLE if c_coef > 0.0 else Stability.UNSTABLE
    return DispersionResult(n, lam, b, c_coef, sigma1, sigma2, stability)


def dispersion_sweep(mp: ModelParams, pp: PerturbParams, modes: Sequence[int], full_family: bool = False):
    return [dispersion_relation(mp, pp, eigen_lambda(n, pp.ell, full_family), n=n) for n in modes]


def instability_threshold(mp: ModelParams, pp: PerturbParams, n: int = 0, full_family: bool = False) -> float:
    """Production rate ``a*`` above which mode ``n`` grows.

    ``a* = (v0/(2 u0)) (mu/beta) (D lambda^2/2 + d_deg)``; it makes
    ``c_coef`` vanish.
    """
    if not mp.beta > 0.0:
        raise ValidationError("threshold needs beta > 0")
    lam = eigen_lambda(n, pp.ell, full_family)
    return pp.v0 / (2.0 * pp.u0) * (mp.mu / mp.beta) * (0.5 * mp.big_d * lam * lam + pp.d_deg)


def eigenvector(mp: ModelParams, pp: PerturbParams, lam: float, sigma: float) -> Tuple[float, float]:
    """Amplitudes ``(u*, v*)`` of the eigenmode for root ``sigma``."""
    gamma = mp.beta * pp.u0 / pp.v0
    return gamma * lam * lam, mp.tau * sigma + 0.5 * mp.mu * lam * lam


# -- energy method -----------------------------------------------------------------

@dataclass(frozen=True)
class EnergyCertificate:
    """Sufficient conditions for decay and the rates they imply.

    ``rate_l2`` (A) and ``rate_h1`` (B) are set only when both conditions
    hold.  ``sup_bound_coeff`` is ``2 sqrt(L)``: the sup norm stays below
    ``2 sqrt(L) sqrt(I_H1(0)) exp(-B t/2)``.
    """

    cond_56_holds: bool
    cond_57_holds: bool
    c_p: float
    rate_l2: Optional[float]
    rate_h1: Optional[float]
    sup_bound_coeff: float
    unstable_mode0: bool
    consistent: bool

    @property
    def holds(self) -> bool:
        return self.cond_56_holds and self.cond_57_holds

    def to_dict(self) -> dict:
        return asdict(self)


def energy_certificate(mp: ModelParams, pp: PerturbParams) -> EnergyCertificate:
    """Evaluate the energy-method hypotheses.

    Coupling: ``2 u0 beta / v0 <= mu`` and ``<= D``.  Production:
    ``4 a <= C_p mu`` and ``4 a <= C_p D + d_deg`` with ``C_p = 2/L^2``.
    Then ``A = min(C_p mu/4, C_p D/4 + 7 d_deg/4)/tau`` and ``B = a/tau``.
    ``consistent`` is False if the mode-0 instability condition also
    holds, which would contradict the certificate.
    """
    c_p = 2.0 / (pp.ell * pp.ell)
    coupling = 2.0 * pp.u0 * mp.beta / pp.v0
    cond56 = coupling <= mp.mu and coupling <= mp.big_d
    cond57 = 4.0 * pp.a <= c_p * mp.mu and 4.0 * pp.a <= c_p * mp.big_d + pp.d_deg
    rate_l2 = rate_h1 = None
    if cond56 and cond57:
        rate_l2 = min(0.25 * c_p * mp.mu, 0.25 * c_p * mp.big_d + 1.75 * pp.d_deg) / mp.tau
        rate_h1 = pp.a / mp.tau
    unstable = mp.beta > 0.0 and pp.a > instability_threshold(mp, pp, 0)
    return EnergyCertificate(
        cond_56_holds=cond56,
        cond_57_holds=cond57,
        c_p=c_p,
        rate_l2=rate_l2,
        rate_h1=rate_h1,
        sup_bound_coeff=2.0 * math.sqrt(pp.ell),
        unstable_mode0=unstable,
        consistent=not (unstable and cond56 and cond57),
    )


def energy_norms(state: FieldState) -> Tuple[float, float, float]:
    """``(int u^2 + v^2, int u_x^2 + v_x^2, max|u| + max|v|)`` by the trapezoid rule.

    Derivatives are second-order differences, one-sided at the ends.
    """
    grid = state.grid
    w = grid.trapezoid_weights()
    u, v = state.u, state.v
    ux = np.gradient(u, grid.h, edge_order=2)
    vx = np.gradient(v, grid.h, edge_order=2)
    l2 = float(w @ (u * u + v * v))
    h1 = float(w @ (ux * ux + vx * vx))
    sup = float(np.max(np.abs(u)) + np.max(np.abs(v)))
    return l2, h1, sup


@dataclass(frozen=True)
class EnergyTrace:
    times: np.ndarray
    l2_sq: np.ndarray
    h1_sq: np.ndarray
    sup_norm: np.ndarray

    def __post_init__(self):
        arrays = [np.asarray(getattr(self, f), dtype=float) for f in ("times", "l2_sq", "h1_sq", "sup_norm")]
        if len({a.shape for a in arrays}) != 1:
            raise ValidationError("energy trace arrays differ in length")
        for name, arr in zip(("times", "l2_sq", "h1_sq", "sup_norm"), arrays):
            object.__setattr__(self, name, arr)

    @classmethod
    def from_states(cls, states: Sequence[FieldState]) -> "EnergyTrace":
        norms = np.array([energy_norms(s) for s in states]).reshape(-1, 3)
        return cls(np.array([s.t for s in states]), norms[:, 0], norms[:, 1], norms[:, 2])


def fit_decay_rate(trace: EnergyTrace, field: str = "l2_sq", window: Optional[Tuple[float, float]] = None) -> float:
    """Least-squares decay rate of ``log(trace.<field>)`` against time.

    Positive means decay.  ``window`` defaults to the last 90% of the run.

    Raises
    ------
    NonPositiveTraceValue
        A value inside the window is zero or negative.
    """
    if field not in ("l2_sq", "h1_sq", "sup_norm"):
        raise ValidationError(f"unknown trace field {field!r}")
    t = trace.times
    y = getattr(trace, field)
    if window is None:
        t_end = float(t[-1])
        window = (0.1 * t_end, t_end)
    sel = (t >= window[0]) & (t <= window[1])
    if sel.sum() < 2:
        raise ValidationError(f"fewer than two samples in window {window}")
    if np.any(y[sel] <= 0.0):
        raise NonPositiveTraceValue(f"{field} has non-positive values in window {window}")
    slope, _ = np.polyfit(t[sel], np.log(y[sel]), 1)
    return float(-slope)
