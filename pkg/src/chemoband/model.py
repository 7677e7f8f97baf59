"""Parameter and field types shared across the package.

Units follow the CGS-hour convention: lengths in cm, times in hours,
concentrations in arbitrary but consistent units.  Nothing here enforces
units; they are documented on each field.
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping, Optional

import numpy as np

from .errors import NonPositiveParameter, RegimeMismatch, ValidationError

#: |d - 1| at or below this selects the d = 1 closed form.
CRITICAL_D_TOL = 1e-9


class Regime(str, enum.Enum):
    UNLIMITED_GENERAL = "unlimited_general"
    UNLIMITED_CRITICAL = "unlimited_critical"
    LIMITED = "limited"

    @property
    def is_unlimited(self) -> bool:
        return self is not Regime.LIMITED


def _check_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"parameter {name!r} must be finite, got {value!r}")
    return value


def _check_positive(name: str, value: float) -> float:
    value = _check_finite(name, value)
    if value <= 0.0:
        raise NonPositiveParameter(name, value)
    return value


def _check_nonnegative(name: str, value: float) -> float:
    value = _check_finite(name, value)
    if value < 0.0:
        raise NonPositiveParameter(name, value)
    return value


@dataclass(frozen=True)
class ModelParams:
    """Physical constants of the bacteria/substrate system.

    Parameters
    ----------
    tau : float
        Collision-time interval [hour].
    mu : float
        Bacterial motility [cm^2/hour].
    beta : float
        Chemotactic coefficient [cm^2/hour].
    big_d : float
        Substrate diffusion [cm^2/hour].  Zero for the traveling-band
        closed forms.
    k : float
        Consumption rate constant [1/hour, or 1/(hour*conc) when limited].

    ``tau`` and ``mu`` must be strictly positive.  ``beta``, ``big_d`` and
    ``k`` may be zero here so that pure diffusion runs can switch terms off;
    :func:`validate` demands strict positivity wherever a closed form
    needs it.
    """

    tau: float
    mu: float
    beta: float
    big_d: float = 0.0
    k: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "tau", _check_positive("tau", self.tau))
        object.__setattr__(self, "mu", _check_positive("mu", self.mu))
        object.__setattr__(self, "beta", _check_nonnegative("beta", self.beta))
        object.__setattr__(self, "big_d", _check_nonnegative("big_d", self.big_d))
        object.__setattr__(self, "k", _check_nonnegative("k", self.k))

    @property
    def d_ratio(self) -> float:
        return 2.0 * self.beta / self.mu

    @classmethod
    def from_d(cls, d: float, *, tau: float, mu: float, big_d: float = 0.0, k: float = 1.0):
        """Build parameters from the chemotaxis/motility ratio d = 2*beta/mu."""
        return cls(tau=tau, mu=mu, beta=0.5 * d * mu, big_d=big_d, k=k)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ModelParams":
        return cls(**dict(data))


@dataclass(frozen=True)
class BandParams:
    """Traveling-frame constants: speed ``c``, integration constant ``c0``
    and far-field substrate level ``v_inf``."""

    c: float
    c0: float
    v_inf: float
    regime: Regime = Regime.UNLIMITED_GENERAL

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime(self.regime))
        for name in ("c", "c0", "v_inf"):
            object.__setattr__(self, name, _check_finite(name, getattr(self, name)))

    def to_dict(self) -> dict:
        data = asdict(self)
        data["regime"] = self.regime.value
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "BandParams":
        return cls(**dict(data))


@dataclass(frozen=True)
class DerivedParams:
    d_ratio: float
    c3: float
    c4: float
    q_unlim: float
    q_lim: float
    regime: Regime

    @property
    def decay_rate(self) -> float:
        """2*tau*c/mu, equal to c3*c4."""
        return self.c3 * self.c4


def regime_for(d_ratio: float, limited: bool = False) -> Regime:
    if limited:
        return Regime.LIMITED
    if abs(d_ratio - 1.0) <= CRITICAL_D_TOL:
        return Regime.UNLIMITED_CRITICAL
    return Regime.UNLIMITED_GENERAL


def validate(params: ModelParams, band: BandParams) -> DerivedParams:
    """Check a band parameter set and compute its derived constants.

    Raises
    ------
    NonPositiveParameter
        If any of beta, k, c, c0, v_inf is not strictly positive.
    RegimeMismatch
        If d = 2*beta/mu is incompatible with ``band.regime``, or a limited
        band has c0 <= 1.
    """
    for name, value in (("beta", params.beta), ("k", params.k)):
        _check_positive(name, value)
    for name in ("c", "c0", "v_inf"):
        _check_positive(name, getattr(band, name))

    d = params.d_ratio
    if band.regime is Regime.UNLIMITED_GENERAL and d <= 1.0 + CRITICAL_D_TOL:
        raise RegimeMismatch(f"unlimited_general needs d > 1, got d = {d!r}")
    if band.regime is Regime.UNLIMITED_CRITICAL and abs(d - 1.0) > CRITICAL_D_TOL:
        raise RegimeMismatch(f"unlimited_critical needs d = 1, got d = {d!r}")
    if band.regime is Regime.LIMITED and band.c0 <= 1.0:
        raise RegimeMismatch(f"limited band needs c0 > 1, got c0 = {band.c0!r}")

    c = band.c
    return DerivedParams(
        d_ratio=d,
        c3=2.0 * params.beta * params.k / (c * params.mu),
        c4=params.tau * c * c / (params.beta * params.k),
        q_unlim=band.c0 * band.v_inf,
        q_lim=2.0 * params.tau * c * c / (params.k * params.beta),
        regime=band.regime,
    )


@dataclass(frozen=True)
class PerturbParams:
    """Equilibrium and linearization data for the stability analysis.

    ``a`` is the substrate production rate -dH/du and ``d_deg`` the
    degradation rate dH/dv at (u0, v0); ``ell`` is the domain length.
    """

    u0: float
    v0: float
    a: float
    d_deg: float
    ell: float

    def __post_init__(self):
        for name in ("u0", "v0", "a", "d_deg", "ell"):
            object.__setattr__(self, name, _check_positive(name, getattr(self, name)))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PerturbParams":
        return cls(**dict(data))


@dataclass(frozen=True)
class Grid1D:
    x0: float
    x1: float
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise ValidationError(f"grid needs n >= 3 nodes, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        x0 = _check_finite("x0", self.x0)
        x1 = _check_finite("x1", self.x1)
        if not x1 > x0:
            raise ValidationError(f"grid needs x1 > x0, got [{x0}, {x1}]")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "x1", x1)

    @classmethod
    def from_spacing(cls, x0: float, x1: float, h: float) -> "Grid1D":
        n = int(round((x1 - x0) / h)) + 1
        return cls(x0, x1, n)

    @property
    def h(self) -> float:
        return (self.x1 - self.x0) / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x0, self.x1, self.n)

    @property
    def length(self) -> float:
        return self.x1 - self.x0

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.n, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w


@dataclass
class BandProfile:
    """Sampled traveling-band profile ``U(zeta), V(zeta)``.

    The derivative arrays are filled by the closed-form evaluators and by
    the ODE oracle (first derivatives only).
    """

    zeta: np.ndarray
    u_vals: np.ndarray
    v_vals: np.ndarray
    du: Optional[np.ndarray] = None
    dv: Optional[np.ndarray] = None
    d2u: Optional[np.ndarray] = None
    d2v: Optional[np.ndarray] = None
    n_clamped: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.zeta = np.asarray(self.zeta, dtype=float)
        n = self.zeta.shape
        for name in ("u_vals", "v_vals", "du", "dv", "d2u", "d2v"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=float)
            if arr.shape != n:
                raise ValidationError(f"{name} has shape {arr.shape}, expected {n}")
            setattr(self, name, arr)

    def __len__(self):
        return self.zeta.size


@dataclass(frozen=True)
class FieldState:
    """Bacteria ``u`` and substrate ``v`` on a grid at time ``t``."""

    grid: Grid1D
    u: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if u.shape != (self.grid.n,) or v.shape != (self.grid.n,):
            raise ValidationError(
                f"field lengths {u.shape}, {v.shape} do not match grid of {self.grid.n} nodes"
            )
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValidationError("field contains non-finite values")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "t", float(self.t))

    def replace(self, **changes) -> "FieldState":
        data = dict(grid=self.grid, u=self.u, v=self.v, t=self.t)
        data.update(changes)
        return FieldState(**data)
