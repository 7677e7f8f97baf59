"""Empirical checks of how the closed-form bands depend on their parameters.

The Lipschitz probe samples random parameter pairs inside a box and
reports the largest observed difference quotient.  That number is a
lower bound on any valid Lipschitz constant, nothing more.  The
convergence probe measures how fast the d > 1 band approaches the d = 1
band as d decreases to 1.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize

from ._parallel import ordered_map
from .bands import eval_band, eval_limited, eval_unlimited, numeric_band_max
from .errors import DegenerateBox, OverflowGuard, ValidationError
from .model import BandParams, ModelParams, Regime, regime_for, validate

logger = logging.getLogger(__name__)

UNLIMITED_KEYS = ("d", "c0", "k", "c", "tau", "mu", "v_inf")
LIMITED_KEYS = ("c0", "k", "tau", "c", "beta", "mu", "v_inf")

BoxEntry = Union[float, Tuple[float, float]]


def zeta_grid(tau: float, mu: float, c: float, n_core: int = 2001, n_tail: int = 40, tail_max: float = 1e6) -> np.ndarray:
    """Uniform core on ``[-M, M]`` with ``M = 20 mu/(2 tau c)`` plus log-spaced tails out to ``tail_max``."""
    m = 20.0 * mu / (2.0 * tau * c)
    core = np.linspace(-m, m, n_core)
    if n_tail <= 0 or tail_max <= m:
        return core
    tail = np.geomspace(m, tail_max, n_tail + 1)[1:]
    return np.concatenate([-tail[::-1], core, tail])


# -- parameter boxes -----------------------------------------------------------

@dataclass(frozen=True)
class ParamBox:
    """Axis-aligned box over the seven band parameters.

    Each entry is either a scalar (held fixed) or a ``(lo, hi)`` pair with
    ``lo < hi``.  Unlimited boxes are keyed by ``d, c0, k, c, tau, mu,
    v_inf`` (beta follows as d mu / 2) and need ``d > 1``; limited boxes by
    ``c0, k, tau, c, beta, mu, v_inf`` and need ``c0 > 1``.
    """

    entries: Mapping[str, BoxEntry]
    limited: bool = False

    def __post_init__(self):
        keys = LIMITED_KEYS if self.limited else UNLIMITED_KEYS
        missing = set(keys) - set(self.entries)
        extra = set(self.entries) - set(keys)
        if missing or extra:
            raise ValidationError(f"box keys must be {keys}; missing {sorted(missing)}, unexpected {sorted(extra)}")
        varying = 0
        for name in keys:
            lo, hi = self.bounds(name)
            if lo > hi or (isinstance(self.entries[name], (tuple, list)) and not lo < hi):
                raise DegenerateBox(f"dimension {name!r} has zero or negative width [{lo}, {hi}]")
            if not lo > 0.0:
                raise DegenerateBox(f"dimension {name!r} leaves the positive domain: lower bound {lo}")
            varying += lo < hi
        if varying == 0:
            raise DegenerateBox("every dimension is fixed; nothing to probe")
        floor_name = "c0" if self.limited else "d"
        if not self.bounds(floor_name)[0] > 1.0:
            raise DegenerateBox(f"{floor_name} must stay above 1 inside the box")

    @property
    def keys(self) -> Tuple[str, ...]:
        return LIMITED_KEYS if self.limited else UNLIMITED_KEYS

    def bounds(self, name: str) -> Tuple[float, float]:
        entry = self.entries[name]
        if isinstance(entry, (tuple, list)):
            lo, hi = entry
            return float(lo), float(hi)
        return float(entry), float(entry)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        lo, hi = np.array([self.bounds(k) for k in self.keys]).T
        return lo + (hi - lo) * rng.random(lo.size)

    def to_params(self, w: np.ndarray) -> Tuple[ModelParams, BandParams]:
        p = dict(zip(self.keys, map(float, w)))
        if self.limited:
            mp = ModelParams(tau=p["tau"], mu=p["mu"], beta=p["beta"], k=p["k"])
            return mp, BandParams(p["c"], p["c0"], p["v_inf"], Regime.LIMITED)
        mp = ModelParams.from_d(p["d"], tau=p["tau"], mu=p["mu"], k=p["k"])
        return mp, BandParams(p["c"], p["c0"], p["v_inf"], regime_for(mp.d_ratio))

    def default_zeta_grid(self) -> np.ndarray:
        tau_lo = self.bounds("tau")[0]
        c_lo = self.bounds("c")[0]
        mu_hi = self.bounds("mu")[1]
        return zeta_grid(tau_lo, mu_hi, c_lo)


@dataclass(frozen=True)
class LipschitzResult:
    k_u: float
    k_v: float
    worst_pair_u: Optional[Tuple[np.ndarray, np.ndarray]]
    worst_pair_v: Optional[Tuple[np.ndarray, np.ndarray]]
    n_evaluated: int
    n_skipped: int
    keys: Tuple[str, ...] = field(default=())

    @property
    def k_emp(self) -> float:
        return max(self.k_u, self.k_v)

    @property
    def worst_pair(self):
        return self.worst_pair_u if self.k_u >= self.k_v else self.worst_pair_v


def _profile(box, w, zeta):
    mp, bp = box.to_params(w)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OverflowGuard)
        return eval_band(mp, bp, zeta)


def pair_ratio(box: ParamBox, w1: np.ndarray, w2: np.ndarray, zeta: np.ndarray) -> Optional[Tuple[float, float]]:
    """Sup-over-zeta difference quotients for U and V, or None if ``w1 == w2``."""
    dist = float(np.linalg.norm(np.asarray(w1) - np.asarray(w2)))
    if dist == 0.0:
        return None
    p1 = _profile(box, w1, zeta)
    p2 = _profile(box, w2, zeta)
    return (
        float(np.max(np.abs(p1.u_vals - p2.u_vals))) / dist,
        float(np.max(np.abs(p1.v_vals - p2.v_vals))) / dist,
    )


def lipschitz_probe(
    box: ParamBox,
    n_pairs: int,
    zeta: Optional[np.ndarray] = None,
    seed: int = 0,
    workers: int = 0,
) -> LipschitzResult:
    """Largest observed ``sup_zeta |F(W1) - F(W2)| / |W1 - W2|`` for F = U and V.

    Pairs are drawn uniformly in the box from a seeded generator.  Pairs
    with ``W1 == W2`` (possible when the box has a single varying
    dimension and the draws coincide) are skipped and counted.  Only the
    varying coordinates contribute to ``|W1 - W2|`` since fixed ones are
    equal in both points.
    """
    if n_pairs < 1:
        raise ValidationError("n_pairs must be at least 1")
    zeta = box.default_zeta_grid() if zeta is None else np.asarray(zeta, dtype=float)
    rng = np.random.default_rng(seed)
    pairs = [(box.sample(rng), box.sample(rng)) for _ in range(n_pairs)]
    ratios = ordered_map(lambda pr: pair_ratio(box, pr[0], pr[1], zeta), pairs, workers)

    k_u = k_v = 0.0
    worst_u = worst_v = None
    skipped = 0
    for pair, r in zip(pairs, ratios):
        if r is None:
            skipped += 1
            continue
        if r[0] > k_u:
            k_u, worst_u = r[0], pair
        if r[1] > k_v:
            k_v, worst_v = r[1], pair
    return LipschitzResult(k_u, k_v, worst_u, worst_v, n_pairs - skipped, skipped, box.keys)


# -- convergence as d -> 1 ----------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceResult:
    deltas: np.ndarray
    err_u: np.ndarray
    err_v: np.ndarray

    @property
    def err_over_delta_v(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.deltas > 0, self.err_v / self.deltas, 0.0)

    @property
    def err_over_delta_u(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.deltas > 0, self.err_u / self.deltas, 0.0)

    @property
    def v_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.err_v) < 0.0))

    @property
    def u_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.err_u) < 0.0))

    def within_band(self, factor: float = 4.0, which: str = "v") -> bool:
        """True when err/delta varies by at most ``factor`` over positive deltas."""
        r = self.err_over_delta_v if which == "v" else self.err_over_delta_u
        r = r[self.deltas > 0]
        return bool(r.size == 0 or (r.min() > 0 and r.max() / r.min() <= factor))

    def rows(self):
        for d, eu, ev, q in zip(self.deltas, self.err_u, self.err_v, self.err_over_delta_v):
            yield {"delta": d, "err_u": eu, "err_v": ev, "err_over_delta": q}


def uniform_convergence_probe(
    mp: ModelParams,
    bp: BandParams,
    deltas: Sequence[float],
    zeta: Optional[np.ndarray] = None,
) -> ConvergenceResult:
    """Sup-norm gaps between the ``d = 1 + delta`` band and the ``d = 1`` band.

    ``mp`` supplies tau, mu and k (its beta is replaced); ``bp`` supplies
    c, c0 and v_inf.  ``deltas`` must be non-negative and strictly
    decreasing; ``delta = 0`` evaluates the d = 1 form and gives 0.
    """
    deltas = np.asarray(deltas, dtype=float)
    if deltas.ndim != 1 or deltas.size == 0:
        raise ValidationError("deltas must be a non-empty sequence")
    if np.any(deltas < 0.0) or np.any(np.diff(deltas) >= 0.0):
        raise ValidationError("deltas must be non-negative and strictly decreasing")
    zeta = zeta_grid(mp.tau, mp.mu, bp.c) if zeta is None else np.asarray(zeta, dtype=float)

    def band(d):
        m = ModelParams.from_d(d, tau=mp.tau, mu=mp.mu, big_d=mp.big_d, k=mp.k)
        b = BandParams(bp.c, bp.c0, bp.v_inf, regime_for(m.d_ratio))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OverflowGuard)
            return eval_unlimited(m, b, zeta)

    base = band(1.0)
    err_u = np.empty(deltas.size)
    err_v = np.empty(deltas.size)
    for i, delta in enumerate(deltas):
        p = base if delta == 0.0 else band(1.0 + delta)
        err_u[i] = np.max(np.abs(p.u_vals - base.u_vals))
        err_v[i] = np.max(np.abs(p.v_vals - base.v_vals))
    return ConvergenceResult(deltas, err_u, err_v)


# -- figure-trend helpers -------------------------------------------------------------

def band_fwhm(mp: ModelParams, bp: BandParams, scaled: bool = True) -> float:
    """Full width at half maximum of U; in ``zeta_bar = c zeta/mu`` units when ``scaled``."""
    validate(mp, bp)
    peak = numeric_band_max(mp, bp)
    s = 2.0 * mp.tau * bp.c / mp.mu
    half = 0.5 * peak.u_max

    def f(z):
        return eval_unlimited(mp, bp, [z]).u_vals[0] - half

    step = 1.0 / s
    lo = peak.zeta0 - step
    while f(lo) > 0.0:
        step *= 2.0
        lo = peak.zeta0 - step
    step = 1.0 / s
    hi = peak.zeta0 + step
    while f(hi) > 0.0:
        step *= 2.0
        hi = peak.zeta0 + step
    left = optimize.brentq(f, lo, peak.zeta0, xtol=1e-13)
    right = optimize.brentq(f, peak.zeta0, hi, xtol=1e-13)
    width = right - left
    return width * bp.c / mp.mu if scaled else width


def normalized_peak(mp: ModelParams, bp: BandParams) -> float:
    """Maximum of U / (C0 V_inf), located numerically."""
    return numeric_band_max(mp, bp).u_max / (bp.c0 * bp.v_inf)


def limited_plateau(mp: ModelParams, bp: BandParams, far: float = 60.0) -> float:
    """Left plateau of the limited band read off the profile ``far`` decay lengths behind it."""
    der = validate(mp, bp)
    z = -far / der.decay_rate
    return float(eval_limited(mp, bp, [z]).u_vals[0])
