"""Monte Carlo jump process behind the macroscopic chemotaxis equation.

Every ``tau_step`` each particle jumps by ``m(x) + sqrt(var) * xi`` where
``m`` is the expected displacement (evaluated before the jump) and ``xi``
has zero mean and unit variance.  With ``var = mu`` and
``m = beta * d(ln v)/dx`` the density obeys
``tau u_t = (mu/2) u_xx - beta (u (ln v)_x)_x`` to second order.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid

from . import _kernels
from ._parallel import ordered_map
from .errors import GridMismatch, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_CHUNK = 1 << 15


@dataclass(frozen=True)
class JumpDensity:
    """Shape of the random part of a jump.

    ``kind="gaussian"`` uses standard normals.  ``kind="tabulated"`` samples
    the density ``pdf`` on ``x`` by inverse CDF and standardizes it to zero
    mean and unit variance, so only its shape matters.
    """

    kind: str = "gaussian"
    x: Optional[np.ndarray] = None
    pdf: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "tabulated"):
            raise ValidationError(f"unknown jump density {self.kind!r}")
        if self.kind == "tabulated":
            if self.x is None or self.pdf is None:
                raise ValidationError("tabulated jump density needs x and pdf")
            x = np.asarray(self.x, dtype=float)
            pdf = np.asarray(self.pdf, dtype=float)
            if x.shape != pdf.shape or x.size < 3 or np.any(np.diff(x) <= 0) or np.any(pdf < 0):
                raise ValidationError("tabulated density needs increasing x and non-negative pdf of equal length")
            object.__setattr__(self, "x", x)
            object.__setattr__(self, "pdf", pdf)

    def _standardized_table(self):
        x, pdf = self.x, self.pdf
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(x))])
        if not cdf[-1] > 0.0:
            raise ValidationError("tabulated density has zero mass")
        cdf /= cdf[-1]
        w = np.diff(x) * 0.5 * (pdf[1:] + pdf[:-1])
        w = w / w.sum()
        mid = 0.5 * (x[1:] + x[:-1])
        mean = float(w @ mid)
        # exact second moment of the piecewise-linear-CDF (uniform per cell) density
        second = float(w @ (mid ** 2 + np.diff(x) ** 2 / 12.0))
        std = math.sqrt(second - mean * mean)
        return cdf, (x - mean) / std

    def sampler(self) -> Callable[[np.random.Generator, int], np.ndarray]:
        if self.kind == "gaussian":
            return lambda rng, n: rng.standard_normal(n)
        cdf, xs = self._standardized_table()
        return lambda rng, n: np.interp(rng.random(n), cdf, xs)


@dataclass(frozen=True)
class DriftField:
    """Expected displacement per jump, tabulated on a uniform grid.

    Values outside the table are held at the end values.
    """

    x0: float
    dx: float
    values: np.ndarray

    @classmethod
    def constant(cls, m: float) -> "DriftField":
        return cls(-1.0, 2.0, np.array([m, m], dtype=float))

    @classmethod
    def zero(cls) -> "DriftField":
        return cls.constant(0.0)

    @classmethod
    def from_log_v(cls, beta: float, x: np.ndarray, ln_v: np.ndarray) -> "DriftField":
        """``beta * d(ln v)/dx`` from samples of ``ln v`` on a uniform grid."""
        x = np.asarray(x, dtype=float)
        dx = _uniform_spacing(x)
        grad = np.gradient(np.asarray(ln_v, dtype=float), dx, edge_order=2)
        return cls(float(x[0]), dx, beta * grad)

    @classmethod
    def from_function(cls, func: Callable[[np.ndarray], np.ndarray], x: np.ndarray) -> "DriftField":
        x = np.asarray(x, dtype=float)
        return cls(float(x[0]), _uniform_spacing(x), np.asarray(func(x), dtype=float))

    def __call__(self, x):
        grid = self.x0 + self.dx * np.arange(self.values.size)
        return np.interp(x, grid, self.values)


def _uniform_spacing(x):
    if x.size < 2:
        raise ValidationError("drift table needs at least two points")
    d = np.diff(x)
    if np.any(d <= 0) or np.ptp(d) > 1e-9 * d[0]:
        raise ValidationError("drift table must be on a uniform increasing grid")
    return float(d.mean())


@dataclass(frozen=True)
class WalkConfig:
    """Jump-process setup.

    ``variance`` is the jump variance per ``tau_step`` (mu for the chemotaxis
    model).  Histograms use ``bin_edges`` when given, otherwise bins of
    ``bin_width`` over ``hist_range``.  ``record_steps`` lists the step counts
    at which histograms are taken; the final step is always recorded.
    """

    n_particles: int
    tau_step: float
    variance: float
    n_steps: int
    bin_width: float = 0.1
    hist_range: Tuple[float, float] = (-10.0, 10.0)
    bin_edges: Optional[np.ndarray] = None
    jump: JumpDensity = field(default_factory=JumpDensity)
    drift: DriftField = field(default_factory=DriftField.zero)
    record_steps: Sequence[int] = ()
    chunk_size: int = DEFAULT_CHUNK

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValidationError("n_particles must be positive")
        if not self.tau_step > 0.0:
            raise ValidationError("tau_step must be positive")
        if not self.variance > 0.0:
            raise ValidationError("jump variance must be positive")
        if self.n_steps < 0:
            raise ValidationError("n_steps must be non-negative")
        if self.chunk_size < 1:
            raise ValidationError("chunk_size must be positive")
        if self.bin_edges is not None:
            edges = np.asarray(self.bin_edges, dtype=float)
            if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
                raise ValidationError("bin_edges must be strictly increasing")
            object.__setattr__(self, "bin_edges", edges)
        elif not (self.bin_width > 0.0 and self.hist_range[1] > self.hist_range[0]):
            raise ValidationError("need bin_width > 0 and a non-empty hist_range")

    def edges(self) -> np.ndarray:
        if self.bin_edges is not None:
            return self.bin_edges
        lo, hi = self.hist_range
        n = max(1, int(round((hi - lo) / self.bin_width)))
        return np.linspace(lo, hi, n + 1)


@dataclass(frozen=True)
class Histogram:
    t: float
    edges: np.ndarray
    counts: np.ndarray
    n_particles: int

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def n_in_range(self) -> int:
        return int(self.counts.sum())

    @property
    def density(self) -> np.ndarray:
        """Counts normalized to unit integral over the binned range."""
        total = self.n_in_range
        if total == 0:
            return np.zeros(self.counts.size)
        return self.counts / (total * self.widths)

    @property
    def stderr(self) -> np.ndarray:
        total = max(self.n_in_range, 1)
        p = self.counts / total
        return np.sqrt(p * (1.0 - p) / total) / self.widths

    def rows(self):
        for c, d, e in zip(self.centers, self.density, self.stderr):
            yield {"bin_center": c, "density": d, "stderr": e}


@dataclass(frozen=True)
class HistogramSeries:
    histograms: Tuple[Histogram, ...]
    mean: np.ndarray
    var: np.ndarray
    skew: np.ndarray
    n_particles: int

    @property
    def times(self) -> np.ndarray:
        return np.array([h.t for h in self.histograms])

    @property
    def final(self) -> Histogram:
        return self.histograms[-1]


def _run_chunk(args):
    cfg, x, seed_seq, steps, edges, sample = args
    rng = np.random.Generator(np.random.Philox(seed_seq))
    scale = math.sqrt(cfg.variance)
    drift = cfg.drift
    out = []
    step = 0
    for target in steps:
        while step < target:
            x = _kernels.walk_step(x, sample(rng, x.size), drift.x0, drift.dx, drift.values, scale)
            step += 1
        counts, _ = np.histogram(x, bins=edges)
        out.append((counts, x.size, x.sum(), (x * x).sum(), (x ** 3).sum()))
    return out


def simulate_walk(cfg: WalkConfig, initial_positions, seed: int = 0, workers: int = 0) -> HistogramSeries:
    """Run the jump process and histogram the particles at the recorded steps.

    ``initial_positions`` is an array of length ``n_particles`` or a scalar
    (all particles start there).  Particles are split into fixed chunks,
    each with its own Philox stream spawned from ``seed``, so results do
    not depend on the number of worker threads.
    """
    x0 = np.asarray(initial_positions, dtype=float)
    if x0.ndim == 0:
        x0 = np.full(cfg.n_particles, float(x0))
    if x0.shape != (cfg.n_particles,):
        raise ValidationError(f"expected {cfg.n_particles} initial positions, got {x0.shape}")
    if not np.all(np.isfinite(x0)):
        raise ValidationError("initial positions must be finite")
    steps = sorted({int(s) for s in cfg.record_steps if 0 <= s <= cfg.n_steps} | {cfg.n_steps})
    edges = cfg.edges()
    sample = cfg.jump.sampler()

    starts = range(0, cfg.n_particles, cfg.chunk_size)
    seeds = np.random.SeedSequence(seed).spawn(len(starts))
    jobs = [(cfg, x0[i:i + cfg.chunk_size].copy(), ss, steps, edges, sample) for i, ss in zip(starts, seeds)]
    results = ordered_map(_run_chunk, jobs, workers)

    hists, mean, var, skew = [], [], [], []
    for j, step in enumerate(steps):
        counts = np.zeros(edges.size - 1, dtype=np.int64)
        s0 = s1 = s2 = s3 = 0.0
        for chunk in results:
            c, n, a1, a2, a3 = chunk[j]
            counts += c
            s0 += n
            s1 += a1
            s2 += a2
            s3 += a3
        m = s1 / s0
        v = s2 / s0 - m * m
        third = s3 / s0 - 3.0 * m * s2 / s0 + 2.0 * m ** 3
        hists.append(Histogram(step * cfg.tau_step, edges, counts, cfg.n_particles))
        mean.append(m)
        var.append(v)
        skew.append(third / v ** 1.5 if v > 0 else 0.0)
    return HistogramSeries(tuple(hists), np.array(mean), np.array(var), np.array(skew), cfg.n_particles)


def compare_density(hist: Histogram, x: np.ndarray, density: np.ndarray, rtol: float = 1e-9) -> Tuple[float, float]:
    """L1 and sup distances between a histogram and a density sampled on a grid.

    Two alignments are accepted.  If the grid nodes are the bin centers the
    density is compared pointwise.  If every bin edge is a grid node the
    density is averaged over each bin with the trapezoid rule.  Either way
    the reference is renormalized to unit mass over the histogram range.

    Raises
    ------
    GridMismatch
        The grid matches neither alignment.
    """
    x = np.asarray(x, dtype=float)
    density = np.asarray(density, dtype=float)
    if x.shape != density.shape:
        raise GridMismatch("grid and density lengths differ")
    centers = hist.centers
    widths = hist.widths
    tol = rtol * widths.min()

    if x.size == centers.size and np.all(np.abs(x - centers) <= tol):
        ref = density.copy()
    else:
        idx = np.searchsorted(x, hist.edges)
        idx = np.clip(idx, 0, x.size - 1)
        near = np.where(np.abs(x[idx] - hist.edges) <= tol, idx, -1)
        below = np.clip(idx - 1, 0, x.size - 1)
        near = np.where((near < 0) & (np.abs(x[below] - hist.edges) <= tol), below, near)
        if np.any(near < 0):
            raise GridMismatch("histogram edges are not grid nodes and centers do not match the grid")
        ref = np.empty(centers.size)
        for b in range(centers.size):
            i, j = near[b], near[b + 1]
            ref[b] = trapezoid(density[i:j + 1], x[i:j + 1]) / widths[b]
    mass = float(ref @ widths)
    if not mass > 0.0:
        raise GridMismatch("reference density has no mass over the histogram range")
    ref = ref / mass
    diff = np.abs(hist.density - ref)
    return float(diff @ widths), float(diff.max())
