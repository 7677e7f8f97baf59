"""Hot inner loops with a numba path and a pure-numpy fallback.

The numba path is used when numba imports and ``CHEMOBAND_NUMBA`` is not
set to ``0``/``false``/``off``.  Both paths are always importable so the
benchmark and the parity tests can call either one explicitly.
"""
from __future__ import annotations

import os

import numpy as np
from scipy.linalg import solve_banded

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def _flag_enabled(value):
    return value.strip().lower() not in ("0", "false", "off", "no")


USE_NUMBA = HAVE_NUMBA and _flag_enabled(os.environ.get("CHEMOBAND_NUMBA", "1"))


def _njit(func):
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, fastmath=False)(func)


# -- tridiagonal solve ------------------------------------------------------

def thomas_numpy(lower, diag, upper, rhs):
    """Solve a tridiagonal system; ``lower[0]`` and ``upper[-1]`` are ignored."""
    n = diag.size
    ab = np.empty((3, n))
    ab[0, 1:] = upper[:-1]
    ab[0, 0] = 0.0
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    ab[2, -1] = 0.0
    return solve_banded((1, 1), ab, rhs, check_finite=False)


def _thomas_loop(lower, diag, upper, rhs):
    n = diag.size
    cp = np.empty(n)
    dp = np.empty(n)
    x = np.empty(n)
    beta = diag[0]
    cp[0] = upper[0] / beta
    dp[0] = rhs[0] / beta
    for i in range(1, n):
        beta = diag[i] - lower[i] * cp[i - 1]
        cp[i] = upper[i] / beta
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / beta
    x[n - 1] = dp[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


thomas_numba = _njit(_thomas_loop)


# -- chemotactic flux divergence --------------------------------------------

def chemotaxis_div_numpy(u, lnv, h, neumann_left, neumann_right):
    """Conservative d/dx(u * d(ln v)/dx) on a uniform node grid.

    Face fluxes use the arithmetic mean of ``u``.  Neumann ends mirror the
    field, so the boundary face flux enters twice over a half cell.
    Dirichlet ends return 0 (the caller overwrites those nodes).
    """
    flux = 0.5 * (u[1:] + u[:-1]) * (lnv[1:] - lnv[:-1]) / h
    out = np.zeros_like(u)
    out[1:-1] = (flux[1:] - flux[:-1]) / h
    if neumann_left:
        out[0] = 2.0 * flux[0] / h
    if neumann_right:
        out[-1] = -2.0 * flux[-1] / h
    return out


def _chemotaxis_div_loop(u, lnv, h, neumann_left, neumann_right):
    n = u.size
    out = np.zeros(n)
    prev = 0.5 * (u[1] + u[0]) * (lnv[1] - lnv[0]) / h
    if neumann_left:
        out[0] = 2.0 * prev / h
    for i in range(1, n - 1):
        nxt = 0.5 * (u[i + 1] + u[i]) * (lnv[i + 1] - lnv[i]) / h
        out[i] = (nxt - prev) / h
        prev = nxt
    if neumann_right:
        out[n - 1] = -2.0 * prev / h
    return out


chemotaxis_div_numba = _njit(_chemotaxis_div_loop)


# -- second difference ------------------------------------------------------

def laplacian_numpy(f, h, neumann_left, neumann_right):
    out = np.zeros_like(f)
    out[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / (h * h)
    if neumann_left:
        out[0] = 2.0 * (f[1] - f[0]) / (h * h)
    if neumann_right:
        out[-1] = 2.0 * (f[-2] - f[-1]) / (h * h)
    return out


def _laplacian_loop(f, h, neumann_left, neumann_right):
    n = f.size
    out = np.zeros(n)
    ih2 = 1.0 / (h * h)
    for i in range(1, n - 1):
        out[i] = (f[i + 1] - 2.0 * f[i] + f[i - 1]) * ih2
    if neumann_left:
        out[0] = 2.0 * (f[1] - f[0]) * ih2
    if neumann_right:
        out[n - 1] = 2.0 * (f[n - 2] - f[n - 1]) * ih2
    return out


laplacian_numba = _njit(_laplacian_loop)


# -- random-walk step -------------------------------------------------------

def walk_step_numpy(x, noise, table_x0, table_dx, drift_table, scale):
    """x + drift(x) + scale*noise with drift linearly interpolated (clamped ends)."""
    grid = table_x0 + table_dx * np.arange(drift_table.size)
    return x + np.interp(x, grid, drift_table) + scale * noise


def _walk_step_loop(x, noise, table_x0, table_dx, drift_table, scale):
    n = x.size
    m = drift_table.size
    out = np.empty(n)
    for i in range(n):
        s = (x[i] - table_x0) / table_dx
        if s <= 0.0:
            drift = drift_table[0]
        elif s >= m - 1:
            drift = drift_table[m - 1]
        else:
            j = int(s)
            w = s - j
            drift = (1.0 - w) * drift_table[j] + w * drift_table[j + 1]
        out[i] = x[i] + drift + scale * noise[i]
    return out


walk_step_numba = _njit(_walk_step_loop)


if USE_NUMBA:
    thomas = thomas_numba
    chemotaxis_div = chemotaxis_div_numba
    laplacian = laplacian_numba
    walk_step = walk_step_numba
else:
    thomas = thomas_numpy
    chemotaxis_div = chemotaxis_div_numpy
    laplacian = laplacian_numpy
    walk_step = walk_step_numpy


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
