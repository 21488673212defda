"""Estimators: log-log fits, jackknife cumulants and z-score comparisons."""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

__all__ = [
    "FitResult",
    "weighted_loglog_fit",
    "estimate_hurst",
    "HurstResult",
    "CumulantResult",
    "cumulants",
    "jackknife",
    "Comparison",
    "compare_to_prediction",
]


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    stderr: float
    r_squared: float
    n_points: int


def weighted_loglog_fit(t, value, stderr=None) -> FitResult:
    """Weighted least squares of ``log value`` on ``log t``.

    Weights are ``(value/stderr)^2`` (inverse variance of ``log value``);
    without errors the fit is unweighted.  The reported slope error is the
    textbook WLS error scaled by the reduced chi-square when that exceeds 1.
    """
    t = np.asarray(t, float)
    v = np.asarray(value, float)
    if np.any(v <= 0) or np.any(t <= 0):
        raise ValueError("log-log fit needs positive t and values")
    x = np.log(t)
    y = np.log(v)
    n = len(x)
    if stderr is None or np.all(np.asarray(stderr) == 0):
        w = np.ones(n)
        weighted = False
    else:
        se = np.asarray(stderr, float) / v
        se = np.where(se > 0, se, np.min(se[se > 0]) if np.any(se > 0) else 1.0)
        w = 1.0 / se ** 2
        weighted = True
    W = w.sum()
    xm = (w * x).sum() / W
    ym = (w * y).sum() / W
    Sxx = (w * (x - xm) ** 2).sum()
    slope = (w * (x - xm) * (y - ym)).sum() / Sxx
    icpt = ym - slope * xm
    res = y - icpt - slope * x
    ss_res = (w * res ** 2).sum()
    ss_tot = (w * (y - ym) ** 2).sum()
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    dof = max(n - 2, 1)
    if weighted:
        scale = max(ss_res / dof, 1.0)
        err = math.sqrt(scale / Sxx)
    else:
        err = math.sqrt(ss_res / dof / Sxx)
    return FitResult(float(slope), float(icpt), float(err), float(min(max(r2, 0.0), 1.0)), n)


@dataclass(frozen=True)
class HurstResult:
    fit: FitResult
    hurst: float
    hurst_stderr: float
    span_ok: bool


def estimate_hurst(msd) -> HurstResult:
    """Fit ``MSD ~ t^{2H}`` from rows ``(t, value, stderr)``.

    Raises on non-positive values; ``span_ok`` is False when the lags do
    not cover at least one decade or fewer than 4 points are given.
    """
    arr = np.asarray(msd, float)
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise ValueError("msd rows must be (t, value[, stderr])")
    t, v = arr[:, 0], arr[:, 1]
    se = arr[:, 2] if arr.shape[1] > 2 else None
    if np.any(v <= 0):
        raise ValueError("non-positive MSD value")
    fit = weighted_loglog_fit(t, v, se)
    span_ok = len(t) >= 4 and t.max() / t.min() >= 10.0 * (1 - 1e-12)
    return HurstResult(fit, fit.slope / 2.0, fit.stderr / 2.0, bool(span_ok))


def jackknife(samples, stat, n_blocks: int = 20):
    """Delete-one-block jackknife estimate and error of ``stat(samples)``.

    ``samples`` is split along axis 0 into ``n_blocks`` contiguous blocks.
    """
    x = np.asarray(samples)
    n = x.shape[0]
    if n < n_blocks:
        raise ValueError(f"need at least {n_blocks} samples, got {n}")
    full = np.asarray(stat(x))
    edges = np.linspace(0, n, n_blocks + 1).astype(int)
    reps = []
    for a, b in zip(edges[:-1], edges[1:]):
        keep = np.concatenate([x[:a], x[b:]], axis=0)
        reps.append(np.asarray(stat(keep)))
    reps = np.array(reps)
    mean_rep = reps.mean(axis=0)
    err = np.sqrt((n_blocks - 1) / n_blocks * ((reps - mean_rep) ** 2).sum(axis=0))
    return full, err


@dataclass
class CumulantResult:
    mean: float
    central: dict
    skewness: float
    excess_kurtosis: float
    errors: dict
    n: int


def _cum_stats(x):
    m = x.mean()
    c = x - m
    m2 = (c ** 2).mean()
    m3 = (c ** 3).mean()
    m4 = (c ** 4).mean()
    sk = m3 / m2 ** 1.5 if m2 > 0 else 0.0
    ku = m4 / m2 ** 2 - 3.0 if m2 > 0 else 0.0
    return np.array([m, m2, m3, m4, sk, ku])


def cumulants(samples, orders: int = 4, n_blocks: int = 20) -> CumulantResult:
    """Central moments, skewness and excess kurtosis with jackknife errors.

    Constant samples give zero variance and zero standardized cumulants.
    """
    x = np.asarray(samples, float).ravel()
    if orders > 4 or orders < 1:
        raise ValueError("orders must be in 1..4")
    if x.size < n_blocks:
        raise ValueError("fewer samples than jackknife blocks")
    if x.size < 1000:
        raise ValueError("at least 10^3 samples are required")
    val, err = jackknife(x, _cum_stats, n_blocks)
    names = ["mean", "m2", "m3", "m4", "skewness", "excess_kurtosis"]
    errors = dict(zip(names, map(float, err)))
    central = {k: float(v) for k, v in zip([2, 3, 4], val[1:4]) if k <= orders}
    return CumulantResult(float(val[0]), central, float(val[4]), float(val[5]), errors, x.size)


@dataclass(frozen=True)
class Comparison:
    z: float
    passed: bool
    threshold: float = 3.0


def compare_to_prediction(mc, exact, threshold: float = 3.0) -> Comparison:
    """``z = |mc - exact| / sqrt(err_mc^2 + err_exact^2)``, pass iff ``z < threshold``.

    ``mc`` and ``exact`` are ``(value, error)`` pairs.
    """
    (a, ea), (b, eb) = mc, exact
    if not (np.isfinite(ea) and np.isfinite(eb)):
        raise ValueError("errors must be finite")
    s = math.hypot(ea, eb)
    diff = abs(a - b)
    if s == 0:
        z = 0.0 if diff == 0 else math.inf
    else:
        z = diff / s
    return Comparison(z, z < threshold, threshold)
