"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the verdict lines appear in
the terminal summary) or ``python3 tests/test_acceptance.py``.
"""
import itertools
import math
import time

import numpy as np
import pytest

from acceptance_registry import record
from chaostracer.diagrams import (MomentSpec, cycle_census, enumerate_complete, moment_Z,
                                  validate_product_formula)
from chaostracer.limit_processes import (LimitPathConfig, rosenblatt_equivalence_report,
                                         simulate_spectral)
from chaostracer.spectrum_core import SpectrumParams, gamma_project_batch, scaling_exponents
from chaostracer.stats import cumulants, estimate_hurst
from chaostracer.tracer import TrajectoryConfig, msd_curve, simulate_tracers
from chaostracer.velocity_field import (covariance_mc, covariance_R, taylor_kubo,
                                        variance_scaling_VT)

P = SpectrumParams()


def _brute_matchings(n):
    """Perfect matchings of 2n hands with no link inside a node, and their cycle types."""
    hands = list(range(2 * n))
    out = []

    def rec(rest, acc):
        if not rest:
            out.append(list(acc))
            return
        a = rest[0]
        for b in rest[1:]:
            if a // 2 != b // 2:
                rec([x for x in rest[1:] if x != b], acc + [(a, b)])

    rec(hands, [])
    types = []
    for m in out:
        adj = {l: [] for l in range(n)}
        for a, b in m:
            adj[a // 2].append(b // 2)
            adj[b // 2].append(a // 2)
        seen, sizes = set(), []
        for s in range(n):
            if s in seen:
                continue
            stack, comp = [s], 0
            seen.add(s)
            while stack:
                v = stack.pop()
                comp += 1
                for w in adj[v]:
                    if w not in seen:
                        seen.add(w)
                        stack.append(w)
            sizes.append(comp)
        types.append(tuple(sorted(sizes)))
    return types


def test_c01_diagram_census():
    t0 = time.perf_counter()
    counts = {n: len(enumerate_complete(n)) for n in range(2, 7)}
    single = {n: cycle_census(n).get((n,), 0) for n in range(2, 5)}
    elapsed = time.perf_counter() - t0
    brute = {n: _brute_matchings(n) for n in range(2, 7)}
    b_counts = {n: len(v) for n, v in brute.items()}
    b_single = {n: sum(t == (n,) for t in brute[n]) for n in range(2, 5)}
    ok = (counts == b_counts == {2: 2, 3: 8, 4: 60, 5: 544, 6: 6040}
          and single == b_single == {2: 2, 3: 8, 4: 48} and elapsed < 10.0)
    record(1, "diagram census", ok, f"counts {counts}, single cycles {single}, {elapsed:.2f}s")
    assert ok


def test_c02_projector_algebra():
    rng = np.random.default_rng(2)
    errs = []
    for d in (2, 3):
        k = rng.standard_normal((10_000, d)) * rng.lognormal(0, 2, (10_000, 1))
        G = gamma_project_batch(k)
        errs += [np.abs(G @ G - G).max(), np.abs(G - np.swapaxes(G, -1, -2)).max(),
                 (np.abs(np.einsum("nij,nj->ni", G, k)).max(axis=1)
                  / np.linalg.norm(k, axis=1)).max()]
    ok = max(errs) < 1e-12
    record(2, "projector algebra", ok, f"max error {max(errs):.2e}")
    assert ok


@pytest.mark.slow
def test_c03_field_covariance():
    d, N = 2, 2048
    fac = 1.0 - 1.0 / N
    zmax = 0.0
    for t, x in ((0.0, np.zeros(d)), (0.5, np.array([0.3, 0.0]))):
        R = covariance_R(P, t, x, budget=2 ** 16, seed=3)
        mc = covariance_mc(P, t, x, n_replicas=10_000, n_modes=N, seed=3)
        z = np.abs(mc.value - fac * R.value) / np.hypot(mc.stderr, fac * R.stderr)
        zmax = max(zmax, float(z.max()))
    ok = zmax < 3.0
    record(3, "field covariance", ok, f"max z {zmax:.2f} over 8 entries")
    assert ok


def test_c04_variance_scaling():
    res = variance_scaling_VT(P, [4, 8, 16, 32], replicas=4000, n_modes=256, seed=4)
    i8 = res["T"].index(8.0)
    exact8 = res["exact"][i8] * res["mode_factor"]
    z8 = abs(res["mean"][i8] - exact8) / res["stderr"][i8]
    ok = abs(res["slope"] - 1.0) <= 0.05 and z8 < 3.0
    record(4, "V_T variance scaling", ok,
           f"slope {res['slope']:.4f} +- {res['slope_stderr']:.4f}, T=8 z {z8:.2f}")
    assert ok


def test_c05_taylor_kubo():
    v = {ab: taylor_kubo(SpectrumParams(alpha=ab[0], beta=ab[1]))
         for ab in ((0.4, 0.4), (0.5, 0.75), (0.5, 0.5))}
    fin = v[(0.4, 0.4)]
    ok = (fin.verdict == "finite" and fin.value is not None
          and v[(0.5, 0.75)].verdict == "divergent" and v[(0.5, 0.5)].verdict == "divergent")
    detail = ", ".join(f"{k}: {r.verdict}" for k, r in v.items())
    if fin.value is not None:
        detail += f", D(0.4,0.4) trace {np.trace(fin.value):.5g}"
    record(5, "Taylor-Kubo dichotomy", ok, detail)
    assert ok


@pytest.mark.slow
def test_c06_anomalous_diffusion():
    H = scaling_exponents(P).hurst
    lags = [1, 1.5, 2, 3, 4, 5, 6, 8, 10]
    cfg = TrajectoryConfig(T=64, t_max=10.0, dt=0.25, integrator="midpoint", courant=0.5)
    run = simulate_tracers(P, cfg, 2000, n_modes=64, seed=6)
    fit = estimate_hurst(msd_curve(run.z, run.times, lags))
    ctrl = simulate_tracers(P, cfg, 2000, n_modes=64, seed=6, control="gaussian_white")
    fc = estimate_hurst(msd_curve(ctrl.z, ctrl.times, lags))
    slope, cslope = 2 * fit.hurst, fc.fit.slope
    ok = abs(slope - 2 * H) <= 0.10 and abs(cslope - 1.0) <= 0.05
    record(6, "anomalous diffusion", ok,
           f"MSD slope {slope:.4f} +- {2 * fit.hurst_stderr:.4f} (target {2 * H:.4f}), "
           f"control slope {cslope:.4f} +- {fc.fit.stderr:.4f}")
    assert ok


def test_c07_frozen_field_proximity():
    meds = []
    for T in (8, 32, 128):
        cfg = TrajectoryConfig(T=T, t_max=1.0, dt=0.05, integrator="midpoint", courant=0.5)
        r = simulate_tracers(P, cfg, 200, n_modes=64, seed=7, want=("z", "y"))
        dz = np.linalg.norm(r.z[:, -1] - r.y[:, -1], axis=1)
        rms = math.sqrt(np.mean(np.sum(r.y[:, -1] ** 2, axis=1)))
        meds.append(float(np.median(dz) / rms))
    ok = meds[0] > meds[1] > meds[2]
    record(7, "frozen-field proximity", ok,
           "median ratios " + ", ".join(f"T={T}: {m:.4f}" for T, m in zip((8, 32, 128), meds)))
    assert ok


def test_c08_lagrangian_stationarity():
    cfg = TrajectoryConfig(T=8, t_max=3.0, dt=0.05, integrator="midpoint", courant=0.5)
    r = simulate_tracers(P, cfg, 500, n_modes=64, seed=8, want=("lagrangian",))
    L = r.lagrangian
    nt = L.shape[1]
    third = nt // 3
    feats = lambda V: np.stack([V[..., 0], V[..., 1], V[..., 0] ** 2, V[..., 1] ** 2,
                                V[..., 0] * V[..., 1], np.sum(V ** 2, -1) ** 2], -1)
    early = feats(L[:, :third]).mean(1)
    late = feats(L[:, -third:]).mean(1)
    D = late - early
    z = np.abs(D.mean(0)) / (D.std(0, ddof=1) / math.sqrt(D.shape[0]))
    ok = bool(z.max() < 3.0)
    record(8, "Lagrangian stationarity", ok, f"max z {z.max():.2f} over {z.size} moments")
    assert ok


def test_c09_limit_moments():
    cfg = LimitPathConfig("spectral_Z", (0.0, 1.0), params=P, grid_cells=100, n_modes=128,
                          n_replicas=20_000)
    Z = simulate_spectral(cfg, seed=9).paths["Z"][:, -1, :]
    zs, lines, ok = [], [], True
    for n in (2, 3, 4):
        pred = moment_Z(MomentSpec(((1.0, 1.0),), n), n, P, 16 if n < 4 else 12)
        per = (Z ** n).mean(1)
        m, se = per.mean(), per.std(ddof=1) / math.sqrt(per.size)
        z = abs(m - pred.value) / math.hypot(se, pred.error)
        zs.append(z)
        lines.append(f"E Z^{n} {m:.5g}+-{se:.2g} vs {pred.value:.5g} (z {z:.2f})")
    cu = cumulants(Z[:, 0])
    zsk = cu.skewness / cu.errors["skewness"]
    zku = cu.excess_kurtosis / cu.errors["excess_kurtosis"]
    ok = max(zs) < 3.0 and zsk > 5 and zku > 5
    lines.append(f"skew {cu.skewness:.3f} ({zsk:.1f} sigma), "
                 f"excess kurtosis {cu.excess_kurtosis:.3f} ({zku:.1f} sigma)")
    record(9, "limit-process moments", ok, "; ".join(lines))
    assert ok


@pytest.mark.slow
def test_c10_rosenblatt_equivalence():
    rep = rosenblatt_equivalence_report(P, n_replicas=10_000, n_modes=128, grid_cells=100,
                                        ma_cells=100, seed=10, t_max=2.0)
    c = rep["checks"]
    ok = all(c[k] for k in ("cov_spectral_vs_ma", "cov_spectral_vs_selfsimilar",
                            "cov_ma_vs_selfsimilar", "selfsim_spectral", "selfsim_ma"))
    zmax = max(np.max(rep[k]) for k in ("z_spectral_vs_ma", "z_spectral_vs_target",
                                         "z_ma_vs_target"))
    ss = rep["selfsim"]
    record(10, "Rosenblatt equivalence", ok,
           f"max covariance z {zmax:.2f} over 75 entries, ratio spectral "
           f"{ss['spectral'][0]:.4f}+-{ss['spectral'][1]:.4f}, moving average "
           f"{ss['moving_average'][0]:.4f}+-{ss['moving_average'][1]:.4f}, "
           f"target {ss['target']:.4f}")
    assert ok


def test_c11_decomposition():
    cfg = LimitPathConfig("spectral_Z", (0.0, 0.5, 1.0), params=P, grid_cells=50, n_modes=64,
                          n_replicas=4000)
    lp = simulate_spectral(cfg, seed=11, kinds=("X", "Xtilde", "Z"))
    X, Xt, Z = (lp.paths[k] for k in ("X", "Xtilde", "Z"))
    rel = float(np.abs(Z - X - Xt).max() / np.abs(Z).max())
    a, b = X[:, -1, :], Xt[:, -1, :]
    zc = []
    for j, jp in itertools.product(range(2), repeat=2):
        pr = a[:, j] * b[:, jp]
        zc.append(abs(pr.mean()) / (pr.std(ddof=1) / math.sqrt(pr.size)))
    ok = rel < 1e-10 and max(zc) < 3.0
    record(11, "Z = X + X~ decomposition", ok,
           f"relative residual {rel:.2e}, max |z| of E X_j X~_j' {max(zc):.2f}")
    assert ok


def test_c12_product_formula():
    runs = [validate_product_formula(n, grid_cells=6, seed=12) for n in (1, 2, 3)]
    runs += [validate_product_formula(n, grid_cells=6, seed=12, r=1) for n in (2, 3, 4)]
    ok = all(r["passed"] for r in runs)
    record(12, "product formula", ok,
           ", ".join(f"n={r['n']} r={r['r']} z {r['z']:.2f}" for r in runs))
    assert ok


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", *sys.argv[1:]]))
