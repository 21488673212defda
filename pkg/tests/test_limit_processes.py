import math

import numpy as np
import pytest
from scipy import integrate, special

from chaostracer.diagrams import MomentSpec, cycle_constant_C, moment_X
from chaostracer.limit_processes import (LimitPathConfig, cell_covariance, cov_selfsimilar,
                                         holder_check, ma_tail_fraction, ma_variance_constant,
                                         simulate_moving_average, simulate_spectral,
                                         spectral_increment_covariance, variance_constant)
from chaostracer.spectrum_core import ParameterError, SpectrumParams

P = SpectrumParams()
H = 2.0 / 3.0


def test_cov_selfsimilar():
    assert cov_selfsimilar(1.0, 1.0, H, 5.0) == pytest.approx(5.0)
    assert cov_selfsimilar(2.0, 2.0, H, 1.0) == pytest.approx(2 ** (2 * H))
    assert cov_selfsimilar(0.0, 3.0, H, 1.0) == 0.0
    with pytest.raises(ParameterError):
        cov_selfsimilar(1.0, 1.0, H, 0.0)
    with pytest.raises(ParameterError):
        cov_selfsimilar(-1.0, 1.0, H, 1.0)


def test_variance_constants():
    C = cycle_constant_C(P)
    assert variance_constant(P) == pytest.approx(9 * C * C, rel=1e-14)
    # moving average: 2 int int (int (s-y)_+^{H/2-1} (t-y)_+^{H/2-1} dy)^2 ds dt
    #   with the inner integral B(H/2, 1-H) |t-s|^{H-1}
    assert ma_variance_constant(H) == pytest.approx(
        2 * special.beta(H / 2, 1 - H) ** 2 / (H * (2 * H - 1)), rel=1e-14)


def test_cell_covariance_sums_to_integral():
    # cell averages of C |t-s|^{H-1} summed over an n x n grid give
    # C * 2 / (H (H+1)) * (n h)^{H+1} / h^2
    h, n = 0.1, 10
    lags = np.arange(n)
    c = cell_covariance(1.0, H, h, lags)
    M = c[np.abs(lags[:, None] - lags[None, :])]
    total = h * h * M.sum()
    assert total == pytest.approx(2.0 / (H * (H + 1)) * (n * h) ** (H + 1), rel=1e-12)
    # lag one against direct quadrature
    f = lambda t, s: abs(t - s) ** (H - 1)
    direct = integrate.dblquad(f, 0, h, lambda s: h, lambda s: 2 * h)[0] / h ** 2
    assert c[1] == pytest.approx(direct, rel=1e-7)


def test_config_validation():
    with pytest.raises(ParameterError):
        LimitPathConfig("spectral_Z", (0.0, 1.0))
    with pytest.raises(ParameterError):
        LimitPathConfig("spectral_Z", (0.1, 1.0), params=P)
    with pytest.raises(ParameterError):
        LimitPathConfig("spectral_Z", (0.0, 0.333, 1.0), params=P, grid_cells=10)
    with pytest.raises(ParameterError):
        LimitPathConfig("moving_average", (0.0, 1.0), hurst=0.4)
    with pytest.raises(ParameterError):
        LimitPathConfig("spectral_Z", (0.0, 1.0), params=P, hurst=0.7)
    with pytest.raises(ParameterError):
        LimitPathConfig("nope", (0.0, 1.0), params=P)
    c = LimitPathConfig("spectral_Z", (0.0, 0.5, 1.0), params=P, grid_cells=20)
    assert c.cell_width == pytest.approx(0.05) and c.dim == 2


def test_spectral_reproducible_and_prefix_stable():
    cfg = LimitPathConfig("spectral_Z", (0.0, 0.5, 1.0), params=P, grid_cells=20, n_modes=16,
                          n_replicas=120)
    a = simulate_spectral(cfg, seed=3).paths["Z"]
    b = simulate_spectral(cfg, seed=3).paths["Z"]
    assert np.array_equal(a, b)
    small = LimitPathConfig("spectral_Z", (0.0, 0.5, 1.0), params=P, grid_cells=20,
                            n_modes=16, n_replicas=60)
    assert np.array_equal(simulate_spectral(small, seed=3).paths["Z"], a[:60])
    assert np.all(a[:, 0] == 0)


def test_spectral_decomposition_exact():
    cfg = LimitPathConfig("spectral_Z", (0.0, 1.0), params=P, grid_cells=20, n_modes=16,
                          n_replicas=50)
    lp = simulate_spectral(cfg, seed=4, kinds=("X", "Xtilde", "Z"))
    Z, X, Xt = lp.paths["Z"], lp.paths["X"], lp.paths["Xtilde"]
    assert np.abs(Z - X - Xt).max() <= 1e-10 * np.abs(Z).max()


def test_spectral_variance_without_compensation_matches_finite_N_prediction():
    # the uncompensated generator has the exact finite-N covariance
    N, cells = 32, 20
    cfg = LimitPathConfig("spectral_Z", (0.0, 1.0), params=P, grid_cells=cells, n_modes=N,
                          n_replicas=6000, compensate=False)
    lp = simulate_spectral(cfg, seed=5)
    z = lp.paths["Z"][:, -1, :]
    per = (z ** 2).mean(1)
    cov = spectral_increment_covariance(P, N, 1.0 / cells, cells)
    lags = np.arange(cells)
    pred = (1.0 / cells) ** 2 * cov[np.abs(lags[:, None] - lags[None, :])].sum()
    se = per.std(ddof=1) / math.sqrt(per.size)
    assert abs(per.mean() - pred) < 4 * se
    assert pred < variance_constant(P)


def test_spectral_compensated_variance():
    cfg = LimitPathConfig("spectral_Z", (0.0, 1.0), params=P, grid_cells=20, n_modes=32,
                          n_replicas=6000)
    lp = simulate_spectral(cfg, seed=6)
    per = (lp.paths["Z"][:, -1, :] ** 2).mean(1)
    se = per.std(ddof=1) / math.sqrt(per.size)
    assert abs(per.mean() - variance_constant(P)) < 4 * se
    assert lp.meta["compensated"]


def test_moving_average_variance_and_shape():
    lp = simulate_moving_average(H, (0.0, 0.5, 1.0), 20, seed=7, n_replicas=6000)
    Z = lp.paths["Ztilde"]
    assert Z.shape == (6000, 3, 2)
    per = (Z[:, -1, :] ** 2).mean(1)
    se = per.std(ddof=1) / math.sqrt(per.size)
    assert abs(per.mean() - ma_variance_constant(H)) < 4 * se
    a = simulate_moving_average(H, (0.0, 1.0), 20, seed=7, n_replicas=100).paths["Ztilde"]
    b = simulate_moving_average(H, (0.0, 1.0), 20, seed=7, n_replicas=100).paths["Ztilde"]
    assert np.array_equal(a, b)


def test_ma_tail_fraction_decreases():
    assert ma_tail_fraction(H, 1e6, 1.0) < ma_tail_fraction(H, 1e3, 1.0)


def test_holder_check_brownian_and_smooth():
    rng = np.random.default_rng(0)
    t = np.linspace(0, 1, 1025)
    # a linear path has modulus exactly proportional to the lag
    slope, ok = holder_check(2.0 * t, t, H)
    assert slope == pytest.approx(1.0, abs=1e-12) and ok
    bm = np.concatenate([[0], np.cumsum(rng.standard_normal(1024))]) / 32
    slope_bm, ok_bm = holder_check(bm, t, H)
    assert slope_bm < H - 0.1 and not ok_bm
    with pytest.raises(ParameterError):
        holder_check(np.zeros(9), np.linspace(0, 1, 9), H)


def test_moment_X_second_moment_is_share_of_Z():
    # E X_j(1)^2 = (d-1)/d E Z_j(1)^2
    spec = MomentSpec(((1.0, 1.0),), 2, components=(0, 0))
    r = moment_X(spec, 2, P, budget=2 ** 16, seed=1)
    exact = 0.5 * variance_constant(P)
    assert abs(r.value - exact) < 4 * r.error + 2e-3 * exact
