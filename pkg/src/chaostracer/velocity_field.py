"""Synthesis of the second-chaos velocity field and its exact second-order
statistics.

The field is

    V_j(t, x) = sum_{j'} sum_{m, n != m-bar} e^{i(k_m+k_n).x} P_{jj'}(k_m+k_n)
                A_m A_n g_{j',m}(t) g_{j',n}(t),

where ``P`` is the projector ``Gamma`` (velocity fields and the limit
process ``X``), the identity (``Z``) or ``I - Gamma`` (``X-tilde``).  The
pairs ``n = m-bar`` are the only ones with a nonzero Wick constant
``E[g_m g_n]``; they have ``k_m + k_n = 0`` and are excluded, so the sum is
already centered.

With the modes split into a stored half ``H`` and its reflection, the sum
collapses to

    V_j = sum_{j'} 2 Re(u^T P+ u) + 2 u^H P- u,   u = A g e^{i k.x},

with ``P+_{mn} = P(k_m + k_n)`` and ``P-_{mn} = P(k_m - k_n)`` (zero
diagonal), both real symmetric ``N/2 x N/2`` matrices.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import integrate
from scipy.stats import qmc

from .spectrum_core import (ParameterError, SpectrumParams, ScalingExponents, cutoff, rate,
                            gamma_project_batch, scaling_exponents, spectral_mass,
                            sphere_area)
from .noise_modes import (ModeSet, OUEnsemble, build_mode_set, build_limit_mode_set,
                          ou_init_stationary, ou_decay_and_noise, _radial_icdf)
from .seeding import BlockStreams, purpose_stream

__all__ = [
    "VARIANTS",
    "FieldSampler",
    "make_sampler",
    "evaluate_field",
    "evaluate_field_exact",
    "middle_factor",
    "pair_matrices",
    "quadratic_field",
    "FieldBatch",
    "CovResult",
    "covariance_R",
    "radial_covariance_trace",
    "energy_spectrum_hat",
    "TKResult",
    "taylor_kubo",
    "variance_scaling_VT",
    "covariance_mc",
]

#: variant -> (middle factor, spatial phase used)
VARIANTS = {
    "V": ("gamma", True),
    "V_T": ("gamma", True),
    "X": ("gamma", False),
    "Z": ("identity", False),
    "Xtilde": ("complement", False),
}


def middle_factor(kind: str, K: np.ndarray) -> np.ndarray:
    """Middle factor at total wavevectors ``K`` of shape (..., d)."""
    d = K.shape[-1]
    if kind == "gamma":
        return gamma_project_batch(K)
    if kind == "identity":
        return np.broadcast_to(np.eye(d), K.shape[:-1] + (d, d)).copy()
    if kind == "complement":
        nz = (np.einsum("...i,...i->...", K, K) > 0)[..., None, None]
        return np.where(nz, np.eye(d) - gamma_project_batch(K), 0.0)
    raise ParameterError(f"unknown middle factor {kind!r}")


def pair_matrices(k_half: np.ndarray, kind: str) -> np.ndarray:
    """Stacked pair matrices for the half-mode quadratic form.

    Parameters
    ----------
    k_half : ndarray, shape (..., h, d)
    kind : str
        Middle factor.

    Returns
    -------
    ndarray, shape (d, ..., 2*d*h, h)
        For each source index ``j'`` the rows are ordered
        ``[j][+/-][m]`` so that one product with ``u_{j'}`` yields every
        ``P+^{jj'} u`` and ``P-^{jj'} u``.
    """
    d = k_half.shape[-1]
    h = k_half.shape[-2]
    Kp = k_half[..., :, None, :] + k_half[..., None, :, :]
    Km = k_half[..., :, None, :] - k_half[..., None, :, :]
    Pp = middle_factor(kind, Kp)  # (..., h, h, d, d)
    Pm = middle_factor(kind, Km)
    idx = np.arange(h)
    Pm[..., idx, idx, :, :] = 0.0
    lead = k_half.shape[:-2]
    out = np.empty((d,) + lead + (d, 2, h, h))
    for jp in range(d):
        out[jp, ..., :, 0, :, :] = np.moveaxis(Pp[..., :, :, :, jp], -1, -3)
        out[jp, ..., :, 1, :, :] = np.moveaxis(Pm[..., :, :, :, jp], -1, -3)
    return out.reshape((d,) + lead + (2 * d * h, h))


def quadratic_field(P: np.ndarray, u: np.ndarray, shared: bool) -> np.ndarray:
    """Evaluate ``V`` from half-mode amplitudes.

    Parameters
    ----------
    P : ndarray
        Output of :func:`pair_matrices`; shape (d, 2dh, h) when ``shared``
        else (d, B, 2dh, h).
    u : ndarray, shape (B, d, h), complex
        ``A g e^{ik.x}`` per replica and noise index.
    """
    B, d, h = u.shape
    V = np.zeros((B, d))
    for jp in range(d):
        uj = u[:, jp, :]
        if shared:
            U = np.concatenate([uj.real, uj.imag], axis=0).T  # (h, 2B)
            R = P[jp] @ U  # (2dh, 2B)
            W = (R[:, :B] + 1j * R[:, B:]).T.reshape(B, d, 2, h)
        else:
            U = np.stack([uj.real, uj.imag], axis=-1)  # (B, h, 2)
            R = np.matmul(P[jp], U)  # (B, 2dh, 2)
            W = (R[..., 0] + 1j * R[..., 1]).reshape(B, d, 2, h)
        V += 2.0 * np.einsum("bm,bjm->bj", uj, W[:, :, 0, :]).real
        V += 2.0 * np.einsum("bm,bjm->bj", np.conj(uj), W[:, :, 1, :]).real
    return V


@dataclass
class FieldSampler:
    """Single-realization field evaluator.

    Attributes
    ----------
    params : SpectrumParams
    exponents : ScalingExponents
    modes : ModeSet
    ensemble : OUEnsemble
    variant : str
        One of :data:`VARIANTS`.
    T : float
    wick_table : ndarray, shape (N,)
        ``E[g_m g_{m-bar}] = 1/(2 theta_m)``; these pairs are excluded.
    """

    params: SpectrumParams
    exponents: ScalingExponents
    modes: ModeSet
    ensemble: OUEnsemble
    variant: str = "V"
    T: float = 1.0
    seed: int | None = None
    n_modes_requested: int | None = None
    wick_table: np.ndarray = field(default=None, repr=False)
    _P: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ParameterError(f"unknown variant {self.variant!r}")
        if self.wick_table is None:
            self.wick_table = 0.5 / self.modes.theta

    @property
    def P(self) -> np.ndarray:
        if self._P is None:
            kind = VARIANTS[self.variant][0]
            self._P = pair_matrices(self.modes.k[: self.modes.half], kind)
        return self._P


def make_sampler(params: SpectrumParams, n_modes: int = 256, variant: str = "V",
                 T: float = 1.0, seed: int = 0, scheme: str = "radial_stratified",
                 random_modes: bool = True, h: float | None = None) -> FieldSampler:
    """Build modes, a stationary ensemble and the sampler in one call.

    For the limit variants (``X``, ``Z``, ``Xtilde``) the modes sample the
    kernel ``a0 |k|^{1-alpha-d}`` tuned to time resolution ``h``.
    """
    if variant not in VARIANTS:
        raise ParameterError(f"unknown variant {variant!r}")
    if variant in ("X", "Z", "Xtilde"):
        rng = purpose_stream(seed, "modes") if random_modes else None
        modes = build_limit_mode_set(params, n_modes, h or 1e-2, rng=rng)
    else:
        Ts = T if variant == "V_T" else 1.0
        modes = build_mode_set(params, n_modes, scheme, T_scale=Ts,
                               seed=seed if random_modes else None)
    ens = ou_init_stationary(modes, seed)
    return FieldSampler(params, scaling_exponents(params), modes, ens, variant,
                        T if variant == "V_T" else 1.0, seed=seed, n_modes_requested=n_modes)


def _check(sampler: FieldSampler, t):
    if sampler.ensemble.modes is not sampler.modes:
        raise ParameterError("ensemble and sampler use different mode sets")
    if t is not None and abs(sampler.ensemble.time - t) > 1e-9 * max(1.0, abs(t)):
        raise ParameterError(f"sampler time {sampler.ensemble.time} != requested {t}")


def _phase_x(sampler: FieldSampler, x):
    if not VARIANTS[sampler.variant][1] or x is None:
        return None
    return np.asarray(x, dtype=float)


def evaluate_field(sampler: FieldSampler, t, x) -> np.ndarray:
    """Velocity at ``(t, x)`` using the factorized half-mode path.

    For ``V_T`` the modes carry the ``T`` scaling and ``x`` is the field
    argument itself (a tracer at ``z`` passes ``z/T``).
    """
    _check(sampler, t)
    m = sampler.modes
    h = m.half
    xs = _phase_x(sampler, x)
    g = sampler.ensemble.g
    u = m.amp[:h] * g
    if xs is not None:
        u = u * np.exp(1j * (m.k[:h] @ xs))
    return quadratic_field(sampler.P, u[None], shared=True)[0]


def evaluate_field_exact(sampler: FieldSampler, t, x, tol: float = 1e-10) -> np.ndarray:
    """Reference double sum over all ordered mode pairs (small ``N`` only)."""
    _check(sampler, t)
    m = sampler.modes
    xs = _phase_x(sampler, x)
    G = sampler.ensemble.states  # (d, N)
    N = m.n
    K = m.k[:, None, :] + m.k[None, :, :]
    Pm = middle_factor(VARIANTS[sampler.variant][0], K)
    mask = np.ones((N, N), bool)
    mask[np.arange(N), m.pair(np.arange(N))] = False
    ph = np.ones((N, N), complex) if xs is None else np.exp(1j * (K @ xs))
    AA = m.amp[:, None] * m.amp[None, :]
    out = np.zeros(m.d, complex)
    for jp in range(m.d):
        gg = G[jp][:, None] * G[jp][None, :]
        c = np.where(mask, ph * AA * gg, 0.0)
        out += np.einsum("mn,mnj->j", c, Pm[:, :, :, jp])
    mag = max(np.abs(out.real).max(), 1e-300)
    if np.abs(out.imag).max() > tol * mag and np.abs(out.imag).max() > 1e-300:
        raise FloatingPointError(f"imaginary residue {np.abs(out.imag).max():.3e}")
    return out.real


class FieldBatch:
    """Vectorized field for a batch of independent replicas.

    Each replica has its own random mode set (``shared=False``) or all
    replicas share one deterministic/random set (``shared=True``).  Replica
    ``r`` draws modes from stream ``(seed, "modes", r)`` and OU noise from
    the block streams, so its path does not depend on the batch size.

    Parameters
    ----------
    params : SpectrumParams
    variant : str
    n_modes : int
    n_replicas : int
    seed : int
    T : float
        Rescaling for ``V_T``.
    shared : bool
    h : float
        Time resolution for limit mode sets.
    offset : int
        Index of the first replica (for chunked runs).
    """

    def __init__(self, params: SpectrumParams, variant: str, n_modes: int, n_replicas: int,
                 seed: int, T: float = 1.0, shared: bool = False, h: float = 1e-2,
                 offset: int = 0, scheme: str = "radial_stratified",
                 kinds: tuple[str, ...] | None = None):
        if variant not in VARIANTS:
            raise ParameterError(f"unknown variant {variant!r}")
        self.params = params
        self.variant = variant
        self.T = T if variant == "V_T" else 1.0
        self.B = int(n_replicas)
        self.shared = shared
        self.seed = seed
        self.offset = offset
        limit = variant in ("X", "Z", "Xtilde")

        def one(r):
            rng = purpose_stream(seed, "modes", r)
            if limit:
                return build_limit_mode_set(params, n_modes, h, rng=rng)
            return build_mode_set(params, n_modes, scheme, T_scale=self.T, rng=rng)

        if shared:
            ms = one(0)
            hh = ms.half
            self.k = ms.k[:hh]
            self.amp = ms.amp[:hh]
            self.theta = ms.theta[:hh]
            self.modesets = [ms]
        else:
            sets = [one(offset + r) for r in range(self.B)]
            hh = sets[0].half
            self.k = np.stack([s.k[:hh] for s in sets])
            self.amp = np.stack([s.amp[:hh] for s in sets])
            self.theta = np.stack([s.theta[:hh] for s in sets])
            self.modesets = sets
        self.h = hh
        self.d = params.d
        self.phase = VARIANTS[variant][1]
        kinds = kinds or (VARIANTS[variant][0],)
        self.P = {kd: pair_matrices(self.k, kd) for kd in kinds}
        self.kind = VARIANTS[variant][0]
        self.init_streams = BlockStreams(seed, "init", self.B, offset)
        self.noise = BlockStreams(seed, "noise", self.B, offset)
        self.time = 0.0
        self.g = self._stationary(self.init_streams)

    def _var(self):
        return 0.5 / self.theta

    def _stationary(self, streams):
        z = streams.complex_normal(self.d, self.h)
        v = self._var()
        v = v[:, None, :] if v.ndim == 2 else v[None, None, :]
        return z * np.sqrt(v)

    def _theta_b(self):
        return self.theta[:, None, :] if self.theta.ndim == 2 else self.theta[None, None, :]

    def step(self, dt: float) -> None:
        """Exact OU step of all replicas."""
        if not dt > 0:
            raise ParameterError("dt must be positive")
        q, sd = ou_decay_and_noise(self._theta_b(), dt)
        z = self.noise.complex_normal(self.d, self.h)
        self.g = q * self.g + sd * z
        self.time += dt

    def redraw(self) -> None:
        """Replace the states by an independent stationary draw."""
        self.g = self._stationary(self.noise)

    def amplitudes(self, x=None) -> np.ndarray:
        amp = self.amp[:, None, :] if self.amp.ndim == 2 else self.amp[None, None, :]
        u = amp * self.g
        if self.phase and x is not None:
            x = np.asarray(x, dtype=float)
            if x.ndim == 1:
                x = np.broadcast_to(x, (self.B, self.d))
            if self.shared:
                ph = np.exp(1j * (x @ self.k.T))  # (B, h)
            else:
                ph = np.exp(1j * np.einsum("bmd,bd->bm", self.k, x))
            u = u * ph[:, None, :]
        return u

    def velocity(self, x=None, kind: str | None = None) -> np.ndarray:
        """Field at the (already rescaled) spatial arguments ``x``, shape (B, d)."""
        return quadratic_field(self.P[kind or self.kind], self.amplitudes(x), self.shared)


# ---------------------------------------------------------------------------
# exact second-order statistics


@dataclass
class CovResult:
    value: np.ndarray
    stderr: np.ndarray
    n_points: int
    divergent: bool = False


def _integrable(params) -> bool:
    return params.alpha < 1.0


def _sample_k(params, U: np.ndarray) -> np.ndarray:
    """Map uniforms of shape (n, d) to wavevectors with density ``a|k|^{1-alpha-d}/M``."""
    rho = _radial_icdf(params, U[:, 0])
    d = params.d
    if d == 2:
        phi = 2.0 * np.pi * U[:, 1]
        e = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    else:
        z = 2.0 * U[:, 1] - 1.0
        phi = 2.0 * np.pi * U[:, 2]
        s = np.sqrt(np.maximum(1.0 - z * z, 0.0))
        e = np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)
    return rho[:, None] * e


def covariance_R(params: SpectrumParams, t: float, x, budget: int = 2 ** 16,
                 seed: int = 0, n_scrambles: int = 16) -> CovResult:
    """Covariance ``R_{jj'}(t, x) = E[V_j(t+t', x+x') V_{j'}(t', x')]``.

    Computed as ``2 M^2 E[cos((k+k').x) Gamma(k+k') e^{-(r+r')|t|/2}]`` with
    ``k, k'`` drawn from the normalized spectral density through
    scrambled Sobol points and the radial inverse CDF.  The standard error
    comes from independent scrambles.
    """
    d = params.d
    nan = np.full((d, d), np.nan)
    if not _integrable(params):
        return CovResult(nan, nan, 0, divergent=True)
    if budget < 1000:
        raise ParameterError("budget must be >= 1000 points")
    m = max(int(round(math.log2(budget / n_scrambles))), 4)
    x = np.zeros(d) if x is None else np.asarray(x, dtype=float)
    M = spectral_mass(params)
    ests = []
    for s in range(n_scrambles):
        sob = qmc.Sobol(2 * d, scramble=True, seed=purpose_stream(seed, "aux", s))
        U = sob.random_base2(m)
        U = np.clip(U, 1e-16, 1 - 1e-16)
        k1 = _sample_k(params, U[:, :d])
        k2 = _sample_k(params, U[:, d:])
        K = k1 + k2
        G = gamma_project_batch(K)
        wt = np.cos(K @ x) * np.exp(-0.5 * (rate(params, np.linalg.norm(k1, axis=1))
                                            + rate(params, np.linalg.norm(k2, axis=1))) * abs(t))
        ests.append(2.0 * M * M * np.einsum("n,nij->ij", wt, G) / len(wt))
    ests = np.array(ests)
    return CovResult(ests.mean(0), ests.std(0, ddof=1) / math.sqrt(n_scrambles),
                     n_scrambles * 2 ** m)


def radial_covariance_trace(params: SpectrumParams, t: float) -> float:
    """``tr R(t, 0) = 2(d-1) (int a(|k|)|k|^{1-alpha-d} e^{-r(|k|)|t|/2} dk)^2``.

    Nested 1-d quadrature; used as an independent oracle.
    """
    s = 1.0 - params.alpha
    R = params.cutoff_radius

    def f(v):
        rho = v ** (1.0 / s)
        return float(cutoff(params, rho)) * math.exp(-0.5 * float(rate(params, rho)) * abs(t)) / s

    val, _ = integrate.quad(f, 0.0, R ** s, points=[(0.5 * R) ** s], epsabs=0, epsrel=1e-12,
                            limit=200)
    F = sphere_area(params.d) * val
    return 2.0 * (params.d - 1) * F * F


def energy_spectrum_hat(params: SpectrumParams, t: float, xi: float, budget: int = 400) -> float:
    """Energy spectrum ``E-hat(t, xi)`` of the synthesized field.

    ``E-hat(t, xi) = 2 xi^{d-1} int s(|xi e - l|) s(|l|) e^{-(r(|xi e-l|)+r(|l|))|t|/2} dl``
    with ``s(rho) = a(rho) rho^{1-alpha-d}``, so that
    ``R(t, x) = int e^{ik.x} Gamma(k) E-hat(t,|k|) |k|^{1-d} dk``.

    The convolution is split symmetrically along the bisector
    ``|l| < |xi e - l|`` (factor 2); on that half the singular factor
    ``s(|l|)`` is handled by polar coordinates around the origin with
    ``rho = v^{1/(1-alpha)}``, leaving a bounded integrand.  ``budget`` is
    the number of Gauss-Legendre nodes per dimension.
    """
    if not xi > 0:
        raise ParameterError("xi must be positive")
    if not _integrable(params):
        return float("nan")
    d = params.d
    R = params.cutoff_radius
    if xi >= 2.0 * R:
        return 0.0
    s = 1.0 - params.alpha
    n = max(int(budget), 16)
    xv, wv = np.polynomial.legendre.leggauss(n)
    # v in [0, R^s] split where the hat bends
    brk = sorted({0.0, (0.5 * R) ** s, R ** s})
    vs, ws = [], []
    for lo, hi in zip(brk[:-1], brk[1:]):
        vs.append(lo + (hi - lo) * (xv + 1) / 2)
        ws.append(wv * (hi - lo) / 2)
    v = np.concatenate(vs)
    wv_ = np.concatenate(ws)
    rho = v ** (1.0 / s)
    # angular variable restricted to the half |l| < |xi e - l|, i.e. cos < xi/(2 rho)
    xa, wa = np.polynomial.legendre.leggauss(n)
    cmax = np.minimum(1.0, xi / (2.0 * rho))[:, None]
    if d == 2:
        phi0 = np.arccos(cmax)
        ang = phi0 + (np.pi - phi0) * (xa + 1) / 2
        C = np.cos(ang)
        wang = 2.0 * wa * (np.pi - phi0) / 2  # two mirror half planes
    else:
        C = -1.0 + (cmax + 1.0) * (xa + 1) / 2
        wang = 2.0 * np.pi * wa * (cmax + 1.0) / 2
    RHO = np.broadcast_to(rho[:, None], C.shape)
    other = np.sqrt(np.maximum(xi * xi + RHO * RHO - 2.0 * xi * RHO * C, 0.0))
    so = cutoff(params, other) * np.maximum(other, 1e-300) ** (s - d)
    # radial measure: s(rho) rho^{d-1} d rho = a(rho) rho^{-alpha} d rho = a(rho) dv / s
    dec = np.exp(-0.5 * (rate(params, RHO) + rate(params, other)) * abs(t))
    integrand = cutoff(params, RHO) / s * so * dec * wang
    val = np.einsum("i,ij->", wv_, integrand)
    return float(2.0 * 2.0 * xi ** (d - 1) * val)


@dataclass
class TKResult:
    verdict: str
    value: np.ndarray | None
    partial: list
    cutoffs: list
    ratios: list


def _tk_partial(params: SpectrumParams, eps: float, n_per_decade: int = 24) -> float:
    """``int int_{eps<|k|,|k'|} s(k) s(k') 2/(r(k)+r(k')) dk dk'`` (radial)."""
    R = params.cutoff_radius
    lo = math.log(eps)
    brk = [lo, math.log(0.5 * R), math.log(R)]
    x, w = np.polynomial.legendre.leggauss(n_per_decade)
    us, ws = [], []
    for a, b in zip(brk[:-1], brk[1:]):
        npan = max(int(math.ceil((b - a) / math.log(10.0))), 1)
        edges = np.linspace(a, b, npan + 1)
        for c, e in zip(edges[:-1], edges[1:]):
            us.append(c + (e - c) * (x + 1) / 2)
            ws.append(w * (e - c) / 2)
    u = np.concatenate(us)
    wu = np.concatenate(ws)
    rho = np.exp(u)
    # s(rho) rho^{d-1} d rho = a rho^{1-alpha} du
    g = wu * cutoff(params, rho) * rho ** (1.0 - params.alpha)
    r = rate(params, rho)
    S = sphere_area(params.d)
    return float(S * S * np.einsum("i,j,ij->", g, g, 2.0 / (r[:, None] + r[None, :])))


def taylor_kubo(params: SpectrumParams, refinement_levels: int = 4, factor: float = 100.0,
                tol: float = 1e-2) -> TKResult:
    """Diffusivity ``D = int_0^inf (R(t,0) + R(t,0)^T) dt`` or a divergence verdict.

    The time integral is done analytically, leaving the wavenumber integral
    with an infrared cutoff ``eps_l = R / factor^l``.  The value is finite
    when the increments contract geometrically and the extrapolated tail is
    below ``tol`` relative; otherwise the verdict is ``"divergent"``.
    """
    if refinement_levels < 2:
        raise ParameterError("refinement_levels must be >= 2")
    d = params.d
    cuts = [params.cutoff_radius / factor ** (l + 1) for l in range(refinement_levels + 1)]
    part = [(4.0 * (d - 1) / d) * _tk_partial(params, e) for e in cuts]
    inc = np.diff(part)
    ratios = list(inc[1:] / inc[:-1]) if len(inc) > 1 else []
    finite = all(0 < q < 0.5 for q in ratios) and len(ratios) > 0
    if finite:
        q = ratios[-1]
        tail = inc[-1] * q / (1.0 - q)
        total = part[-1] + tail
        finite = abs(tail) < tol * total
    if finite:
        return TKResult("finite", total * np.eye(d), part, cuts, ratios)
    return TKResult("divergent", None, part, cuts, ratios)


def variance_scaling_VT(params: SpectrumParams, T_list, replicas: int = 4000,
                        n_modes: int = 256, seed: int = 0, chunk: int = 500) -> dict:
    """Monte Carlo ``E|V_T(0,0)|^2`` for each ``T`` and the log-log slope.

    Returns a dict with per-``T`` means and standard errors, the fitted
    slope with its error, the closed form ``2(d-1) M_T^2`` and an
    ``unstable`` flag when any relative 95% interval exceeds 50%.
    """
    from .stats import weighted_loglog_fit

    T_list = [float(T) for T in T_list]
    if len(T_list) < 3 or any(b <= a for a, b in zip(T_list[:-1], T_list[1:])):
        raise ParameterError("T_list must be increasing with at least 3 values")
    means, errs, exact = [], [], []
    for i, T in enumerate(T_list):
        vals = []
        for off in range(0, replicas, chunk):
            n = min(chunk, replicas - off)
            fb = FieldBatch(params, "V_T", n_modes, n, seed=seed + 7919 * (i + 1), T=T,
                            offset=off)
            V = fb.velocity(np.zeros(params.d))
            vals.append(np.sum(V * V, axis=1))
        vals = np.concatenate(vals)
        means.append(vals.mean())
        errs.append(vals.std(ddof=1) / math.sqrt(len(vals)))
        exact.append(2.0 * (params.d - 1) * spectral_mass(params, T) ** 2)
    fit = weighted_loglog_fit(np.array(T_list), np.array(means), np.array(errs))
    rel = 1.96 * np.array(errs) / np.array(means)
    return {
        "T": T_list,
        "mean": means,
        "stderr": errs,
        "exact": exact,
        "mode_factor": 1.0 - 1.0 / n_modes,
        "slope": fit.slope,
        "slope_stderr": fit.stderr,
        "unstable": bool(np.any(rel > 0.5)),
    }


def covariance_mc(params: SpectrumParams, t: float, x, n_replicas: int = 10_000,
                  n_modes: int = 2048, seed: int = 0, block: int = 100) -> CovResult:
    """Monte Carlo ``E[V(t, x) V(0, 0)^T]`` from synthesized fields.

    Replicas come in blocks that share one random mode set (block ``b``
    uses seed ``seed + b``), so the pair matrices are built once per block.
    The estimate is the mean of the block means and the standard error is
    taken across blocks.  Its expectation is ``(1 - 1/N) R(t, x)``.
    """
    if n_replicas < 2 * block:
        raise ParameterError("need at least two blocks of replicas")
    if not t >= 0:
        raise ParameterError("t must be nonnegative")
    d = params.d
    x = np.zeros(d) if x is None else np.asarray(x, dtype=float)
    n_blocks = n_replicas // block
    means = np.empty((n_blocks, d, d))
    for b in range(n_blocks):
        fb = FieldBatch(params, "V", n_modes, block, seed=seed + b, shared=True)
        v0 = fb.velocity(np.zeros((block, d)))
        if t > 0:
            fb.step(t)
        v1 = fb.velocity(np.broadcast_to(x, (block, d)))
        means[b] = np.einsum("bi,bj->ij", v1, v0) / block
    se = means.std(axis=0, ddof=1) / math.sqrt(n_blocks)
    return CovResult(means.mean(axis=0), se, n_blocks * block)
