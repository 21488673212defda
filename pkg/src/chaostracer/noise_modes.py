"""Spectral discretization of the white noise and exact OU mode processes.

A :class:`ModeSet` stores ``N`` wavevectors arranged as two halves: mode
``m < N/2`` and its reflection ``m + N/2`` with ``k_{m+N/2} = -k_m``.  The
associated complex OU states obey ``g_{m+N/2} = conj(g_m)``, so only the
first half is stored in an :class:`OUEnsemble`.

The folded amplitude ``A_m`` satisfies

    A_m**2 / (2 theta_m) = w_m * s(k_m),

with ``s`` the spectral density of the chosen variant, so the rate
dependence cancels out of every equal-time second moment.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
import json
import math

import numpy as np
from scipy import stats as sstats

from .spectrum_core import (ParameterError, SpectrumParams, cutoff, rate, sphere_area,
                            spectral_mass)
from .seeding import purpose_stream

__all__ = [
    "ModeSet",
    "OUEnsemble",
    "build_mode_set",
    "build_limit_mode_set",
    "limit_importance_constants",
    "ou_init_stationary",
    "ou_step",
    "ou_step_arrays",
    "ou_decay_and_noise",
    "save_ensemble",
    "load_ensemble",
    "random_directions",
]

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModeSet:
    """Symmetric set of Fourier modes.

    Attributes
    ----------
    k : ndarray, shape (N, d)
    weight : ndarray, shape (N,)
        Quadrature cell measure ``w_m``.
    theta : ndarray, shape (N,)
        OU rate ``r(|k_m|)/2``.
    amp : ndarray, shape (N,)
        Folded amplitude ``A_m``.
    density : ndarray, shape (N,)
        Spectral density ``s(k_m)`` of the variant.
    T_scale : float
    kind : str
        ``"cutoff"`` for ``a(|k|/T)|k|^{1-alpha-d}``, ``"limit"`` for
        ``a0 |k|^{1-alpha-d}`` on all of R^d.
    """

    k: np.ndarray
    weight: np.ndarray
    theta: np.ndarray
    amp: np.ndarray
    density: np.ndarray
    T_scale: float = 1.0
    kind: str = "cutoff"

    @property
    def n(self) -> int:
        return self.k.shape[0]

    @property
    def half(self) -> int:
        return self.k.shape[0] // 2

    @property
    def d(self) -> int:
        return self.k.shape[1]

    def pair(self, m):
        """Index of the reflected mode."""
        return (np.asarray(m) + self.half) % self.n

    def stationary_variance(self) -> np.ndarray:
        return 0.5 / self.theta


def random_directions(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """Uniform unit vectors in R^d."""
    if d == 2:
        phi = 2.0 * np.pi * rng.random(n)
        return np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _det_directions(n: int, d: int) -> np.ndarray:
    """Deterministic, well-spread directions (golden-ratio sequences)."""
    i = np.arange(n) + 0.5
    if d == 2:
        phi = 2.0 * np.pi * np.mod(i * 0.6180339887498949, 1.0)
        return np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    z = 1.0 - 2.0 * i / n
    phi = np.pi * (3.0 - math.sqrt(5.0)) * i
    s = np.sqrt(1.0 - z * z)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)


def _half_directions(n: int, d: int) -> np.ndarray:
    """Deterministic directions covering a half sphere (for the lattice)."""
    i = np.arange(n) + 0.5
    if d == 2:
        phi = np.pi * i / n
        return np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    z = 1.0 - i / n
    phi = np.pi * (3.0 - math.sqrt(5.0)) * i
    s = np.sqrt(1.0 - z * z)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)


@lru_cache(maxsize=32)
def _radial_table(params: SpectrumParams, n_grid: int = 16385):
    """Tabulated CDF of the radial density ``a(rho) rho^{-alpha}`` on [0, R].

    The table lives in ``v = rho^{1-alpha}`` where the density is bounded.
    """
    R = params.cutoff_radius
    s = 1.0 - params.alpha
    v = np.linspace(0.0, R ** s, n_grid)
    f = cutoff(params, v ** (1.0 / s))
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(v))])
    cdf /= cdf[-1]
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    return cdf[keep], v[keep]


def _radial_icdf(params: SpectrumParams, u: np.ndarray) -> np.ndarray:
    cdf, v = _radial_table(params)
    return np.interp(u, cdf, v) ** (1.0 / (1.0 - params.alpha))


def _assemble(k_half, w_half, dens_half, theta_half, T_scale, kind):
    k = np.concatenate([k_half, -k_half], axis=0)
    w = np.concatenate([w_half, w_half])
    dens = np.concatenate([dens_half, dens_half])
    theta = np.concatenate([theta_half, theta_half])
    amp = np.sqrt(w * dens * 2.0 * theta)
    return ModeSet(k=k, weight=w, theta=theta, amp=amp, density=dens,
                   T_scale=float(T_scale), kind=kind)


def build_mode_set(params: SpectrumParams, n_modes: int, scheme: str = "radial_stratified",
                   T_scale: float = 1.0, seed: int | None = None,
                   rng: np.random.Generator | None = None) -> ModeSet:
    """Discretize the spectral measure ``a(|k|/T)|k|^{1-alpha-d} dk``.

    Parameters
    ----------
    params : SpectrumParams
    n_modes : int
        Even number of modes (both members of every ``+-k`` pair).
    scheme : {"radial_stratified", "lattice"}
        ``radial_stratified`` draws radii by inverse CDF of
        ``a(rho) rho^{-alpha}`` with one radius per equal-mass stratum, so
        ``w_m s(k_m) = M_T / N`` exactly.  Without a seed the stratum
        midpoints and golden-ratio directions are used; with a seed the
        offsets and directions are random.  ``lattice`` is a deterministic
        polar midpoint rule.
    T_scale : float
        ``1`` for the base field, ``T`` for the rescaled field.
    seed : int, optional
        Randomizes the stratified scheme.
    """
    if int(n_modes) != n_modes or n_modes < 2 or n_modes % 2:
        raise ParameterError(f"n_modes must be a positive even integer, got {n_modes}")
    if T_scale < 1.0:
        raise ParameterError("T_scale must be >= 1")
    n_modes = int(n_modes)
    d = params.d
    h = n_modes // 2
    R = params.cutoff_radius
    if scheme == "radial_stratified":
        if n_modes < 2 * d:
            raise ParameterError(f"radial_stratified needs n_modes >= 2d = {2 * d}")
        if rng is None and seed is not None:
            rng = purpose_stream(seed, "modes")
        if rng is None:
            u = (np.arange(h) + 0.5) / h
            dirs = _det_directions(h, d)
        else:
            u = (np.arange(h) + rng.random(h)) / h
            dirs = random_directions(rng, h, d)
        rho = _radial_icdf(params, u) * T_scale
        rho = np.maximum(rho, 1e-300)
        dens = cutoff(params, rho / T_scale) * rho ** (1.0 - params.alpha - d)
        M = spectral_mass(params, T_scale)
        w = (M / n_modes) / dens
    elif scheme == "lattice":
        n_ang = _closest_divisor(h, h ** (1.0 / d) if d == 3 else math.sqrt(h))
        n_r = h // n_ang
        s = 1.0 - params.alpha
        vedges = np.linspace(0.0, (R * T_scale) ** s, n_r + 1)
        rmid = (0.5 * (vedges[1:] + vedges[:-1])) ** (1.0 / s)
        # each radial cell carries its exact share of the spectral mass
        cdf, vt = _radial_table(params)
        mass = np.diff(np.interp(vedges / T_scale ** s, vt, cdf)) * spectral_mass(params, T_scale)
        dirs1 = _half_directions(n_ang, d)
        rho = np.repeat(rmid, n_ang)
        dirs = np.tile(dirs1, (n_r, 1))
        dens = cutoff(params, rho / T_scale) * rho ** (1.0 - params.alpha - d)
        w = np.repeat(mass, n_ang) / (2.0 * n_ang) / np.maximum(dens, 1e-300)
    else:
        raise ParameterError(f"unknown scheme {scheme!r}")
    k_half = dirs * rho[:, None]
    theta = 0.5 * rate(params, rho)
    if np.any(theta <= 0):
        raise ParameterError("mode with vanishing rate")
    return _assemble(k_half, w, dens, theta, T_scale, "cutoff")


def _closest_divisor(n: int, target: float) -> int:
    divs = [q for q in range(1, n + 1) if n % q == 0]
    return min(divs, key=lambda q: (abs(q - target), q))


def limit_importance_constants(params: SpectrumParams, h: float):
    """Constants of the radial sampling density used for the limit kernel.

    The density is ``p(rho) ∝ rho^{-alpha} / (1 + (rho/rho_h)^{2beta})`` on
    ``(0, inf)`` with ``theta(rho_h) h = 1``.  Returns ``(rho_h, Z)`` with
    ``Z`` the normalizer.
    """
    s = 1.0 - params.alpha
    c = 2.0 * params.beta
    if not s < c:
        raise ParameterError("limit kernel needs alpha + 2 beta > 1")
    rho_h = (2.0 / (params.r0 * h)) ** (1.0 / c)
    Z = rho_h ** s * math.pi / (c * math.sin(math.pi * s / c))
    return rho_h, Z


def build_limit_mode_set(params: SpectrumParams, n_modes: int, h: float,
                         rng: np.random.Generator | None = None) -> ModeSet:
    """Importance-sampled modes for the limit kernel ``a0 |k|^{1-alpha-d}``.

    Radii follow ``p(rho)`` of :func:`limit_importance_constants`, which
    maps to a Beta law after ``u = y/(1+y)``, ``y = (rho/rho_h)^{2beta}``.
    Strata are equal-probability; ``h`` is the time resolution the modes
    are meant to serve.
    """
    if int(n_modes) != n_modes or n_modes < 2 or n_modes % 2:
        raise ParameterError(f"n_modes must be a positive even integer, got {n_modes}")
    d = params.d
    hm = n_modes // 2
    s = 1.0 - params.alpha
    c = 2.0 * params.beta
    rho_h, Z = limit_importance_constants(params, h)
    if rng is None:
        q = (np.arange(hm) + 0.5) / hm
        dirs = _det_directions(hm, d)
    else:
        q = (np.arange(hm) + rng.random(hm)) / hm
        dirs = random_directions(rng, hm, d)
    u = sstats.beta.ppf(q, s / c, 1.0 - s / c)
    y = u / (1.0 - u)
    rho = rho_h * y ** (1.0 / c)
    dens = params.a0 * rho ** (1.0 - params.alpha - d)
    # w * dens = a0 S Z (1 + (rho/rho_h)^c) / N
    w = params.a0 * sphere_area(d) * Z * (1.0 + y) / n_modes / dens
    theta = 0.5 * rate(params, rho)
    return _assemble(dirs * rho[:, None], w, dens, theta, 1.0, "limit")


@dataclass
class OUEnsemble:
    """Complex OU states for one mode set.

    Attributes
    ----------
    modes : ModeSet
    time : float
    g : ndarray, shape (d, N/2), complex
        States of the first half of the modes; the reflected half is the
        complex conjugate.
    rng : numpy.random.Generator
        Stream consumed by :func:`ou_step`.
    """

    modes: ModeSet
    time: float
    g: np.ndarray
    rng: np.random.Generator = field(repr=False)

    @property
    def states(self) -> np.ndarray:
        """Full state array of shape (d, N) with conjugate symmetry."""
        return np.concatenate([self.g, np.conj(self.g)], axis=1)


def ou_init_stationary(modes: ModeSet, seed: int,
                       rng: np.random.Generator | None = None) -> OUEnsemble:
    """Draw every state from its stationary law ``CN(0, 1/(2 theta))``."""
    if modes.n % 2 or modes.n < 2:
        raise ParameterError("invalid mode set")
    rng = rng if rng is not None else purpose_stream(seed, "init")
    h = modes.half
    v = 0.5 / modes.theta[:h]
    z = rng.standard_normal((modes.d, h, 2))
    g = (z[..., 0] + 1j * z[..., 1]) * np.sqrt(0.5 * v)
    return OUEnsemble(modes=modes, time=0.0, g=g, rng=rng)


def ou_decay_and_noise(theta, dt):
    """Return ``(q, sd)``: decay ``e^{-theta dt}`` and innovation std."""
    theta = np.asarray(theta, dtype=float)
    q = np.exp(-theta * dt)
    var = -np.expm1(-2.0 * theta * dt) / (2.0 * theta)
    return q, np.sqrt(var)


def ou_step_arrays(g, theta, dt, z):
    """Exact OU update given standard complex normals ``z`` (``E|z|^2=1``)."""
    q, sd = ou_decay_and_noise(theta, dt)
    return q * g + sd * z


def ou_step(ensemble: OUEnsemble, dt: float) -> OUEnsemble:
    """Advance by ``dt`` with the exact transition law.

    ``g <- e^{-theta dt} g + eta`` with ``E|eta|^2 = (1-e^{-2 theta dt})/(2 theta)``.
    The generator of ``ensemble`` is consumed and carried over.
    """
    if not dt > 0:
        raise ParameterError("dt must be positive")
    m = ensemble.modes
    h = m.half
    zr = ensemble.rng.standard_normal(ensemble.g.shape + (2,))
    z = (zr[..., 0] + 1j * zr[..., 1]) * np.sqrt(0.5)
    g = ou_step_arrays(ensemble.g, m.theta[:h], dt, z)
    return OUEnsemble(modes=m, time=ensemble.time + dt, g=g, rng=ensemble.rng)


def save_ensemble(path, ensemble: OUEnsemble) -> None:
    """Write a versioned checkpoint (mode table, states, generator state)."""
    m = ensemble.modes
    meta = {
        "version": FORMAT_VERSION,
        "time": ensemble.time,
        "T_scale": m.T_scale,
        "kind": m.kind,
        "rng": ensemble.rng.bit_generator.state,
        "bit_generator": type(ensemble.rng.bit_generator).__name__,
    }
    np.savez(path, k=m.k, weight=m.weight, theta=m.theta, amp=m.amp, density=m.density,
             g=ensemble.g, meta=np.frombuffer(json.dumps(meta, default=_jsonable).encode(),
                                                dtype=np.uint8))


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return {"__array__": o.tolist(), "dtype": str(o.dtype)}
    return int(o)


def _unjson(o):
    if isinstance(o, dict):
        if "__array__" in o:
            return np.array(o["__array__"], dtype=o["dtype"])
        return {k: _unjson(v) for k, v in o.items()}
    return o


def load_ensemble(path) -> OUEnsemble:
    with np.load(path) as f:
        meta = json.loads(bytes(f["meta"]).decode())
        if meta.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        m = ModeSet(k=f["k"], weight=f["weight"], theta=f["theta"], amp=f["amp"],
                    density=f["density"], T_scale=meta["T_scale"], kind=meta["kind"])
        g = f["g"]
    bg = getattr(np.random, meta["bit_generator"])()
    bg.state = _unjson(meta["rng"])
    return OUEnsemble(modes=m, time=meta["time"], g=g, rng=np.random.Generator(bg))
