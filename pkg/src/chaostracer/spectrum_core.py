"""Model parameters, scaling exponents, the Leray projector and the
space-time kernels of the second-chaos velocity field.

The velocity field is built from a spectral density
``a(|k|) |k|^{1-alpha-d}`` and a temporal relaxation rate
``r(|k|) = r0 |k|^{2 beta}``.  Everything in this module is a pure
function of an immutable :class:`SpectrumParams` record.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict, fields
from functools import lru_cache
import math

import numpy as np
from scipy import integrate

__all__ = [
    "ParameterError",
    "SpectrumParams",
    "ScalingExponents",
    "CUTOFF_PROFILES",
    "scaling_exponents",
    "sphere_area",
    "cutoff",
    "rate",
    "gamma_project",
    "gamma_project_batch",
    "kernel_eval",
    "log_kernel",
    "spectral_mass",
    "params_to_config",
    "params_from_config",
]

CUTOFF_PROFILES = ("hat", "cosine")


class ParameterError(ValueError):
    """Raised for parameter combinations outside the model's domain."""


@dataclass(frozen=True)
class SpectrumParams:
    """Parameters of the velocity field.

    Attributes
    ----------
    alpha, beta : float
        Spectral and temporal exponents.
    d : int
        Spatial dimension (2 or 3).
    a0 : float
        Value of the cutoff profile at the origin.
    r0 : float
        Rate prefactor, ``r(xi) = r0 * xi**(2 beta)``.
    cutoff_profile : str
        Shape of ``a``; ``"hat"`` is flat up to ``R/2`` then linear to 0 at
        ``R``, ``"cosine"`` is ``a0 cos^2(pi xi / (2R))``.
    cutoff_radius : float
        Support bound ``R`` of ``a``.
    """

    alpha: float = 0.5
    beta: float = 0.75
    d: int = 2
    a0: float = 1.0
    r0: float = 1.0
    cutoff_profile: str = "hat"
    cutoff_radius: float = 1.0

    def __post_init__(self):
        if not (self.alpha < 1.0):
            raise ParameterError(f"alpha must be < 1, got {self.alpha}")
        if not (self.beta > 0.0):
            raise ParameterError(f"beta must be > 0, got {self.beta}")
        if int(self.d) != self.d or self.d not in (2, 3):
            raise ParameterError(f"d must be 2 or 3, got {self.d}")
        if not (self.a0 > 0.0 and self.r0 > 0.0):
            raise ParameterError("a0 and r0 must be positive")
        if self.cutoff_profile not in CUTOFF_PROFILES:
            raise ParameterError(f"unknown cutoff_profile {self.cutoff_profile!r}")
        if not (self.cutoff_radius > 0.0 and np.isfinite(self.cutoff_radius)):
            raise ParameterError("cutoff_radius must be positive and finite")


@dataclass(frozen=True)
class ScalingExponents:
    delta: float
    hurst: float


def scaling_exponents(params: SpectrumParams) -> ScalingExponents:
    """Return ``delta = beta/(alpha+2beta-1)`` and ``H = 1/(2 delta)``."""
    den = params.alpha + 2.0 * params.beta - 1.0
    if den == 0.0:
        raise ParameterError("alpha + 2 beta = 1: scaling exponents undefined")
    delta = params.beta / den
    return ScalingExponents(delta=delta, hurst=den / (2.0 * params.beta))


def sphere_area(d: int) -> float:
    """Area of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def cutoff(params: SpectrumParams, xi):
    """Evaluate the cutoff profile ``a(xi)`` for ``xi >= 0``."""
    xi = np.asarray(xi, dtype=float)
    R = params.cutoff_radius
    u = np.clip(xi / R, 0.0, 1.0)
    if params.cutoff_profile == "hat":
        a = np.where(u <= 0.5, 1.0, 2.0 * (1.0 - u))
    else:
        a = np.cos(0.5 * np.pi * u) ** 2
    return params.a0 * np.where(xi >= R, 0.0, a)


def rate(params: SpectrumParams, xi):
    """Relaxation rate ``r(xi) = r0 xi^{2 beta}``."""
    return params.r0 * np.asarray(xi, dtype=float) ** (2.0 * params.beta)


def gamma_project(k) -> np.ndarray:
    """Projector onto the orthogonal complement of ``k``.

    Parameters
    ----------
    k : array_like, shape (d,)
        Nonzero wavevector.

    Returns
    -------
    ndarray, shape (d, d)
    """
    k = np.asarray(k, dtype=float)
    kk = float(k @ k)
    if kk == 0.0:
        raise ParameterError("projector undefined at k = 0")
    return np.eye(k.size) - np.outer(k, k) / kk


def gamma_project_batch(k: np.ndarray) -> np.ndarray:
    """Vectorized projector for ``k`` of shape (..., d); zero vectors map to 0."""
    k = np.asarray(k, dtype=float)
    kk = np.einsum("...i,...i->...", k, k)
    safe = np.where(kk > 0.0, kk, 1.0)
    d = k.shape[-1]
    G = np.eye(d) - k[..., :, None] * k[..., None, :] / safe[..., None, None]
    return np.where((kk > 0.0)[..., None, None], G, 0.0)


def _log_rate(params, kn):
    return math.log(params.r0) + 2.0 * params.beta * np.log(kn)


def log_kernel(params: SpectrumParams, variant: str, s, sp, k, kp, T: float = 1.0):
    """Natural log of the kernel; ``-inf`` where the cutoff vanishes.

    Arguments are broadcast; ``k`` and ``kp`` carry the vector index last.
    """
    s = np.asarray(s, dtype=float)
    sp = np.asarray(sp, dtype=float)
    if np.any(s < 0) or np.any(sp < 0):
        raise ParameterError("kernel is evaluated at causal lags s, s' >= 0 only")
    kn = np.linalg.norm(np.asarray(k, dtype=float), axis=-1)
    kpn = np.linalg.norm(np.asarray(kp, dtype=float), axis=-1)
    if np.any(kn == 0) or np.any(kpn == 0):
        raise ParameterError("zero wavevector")
    a_, b_, d = params.alpha, params.beta, params.d
    p = 0.5 * (d + a_ - 1.0)
    if variant == "E_inf":
        lk = math.log(params.a0 * params.r0) + (b_ - p) * (np.log(kn) + np.log(kpn))
        decay = 0.5 * params.r0 * (kn ** (2 * b_) * s + kpn ** (2 * b_) * sp)
        return lk - decay
    if variant == "E":
        T = 1.0
    elif variant != "E_T":
        raise ParameterError(f"unknown kernel variant {variant!r}")
    if not T > 0:
        raise ParameterError("T must be positive")
    # r_T(xi) = T^{2beta} r(xi/T), which equals r(xi) for the power-law rate
    with np.errstate(divide="ignore"):
        la = np.log(cutoff(params, kn / T)) + np.log(cutoff(params, kpn / T))
    lr = _log_rate(params, kn) + _log_rate(params, kpn)
    decay = 0.5 * (rate(params, kn) * s + rate(params, kpn) * sp)
    return 0.5 * (lr + la) - p * (np.log(kn) + np.log(kpn)) - decay


def kernel_eval(variant: str, s, sp, k, kp, params: SpectrumParams | None = None,
                T: float = 1.0):
    """Evaluate one of the kernels ``E``, ``E_T`` or ``E_inf``.

    Parameters
    ----------
    variant : {"E", "E_T", "E_inf"}
    s, sp : float or array
        Nonnegative time lags.
    k, kp : array_like, shape (..., d)
        Nonzero wavevectors.
    params : SpectrumParams, optional
        Defaults to ``SpectrumParams()``.
    T : float
        Rescaling parameter for ``E_T``.
    """
    params = params or SpectrumParams()
    return np.exp(log_kernel(params, variant, s, sp, k, kp, T))


def spectral_mass(params: SpectrumParams, T: float = 1.0) -> float:
    """``M_T = int a(|k|/T) |k|^{1-alpha-d} dk = T^{1-alpha} M_1``."""
    return _mass1(params) * T ** (1.0 - params.alpha)


@lru_cache(maxsize=64)
def _mass1(params: SpectrumParams) -> float:
    R = params.cutoff_radius
    a_ = params.alpha
    f = lambda v: float(cutoff(params, v ** (1.0 / (1.0 - a_)))) / (1.0 - a_)
    # substitution v = rho^{1-alpha} removes the origin singularity
    brk = [(0.5 * R) ** (1.0 - a_)]
    val, _ = integrate.quad(f, 0.0, R ** (1.0 - a_), points=brk, epsabs=0, epsrel=1e-12,
                            limit=200)
    return sphere_area(params.d) * val


def params_to_config(params: SpectrumParams, prefix: str = "params.") -> dict[str, str]:
    return {prefix + k: str(v) for k, v in asdict(params).items()}


def params_from_config(cfg: dict[str, str], prefix: str = "params.") -> SpectrumParams:
    """Build parameters from flat ``key=value`` entries; unknown keys are rejected."""
    kinds = {f.name: f.type for f in fields(SpectrumParams)}
    kw = {}
    for key, val in cfg.items():
        if not key.startswith(prefix):
            continue
        name = key[len(prefix):]
        if name not in kinds:
            raise ParameterError(f"unknown parameter key {key!r}")
        if name == "cutoff_profile":
            kw[name] = str(val).strip()
        elif name == "d":
            kw[name] = int(val)
        else:
            kw[name] = float(val)
    return SpectrumParams(**kw)

