"""Tracer trajectories in the synthesized field.

The rescaled tracer solves ``dz/dt = V_T(t, z/T)``; the frozen process is
``y_T(t) = int_0^t V_T(s, 0) ds``.  The OU ensemble is advanced exactly on
a substep grid and the field is held fixed inside each substep, so the
one-step method only has to resolve the spatial dependence.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
import math

import numpy as np

from .spectrum_core import ParameterError, SpectrumParams, rate
from .noise_modes import ou_step
from .velocity_field import FieldSampler, FieldBatch, evaluate_field, gamma_project_batch
from .seeding import BlockStreams
from .stats import jackknife

__all__ = [
    "TrajectoryConfig",
    "Trajectory",
    "default_substeps",
    "integrate_z_T",
    "integrate_y_T",
    "lagrangian_series",
    "TracerRun",
    "simulate_tracers",
    "msd_curve",
]


@dataclass(frozen=True)
class TrajectoryConfig:
    """Integration settings.

    ``dt`` is the recording step; each recording step is split into
    ``substeps`` field substeps on which the ensemble is advanced.
    ``substeps=None`` picks the smallest count with
    ``theta_max * dt / substeps <= courant``.
    """

    T: float = 1.0
    t_max: float = 1.0
    dt: float = 0.05
    substeps: int | None = None
    integrator: str = "rk4"
    x0: tuple | None = None
    courant: float = 0.1

    def __post_init__(self):
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        if self.t_max < self.dt:
            raise ParameterError("t_max must be >= dt")
        if self.T < 1:
            raise ParameterError("T must be >= 1")
        if self.substeps is not None and self.substeps < 1:
            raise ParameterError("substeps must be >= 1")
        if self.integrator not in ("rk4", "midpoint", "euler"):
            raise ParameterError(f"unknown integrator {self.integrator!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray
    seed: int | None
    config: TrajectoryConfig
    params: SpectrumParams
    kind: str = "z"

    def __post_init__(self):
        if len(self.times) != len(self.positions):
            raise ValueError("times and positions differ in length")

    def metadata(self) -> dict:
        return {"seed": self.seed, "kind": self.kind, "config": asdict(self.config),
                "params": asdict(self.params)}


def default_substeps(params: SpectrumParams, cfg: TrajectoryConfig) -> int:
    """Substeps so that the fastest mode satisfies ``theta dt_sub <= courant``."""
    if cfg.substeps is not None:
        return int(cfg.substeps)
    th = 0.5 * float(rate(params, params.cutoff_radius * cfg.T))
    return max(1, int(math.ceil(th * cfg.dt / cfg.courant)))


def _one_step(f, z, h, method):
    if method == "euler":
        return z + h * f(z)
    if method == "midpoint":
        k1 = f(z)
        return z + h * f(z + 0.5 * h * k1)
    k1 = f(z)
    k2 = f(z + 0.5 * h * k1)
    k3 = f(z + 0.5 * h * k2)
    k4 = f(z + h * k3)
    return z + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _check_sampler(sampler: FieldSampler, cfg: TrajectoryConfig):
    if sampler.variant != "V_T":
        raise ParameterError("tracer integration needs a V_T sampler")
    if abs(sampler.T - cfg.T) > 1e-12 * cfg.T:
        raise ParameterError(f"sampler T={sampler.T} differs from config T={cfg.T}")


def _integrate_single(sampler, cfg, frozen: bool):
    _check_sampler(sampler, cfg)
    d = sampler.params.d
    x0 = np.zeros(d) if cfg.x0 is None else np.asarray(cfg.x0, float)[:d]
    n_sub = default_substeps(sampler.params, cfg)
    hs = cfg.dt / n_sub
    z = x0.copy() if not frozen else np.zeros(d)
    out = [x0.copy() if not frozen else np.zeros(d)]
    times = [sampler.ensemble.time]
    t = sampler.ensemble.time
    T = cfg.T
    for i in range(cfg.n_steps):
        for _ in range(n_sub):
            if frozen:
                z = z + hs * evaluate_field(sampler, t, np.zeros(d))
            else:
                z = _one_step(lambda p: evaluate_field(sampler, t, p / T), z, hs, cfg.integrator)
            if not np.all(np.isfinite(z)):
                raise FloatingPointError(f"non-finite position at t={t:.6g}; reduce dt")
            sampler.ensemble = ou_step(sampler.ensemble, hs)
            sampler.modes = sampler.ensemble.modes
            t = sampler.ensemble.time
        out.append(z.copy())
        times.append(t)
    return np.array(times), np.array(out)


def integrate_z_T(sampler: FieldSampler, cfg: TrajectoryConfig) -> Trajectory:
    """Solve ``dz/dt = V_T(t, z/T)``, ``z(0) = x0``, advancing the sampler."""
    t, z = _integrate_single(sampler, cfg, frozen=False)
    return Trajectory(t, z, sampler.seed, cfg, sampler.params, "z")


def integrate_y_T(sampler: FieldSampler, cfg: TrajectoryConfig) -> Trajectory:
    """``y_T(t) = int_0^t V_T(s, 0) ds`` on the same substep grid."""
    t, y = _integrate_single(sampler, cfg, frozen=True)
    return Trajectory(t, y, sampler.seed, cfg, sampler.params, "y")


def lagrangian_series(sampler: FieldSampler, trajectory: Trajectory) -> np.ndarray:
    """Replay the field along a recorded trajectory: ``V_T(t_k, z(t_k)/T)``.

    ``sampler`` must be a fresh sampler (time 0) built with the seed of the
    trajectory; it is advanced during the replay.
    """
    if trajectory.kind != "z":
        raise ParameterError("Lagrangian series needs a z_T trajectory")
    if sampler.seed != trajectory.seed:
        raise ParameterError("sampler seed does not match the trajectory seed")
    if sampler.ensemble.time != 0.0:
        raise ParameterError("replay needs a sampler at time 0")
    cfg = trajectory.config
    _check_sampler(sampler, cfg)
    n_sub = default_substeps(sampler.params, cfg)
    hs = cfg.dt / n_sub
    out = [evaluate_field(sampler, 0.0, trajectory.positions[0] / cfg.T)]
    for k in range(1, len(trajectory.times)):
        for _ in range(n_sub):
            sampler.ensemble = ou_step(sampler.ensemble, hs)
            sampler.modes = sampler.ensemble.modes
        out.append(evaluate_field(sampler, sampler.ensemble.time, trajectory.positions[k] / cfg.T))
    return np.array(out)


@dataclass
class TracerRun:
    """Batched tracer output.

    Attributes
    ----------
    times : ndarray, shape (n_t,)
    z, y, lagrangian : ndarray or None, shape (B, n_t, d)
    """

    times: np.ndarray
    z: np.ndarray | None
    y: np.ndarray | None
    lagrangian: np.ndarray | None
    meta: dict = field(default_factory=dict)


class _GaussianWhite:
    """Divergence-free Gaussian field redrawn independently on every substep."""

    def __init__(self, fb: FieldBatch, seed: int, offset: int):
        self.fb = fb
        k = fb.k if fb.k.ndim == 3 else np.broadcast_to(fb.k, (fb.B,) + fb.k.shape)
        self.G = gamma_project_batch(k)  # (B, h, d, d)
        amp = fb.amp if fb.amp.ndim == 2 else np.broadcast_to(fb.amp, (fb.B, fb.h))
        self.a = amp * np.sqrt(0.5 / (fb.theta if fb.theta.ndim == 2 else fb.theta[None]))
        self.k = k
        self.streams = BlockStreams(seed, "aux", fb.B, offset)
        self.redraw()

    def redraw(self):
        self.zeta = self.streams.complex_normal(self.fb.h, self.fb.d)

    def velocity(self, x):
        ph = np.exp(1j * np.einsum("bmd,bd->bm", self.k, x))
        v = np.einsum("bmij,bmj->bmi", self.G, self.zeta) * (self.a * ph)[..., None]
        return 2.0 * v.sum(axis=1).real


def simulate_tracers(params: SpectrumParams, cfg: TrajectoryConfig, n_replicas: int,
                     n_modes: int = 64, seed: int = 0, want=("z",), control: str | None = None,
                     chunk: int = 500, progress=None, offset: int = 0) -> TracerRun:
    """Integrate many independent replicas at once.

    Parameters
    ----------
    want : tuple of {"z", "y", "lagrangian"}
        Quantities to record at the recording times.
    control : {None, "gaussian_white"}
        ``"gaussian_white"`` replaces the field by a divergence-free Gaussian
        field that is independent between substeps (diffusive control).
    offset : int
        Global index of the first replica; replica ``offset + r`` is the
        same path whatever the split into calls.
    """
    d = params.d
    n_sub = default_substeps(params, cfg)
    hs = cfg.dt / n_sub
    T = cfg.T
    nt = cfg.n_steps + 1
    times = np.arange(nt) * cfg.dt
    x0 = np.zeros(d) if cfg.x0 is None else np.asarray(cfg.x0, float)[:d]
    Z = np.zeros((n_replicas, nt, d)) if "z" in want else None
    Y = np.zeros((n_replicas, nt, d)) if "y" in want else None
    L = np.zeros((n_replicas, nt, d)) if "lagrangian" in want else None
    for off in range(0, n_replicas, chunk):
        B = min(chunk, n_replicas - off)
        fb = FieldBatch(params, "V_T", n_modes, B, seed=seed, T=T, offset=offset + off)
        gw = _GaussianWhite(fb, seed, offset + off) if control == "gaussian_white" else None
        vel = gw.velocity if gw is not None else fb.velocity
        z = np.broadcast_to(x0, (B, d)).copy()
        y = np.zeros((B, d))
        if Z is not None:
            Z[off:off + B, 0] = z
        if L is not None:
            L[off:off + B, 0] = vel(z / T)
        for i in range(1, nt):
            for _ in range(n_sub):
                if Y is not None:
                    y = y + hs * vel(np.zeros((B, d)))
                if Z is not None or L is not None:
                    z = _one_step(lambda p: vel(p / T), z, hs, cfg.integrator)
                    if not np.all(np.isfinite(z)):
                        raise FloatingPointError(
                            f"non-finite position at t={fb.time:.6g}; reduce dt")
                if gw is not None:
                    gw.redraw()
                else:
                    fb.step(hs)
            if Z is not None:
                Z[off:off + B, i] = z
            if Y is not None:
                Y[off:off + B, i] = y
            if L is not None:
                L[off:off + B, i] = vel(z / T)
        if progress:
            progress(off + B, n_replicas)
    meta = {"n_replicas": n_replicas, "offset": offset, "n_modes": n_modes, "seed": seed,
            "substeps": n_sub,
            "control": control, "config": asdict(cfg)}
    return TracerRun(times, Z, Y, L, meta)


def msd_curve(positions, times, lag_times, n_blocks: int = 20) -> np.ndarray:
    """Mean squared displacement from the start with jackknife errors.

    Parameters
    ----------
    positions : ndarray, shape (n_traj, n_t, d) or list of :class:`Trajectory`
    times : ndarray, shape (n_t,)
    lag_times : sequence of float
        Must be recorded times within ``[0, times[-1]]``.

    Returns
    -------
    ndarray, shape (n_lags, 3)
        Rows ``(t, msd, stderr)``.
    """
    if isinstance(positions, (list, tuple)) and positions and isinstance(positions[0], Trajectory):
        times = positions[0].times
        positions = np.stack([tr.positions for tr in positions])
    X = np.asarray(positions, float)
    times = np.asarray(times, float)
    if X.shape[0] < 100:
        raise ValueError("msd_curve needs at least 100 trajectories")
    rows = []
    for lag in lag_times:
        if lag > times[-1] * (1 + 1e-12) or lag < 0:
            raise ValueError(f"lag {lag} outside [0, {times[-1]}]")
        i = int(np.argmin(np.abs(times - lag)))
        if abs(times[i] - lag) > 1e-9 * max(1.0, lag):
            raise ValueError(f"lag {lag} is not a recorded time")
        sq = np.sum((X[:, i] - X[:, 0]) ** 2, axis=-1)
        if lag == 0 or np.all(sq == 0):
            rows.append((lag, float(sq.mean()), 0.0))
            continue
        m, e = jackknife(sq, np.mean, n_blocks)
        rows.append((lag, float(m), float(e)))
    return np.array(rows)
