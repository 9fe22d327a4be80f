"""Path simulators producing snapshot pairs.

Two schemes are provided: sampling from the exact Gaussian conditional law of
the Ornstein-Uhlenbeck process, and the Milstein scheme (strong order 1.0)
for general models, with optional sub-stepping between snapshots.

Reproducibility contract: path k always draws from the substream
``SeedSequence(seed, spawn_key=(k,))``, so a path simulated alone is
bit-identical to the same path inside a batch, regardless of worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import SnapshotData
from .models import SdeModel

__all__ = ["SimConfig", "ou_exact_step", "milstein_step", "simulate_snapshots", "simulate_path"]

# Milstein iterates for bounded state spaces are clamped this far inside the
# boundary so the volatility stays real; clamps are counted in metadata.
BOUNDARY_MARGIN = 1e-12

_SCHEMES = ("exact_ou", "milstein")


@dataclass
class SimConfig:
    """Simulation protocol for :func:`simulate_snapshots`."""

    theta: np.ndarray
    t_step: float
    n_points: int
    n_paths: int = 1
    x0: float | str = 0.0
    seed: int = 0
    scheme: str = "exact_ou"
    internal_dt: float | None = None

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta must be finite")
        if not (np.isfinite(self.t_step) and self.t_step > 0):
            raise ValueError("t_step must be positive")
        if self.n_points < 1 or self.n_paths < 1:
            raise ValueError("n_points and n_paths must be positive")
        if self.scheme not in _SCHEMES:
            raise ValueError(f"scheme must be one of {_SCHEMES}")
        if self.internal_dt is None:
            self.internal_dt = self.t_step
        if not (0 < self.internal_dt <= self.t_step):
            raise ValueError("internal_dt must lie in (0, t_step]")
        ratio = self.t_step / self.internal_dt
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError("t_step must be an integer multiple of internal_dt")
        if isinstance(self.x0, str) and self.x0 != "stationary":
            raise ValueError("x0 must be a number or 'stationary'")

    @property
    def steps_per_snapshot(self) -> int:
        return int(round(self.t_step / self.internal_dt))


def _path_rng(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))


def ou_exact_step(x: float, theta, t: float, rng: np.random.Generator) -> float:
    """One draw from the exact OU conditional law started at x.

    The conditional distribution after time t is Gaussian with mean
    ``theta2 + (x - theta2) exp(-theta1 t)`` and variance
    ``theta3^2 (1 - exp(-2 theta1 t)) / (2 theta1)``.
    """
    theta = np.asarray(theta, dtype=float)
    if not (np.isfinite(x) and np.all(np.isfinite(theta)) and np.isfinite(t)):
        raise ValueError("ou_exact_step requires finite inputs")
    if theta.shape != (3,):
        raise ValueError("OU needs a 3-parameter theta")
    if theta[0] <= 0 or t <= 0:
        raise ValueError("ou_exact_step requires theta1 > 0 and t > 0")
    decay = math.exp(-theta[0] * t)
    mean = theta[1] + (x - theta[1]) * decay
    var = theta[2] ** 2 * (1.0 - decay**2) / (2.0 * theta[0])
    return mean + math.sqrt(var) * rng.standard_normal()


def milstein_step(
    x: float,
    model: SdeModel,
    theta,
    dt: float,
    rng: np.random.Generator | None = None,
    dw: float | None = None,
) -> float:
    """One Milstein update x + a dt + b dW + (b b'/2)(dW^2 - dt).

    ``dw`` overrides the Brownian increment (test hook); otherwise it is
    drawn as N(0, dt) from ``rng``. For bounded state spaces the result is
    clamped just inside the boundary.
    """
    theta = model.check_theta(theta)
    lo, hi = model.state_space
    if not np.isfinite(x):
        raise ValueError("milstein_step requires finite x")
    if not (lo <= x <= hi):
        raise ValueError(f"x={x} outside the closed state space [{lo}, {hi}]")
    if dw is None:
        if rng is None:
            raise ValueError("either rng or dw must be given")
        dw = math.sqrt(dt) * rng.standard_normal()
    xa = np.asarray([float(x)])
    out, _ = _milstein_kernel(xa, model, theta, dt, np.asarray([[float(dw) / math.sqrt(dt)]]))
    return float(out[0, 0])


def _milstein_kernel(x0, model, theta, dt, z):
    """Vectorised Milstein stepping over paths.

    ``x0``: (n_paths,) initial states; ``z``: (n_paths, n_steps) unit
    normals. Returns the (n_paths, n_steps) array of post-step states and the
    number of boundary clamps.
    """
    sqrt_dt = math.sqrt(dt)
    lo, hi = model.state_space
    bounded = math.isfinite(lo) and math.isfinite(hi)
    clamp_lo, clamp_hi = lo + BOUNDARY_MARGIN, hi - BOUNDARY_MARGIN
    x = np.array(x0, dtype=float)
    n_steps = z.shape[1]
    out = np.empty((x.size, n_steps))
    clamps = 0
    for k in range(n_steps):
        dw = sqrt_dt * z[:, k]
        a = model.drift(x, theta)
        b = model.volatility(x, theta)
        corr = model.milstein_correction(x, theta)
        x = x + a * dt + b * dw + corr * (dw * dw - dt)
        if bounded:
            escaped = (x < clamp_lo) | (x > clamp_hi)
            if escaped.any():
                clamps += int(np.count_nonzero(escaped))
                x = np.clip(x, clamp_lo, clamp_hi)
        out[:, k] = x
    return out, clamps


def _ou_exact_kernel(x0, theta, dt, z):
    """Vectorised exact-OU stepping; same shapes as :func:`_milstein_kernel`."""
    decay = math.exp(-theta[0] * dt)
    scale = math.sqrt(theta[2] ** 2 * (1.0 - decay**2) / (2.0 * theta[0]))
    shift = theta[1] * (1.0 - decay)
    x = np.array(x0, dtype=float)
    n_steps = z.shape[1]
    out = np.empty((x.size, n_steps))
    u = shift + scale * z
    for k in range(n_steps):
        x = u[:, k] + decay * x
        out[:, k] = x
    return out, 0


def _resolve_x0(model: SdeModel, cfg: SimConfig, rng: np.random.Generator) -> float:
    if cfg.x0 == "stationary":
        if model.name != "ou":
            raise ValueError("x0='stationary' is implemented for the OU model only")
        theta = cfg.theta
        if theta[0] <= 0:
            raise ValueError("stationary initial condition requires theta1 > 0")
        sd = math.sqrt(theta[2] ** 2 / (2.0 * theta[0]))
        return theta[1] + sd * rng.standard_normal()
    x0 = float(cfg.x0)
    lo, hi = model.state_space
    if not (lo <= x0 <= hi):
        raise ValueError(f"x0={x0} outside the state space [{lo}, {hi}]")
    return x0


def _simulate_states(model: SdeModel, cfg: SimConfig, path_indices):
    """States (n_sel, n_points + 1) for the selected paths, plus clamp count.

    Draws are made per path from that path's substream before stepping, so the
    result for a given path does not depend on which other paths are batched
    with it.
    """
    if cfg.scheme == "exact_ou":
        if model.name != "ou":
            raise ValueError("scheme 'exact_ou' is only valid for the OU model")
        if cfg.theta[0] <= 0:
            raise ValueError("exact OU sampling requires theta1 > 0")
        n_steps = cfg.n_points
    else:
        n_steps = cfg.n_points * cfg.steps_per_snapshot

    x_init = np.empty(len(path_indices))
    z = np.empty((len(path_indices), n_steps))
    for row, k in enumerate(path_indices):
        rng = _path_rng(cfg.seed, int(k))
        x_init[row] = _resolve_x0(model, cfg, rng)
        z[row] = rng.standard_normal(n_steps)

    if cfg.scheme == "exact_ou":
        steps, clamps = _ou_exact_kernel(x_init, cfg.theta, cfg.t_step, z)
    else:
        steps, clamps = _milstein_kernel(x_init, model, cfg.theta, cfg.internal_dt, z)
        steps = steps[:, cfg.steps_per_snapshot - 1 :: cfg.steps_per_snapshot]
    states = np.concatenate([x_init[:, None], steps], axis=1)
    return states, clamps


def simulate_path(model: SdeModel, cfg: SimConfig, k: int) -> SnapshotData:
    """Snapshot pairs for path k alone; bit-identical to its slice of the batch."""
    if not 0 <= k < cfg.n_paths:
        raise ValueError(f"path index {k} outside [0, {cfg.n_paths})")
    states, clamps = _simulate_states(model, cfg, [k])
    return SnapshotData(
        x=states[0, :-1],
        y=states[0, 1:],
        t_step=cfg.t_step,
        metadata=_metadata(model, cfg, clamps, path_id=k),
    )


def simulate_snapshots(model: SdeModel, cfg: SimConfig) -> SnapshotData:
    """Simulate all configured paths and concatenate their snapshot pairs."""
    states, clamps = _simulate_states(model, cfg, list(range(cfg.n_paths)))
    x = states[:, :-1].reshape(-1)
    y = states[:, 1:].reshape(-1)
    boundaries = np.arange(cfg.n_paths) * cfg.n_points
    return SnapshotData(
        x=x,
        y=y,
        t_step=cfg.t_step,
        path_boundaries=boundaries,
        metadata=_metadata(model, cfg, clamps),
    )


def _metadata(model: SdeModel, cfg: SimConfig, clamp_count: int, **extra) -> dict:
    meta = {
        "model": model.name,
        "theta": [float(v) for v in cfg.theta],
        "t_step": cfg.t_step,
        "n_points": cfg.n_points,
        "n_paths": cfg.n_paths,
        "seed": cfg.seed,
        "scheme": cfg.scheme,
        "internal_dt": cfg.internal_dt,
        "clamp_count": int(clamp_count),
        "x0": cfg.x0 if isinstance(cfg.x0, str) else float(cfg.x0),
    }
    meta.update(extra)
    return meta
