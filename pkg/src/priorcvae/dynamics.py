"""Training-data simulators beyond GPs: SIR epidemics (RK4) and the double-well SDE."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._rng import make_rng
from .data import PriorDataset
from .gp import HyperPrior

_SHARD = 1000
# RK4 step in days; 0.1 leaves ~5e-5 step-halving error for fast epidemics (beta ~ 3), 0.01 keeps it below 1e-6
SIR_STEP = 0.01

# Influenza A (H1N1), British boarding school 1978: students in bed per day.
BOARDING_SCHOOL = np.array([3, 8, 26, 76, 225, 298, 258, 233, 189, 128, 68, 29, 14, 4])
BOARDING_SCHOOL_N = 763


@dataclass(frozen=True)
class SirParams:
    beta: float
    gamma: float
    N: float = BOARDING_SCHOOL_N
    I0: float = 1.0
    days: int = 13

    def __post_init__(self):
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("beta and gamma must be non-negative")
        if not 0 < self.I0 <= self.N:
            raise ValueError("need 0 < I0 <= N")
        if self.days < 1:
            raise ValueError("days must be >= 1")


def _steps_per_day(step: float) -> int:
    k = int(round(1.0 / step))
    if k < 1 or abs(k * step - 1.0) > 1e-9:
        raise ValueError(f"solver step {step} must divide one day")
    return k


def sir_integrate(beta, gamma, N, I0, days, step=SIR_STEP):
    """Fixed-step RK4 for a batch of parameter pairs.

    Returns (t, S, I, R) on the dense step grid; each compartment array has shape
    (batch, days * steps_per_day + 1).
    """
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    k = _steps_per_day(step)
    h = 1.0 / k
    nsteps = days * k
    y = np.zeros((3, beta.size))
    y[0] = N - I0
    y[1] = I0
    out = np.empty((nsteps + 1, 3, beta.size))
    out[0] = y

    def rhs(y):
        inf = beta * y[0] * y[1] / N
        rec = gamma * y[1]
        return np.stack([-inf, inf - rec, rec])

    for i in range(nsteps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i + 1] = y
    t = np.arange(nsteps + 1) * h
    return t, out[:, 0].T, out[:, 1].T, out[:, 2].T


def sir_solve(params: SirParams, step: float = SIR_STEP) -> np.ndarray:
    """Infected fraction I(t)/N at integer days 0..days."""
    k = _steps_per_day(step)
    _, _, I, _ = sir_integrate(params.beta, params.gamma, params.N, params.I0, params.days, step)
    return I[0, ::k] / params.N


def sample_sir_dataset(
    beta_prior: HyperPrior,
    gamma_prior: HyperPrior,
    template: SirParams,
    count: int,
    seed: int,
    step: float = SIR_STEP,
) -> PriorDataset:
    """I(t)/N trajectories with condition c = (beta, gamma)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    beta = beta_prior.sample(count, seed)
    gamma = gamma_prior.sample(count, seed + 1)
    k = _steps_per_day(step)
    rows = []
    for start in range(0, count, _SHARD):
        sl = slice(start, start + _SHARD)
        _, _, I, _ = sir_integrate(beta[sl], gamma[sl], template.N, template.I0, template.days, step)
        rows.append(I[:, ::k] / template.N)
    return PriorDataset(np.column_stack([beta, gamma]), np.concatenate(rows))


@dataclass(frozen=True)
class DoubleWellParams:
    theta1: float
    theta2: float
    dt: float = 0.01
    T: float = 20.0
    x0: float = 0.0
    diffusion: float = 1.0
    subsample: int = 10

    def __post_init__(self):
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("dt and T must be positive")
        if abs(self.T / self.dt - round(self.T / self.dt)) > 1e-6:
            raise ValueError("T must be an integer multiple of dt")
        if self.subsample < 1:
            raise ValueError("subsample must be >= 1")

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def grid_length(self) -> int:
        return len(range(0, self.steps + 1, self.subsample))


def _em_paths(theta1, theta2, params: DoubleWellParams, count, rng, noise=True):
    theta1 = np.broadcast_to(np.asarray(theta1, float), (count,))
    theta2 = np.broadcast_to(np.asarray(theta2, float), (count,))
    dt = params.dt
    scale = params.diffusion * np.sqrt(dt)
    x = np.full(count, float(params.x0))
    keep = [x.copy()]
    for i in range(1, params.steps + 1):
        x = x + theta1 * x * (theta2 - x * x) * dt
        if noise:
            x = x + scale * rng.standard_normal(count)
        if i % params.subsample == 0:
            keep.append(x.copy())
    return np.stack(keep, axis=1)


def euler_maruyama_dw(
    params: DoubleWellParams, count: int, seed: int, noise: bool = True
) -> PriorDataset:
    """Double-well trajectories x' = x + th1 x (th2 - x^2) dt + sqrt(dt) eps, subsampled."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rows = []
    for shard, start in enumerate(range(0, count, _SHARD)):
        m = min(_SHARD, count - start)
        rows.append(_em_paths(params.theta1, params.theta2, params, m, make_rng(seed, shard), noise))
    cond = np.tile([params.theta1, params.theta2], (count, 1))
    return PriorDataset(cond, np.concatenate(rows))


def sample_doublewell_dataset(thetas, template: DoubleWellParams, seed: int) -> PriorDataset:
    """Trajectories for per-row conditions ``thetas`` of shape (count, 2)."""
    thetas = np.asarray(thetas, dtype=float).reshape(-1, 2)
    rows = []
    for shard, start in enumerate(range(0, len(thetas), _SHARD)):
        th = thetas[start : start + _SHARD]
        rng = make_rng(seed, shard)
        rows.append(_em_paths(th[:, 0], th[:, 1], template, len(th), rng))
    return PriorDataset(thetas, np.concatenate(rows))


def doublewell_conditions(settings, count: int, seed: int) -> np.ndarray:
    """Pick one of the fixed (theta1, theta2) ``settings`` uniformly for each row."""
    settings = np.asarray(settings, dtype=float).reshape(-1, 2)
    idx = make_rng(seed, 7).integers(0, len(settings), size=count)
    return settings[idx]


def with_theta(params: DoubleWellParams, theta1: float, theta2: float) -> DoubleWellParams:
    return replace(params, theta1=theta1, theta2=theta2)
