"""Static-length HMC with dual-averaging step size adaptation."""

from __future__ import annotations

import csv
import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .._rng import make_rng
from .diagnostics import summarize


class DivergenceWarning(RuntimeWarning):
    pass


@dataclass
class HmcConfig:
    warmup: int = 500
    samples: int = 2000
    chains: int = 2
    leapfrog_steps: int = 32
    target_accept: float = 0.8
    seed: int = 0
    max_energy_error: float = 1000.0
    divergence_threshold: float = 0.2
    init_radius: float = 2.0
    step_jitter: float = 0.2
    keep_derived: bool = True

    def __post_init__(self):
        if self.warmup < 1 or self.samples < 1 or self.chains < 1 or self.leapfrog_steps < 1:
            raise ValueError("warmup, samples, chains and leapfrog_steps must be >= 1")
        if not 0.0 <= self.step_jitter < 1.0:
            raise ValueError("step_jitter must lie in [0, 1)")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")


@dataclass
class HmcRun:
    names: list
    draws: np.ndarray  # (chains, samples, params), constrained scale
    accept_rate: np.ndarray
    step_size: np.ndarray
    divergences: np.ndarray
    wall_seconds: float
    config: HmcConfig
    kind: str = ""
    derived: dict = field(default_factory=dict)  # name -> (chains, samples, ...)
    divergence_warning: bool = False

    def param(self, name) -> np.ndarray:
        if name in self.derived:
            return self.derived[name]
        try:
            j = self.names.index(name)
        except ValueError:
            raise KeyError(f"no parameter named {name!r}") from None
        return self.draws[:, :, j]

    def flat(self, name) -> np.ndarray:
        x = self.param(name)
        return x.reshape(-1, *x.shape[2:])

    def derived_columns(self) -> tuple[list, np.ndarray | None]:
        """Flattened derived quantities as (names, array of shape (chains, samples, cols))."""
        names, blocks = [], []
        for key, arr in self.derived.items():
            width = int(np.prod(arr.shape[2:])) if arr.ndim > 2 else 1
            names += [f"{key}[{i}]" for i in range(width)] if arr.ndim > 2 else [key]
            blocks.append(arr.reshape(arr.shape[0], arr.shape[1], width))
        return names, (np.concatenate(blocks, axis=2) if blocks else None)

    def save(self, out_dir) -> None:
        """Chain CSVs (parameters, then derived columns), summary CSV and metadata."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        dnames, dvals = self.derived_columns()
        for c in range(self.draws.shape[0]):
            rows = self.draws[c] if dvals is None else np.concatenate([self.draws[c], dvals[c]], axis=1)
            with (out / f"chain_{c}.csv").open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(self.names + dnames)
                for row in rows.tolist():
                    w.writerow([repr(v) for v in row])
        write_summary(summarize(self), out / "summary.csv")
        meta = {
            "kind": self.kind,
            "seed": self.config.seed,
            "config": asdict(self.config),
            "wall_seconds": self.wall_seconds,
            "divergences": self.divergences.tolist(),
            "divergence_warning": self.divergence_warning,
            "accept_rate": self.accept_rate.tolist(),
            "step_size": self.step_size.tolist(),
            "parameters": self.names,
            "derived": {k: list(v.shape[2:]) for k, v in self.derived.items()},
            "sampler": "static HMC with dual-averaging step size, identity mass matrix",
        }
        (out / "metadata.json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, out_dir) -> "HmcRun":
        out = Path(out_dir)
        meta_path = out / "metadata.json"
        if not meta_path.exists():
            raise FileNotFoundError(f"{out}: no metadata.json, not a run directory")
        meta = json.loads(meta_path.read_text())
        chains, header = [], None
        for c in range(len(meta["divergences"])):
            with (out / f"chain_{c}.csv").open(newline="") as fh:
                reader = csv.reader(fh)
                head = next(reader)
                header = header or head
                if head != header:
                    raise ValueError(f"{out}: chain {c} has a different header")
                chains.append([[float(v) for v in row] for row in reader])
        values = np.array(chains, dtype=float).reshape(len(chains), -1, len(header))
        names = meta.get("parameters", header)
        k = len(names)
        derived, col = {}, k
        for key, shape in meta.get("derived", {}).items():
            width = int(np.prod(shape)) if shape else 1
            derived[key] = values[:, :, col : col + width].reshape(values.shape[0], values.shape[1], *shape)
            col += width
        return cls(
            names,
            values[:, :, :k],
            np.array(meta["accept_rate"]),
            np.array(meta["step_size"]),
            np.array(meta["divergences"]),
            float(meta["wall_seconds"]),
            HmcConfig(**meta["config"]),
            meta.get("kind", ""),
            derived=derived,
            divergence_warning=bool(meta.get("divergence_warning", False)),
        )


SUMMARY_FIELDS = ["param", "mean", "sd", "q05", "q95", "ess", "rhat"]


def write_summary(rows, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_FIELDS)
        for r in rows:
            w.writerow([r["param"]] + [repr(float(r[k])) for k in SUMMARY_FIELDS[1:]])


def read_summary(path) -> dict:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        return {r["param"]: {k: float(v) for k, v in r.items() if k != "param"} for r in reader}


def _safe_density(model, u):
    """Log density and gradient, or (-inf, None) wherever evaluation breaks down.

    Callers run under ``np.errstate(all="ignore")`` (set once per chain: the
    context manager is costly in the leapfrog inner loop).
    """
    try:
        lp, g = model.log_density(u)
    except (np.linalg.LinAlgError, ArithmeticError):
        return -np.inf, None
    if not (math.isfinite(lp) and np.isfinite(g).all()):
        return -np.inf, None
    return lp, g


def leapfrog(model, u, p, grad, eps, steps):
    """``steps`` leapfrog updates; returns (u, p, lp, grad) or lp = -inf on blow-up."""
    p = p + 0.5 * eps * grad
    u = u.copy()
    lp = -np.inf
    for i in range(steps):
        u += eps * p
        lp, grad = _safe_density(model, u)
        if grad is None:
            return u, p, -np.inf, None
        if i < steps - 1:
            p += eps * grad
    p += 0.5 * eps * grad
    return u, p, lp, grad


def _initial_step_size(model, u, lp, grad, rng):
    eps = 1.0
    p = rng.standard_normal(u.size)
    h0 = lp - 0.5 * p @ p

    def log_ratio(eps):
        _, p1, lp1, _ = leapfrog(model, u, p, grad, eps, 1)
        return -np.inf if not np.isfinite(lp1) else lp1 - 0.5 * p1 @ p1 - h0

    direction = 1.0 if log_ratio(eps) > np.log(0.5) else -1.0
    for _ in range(100):
        r = log_ratio(eps)
        if direction > 0 and not r > np.log(0.5):
            break
        if direction < 0 and r > np.log(0.5):
            break
        eps = eps * 2.0**direction
    return eps


def _run_chain(model, config: HmcConfig, chain: int):
    rng = make_rng(config.seed, chain)
    for _ in range(100):
        u = model.initial_point(rng, config.init_radius)
        lp, grad = _safe_density(model, u)
        if grad is not None:
            break
    else:
        raise FloatingPointError(f"chain {chain}: no finite starting point found")
    eps = _initial_step_size(model, u, lp, grad, rng)
    mu = np.log(10.0 * eps)
    h_bar, log_eps_bar = 0.0, 0.0
    gamma, t0, kappa = 0.05, 10.0, 0.75
    total = config.warmup + config.samples
    kept = np.empty((config.samples, model.dim))
    derived = []
    accepts, divergent = 0.0, 0
    for it in range(total):
        p0 = rng.standard_normal(model.dim)
        h0 = lp - 0.5 * p0 @ p0
        # jittered step breaks the periodicity of a fixed trajectory length
        eps_it = eps * (1.0 + config.step_jitter * (2.0 * rng.random() - 1.0))
        u1, p1, lp1, g1 = leapfrog(model, u, p0, grad, eps_it, config.leapfrog_steps)
        if g1 is None:
            delta, alpha = np.inf, 0.0
        else:
            delta = h0 - (lp1 - 0.5 * p1 @ p1)
            alpha = float(min(1.0, np.exp(-delta))) if np.isfinite(delta) else 0.0
        if rng.random() < alpha:
            u, lp, grad = u1, lp1, g1
        if it < config.warmup:
            m = it + 1
            h_bar = (1.0 - 1.0 / (m + t0)) * h_bar + (config.target_accept - alpha) / (m + t0)
            log_eps = mu - np.sqrt(m) / gamma * h_bar
            w = m**-kappa
            log_eps_bar = w * log_eps + (1.0 - w) * log_eps_bar
            eps = np.exp(log_eps)
            if it == config.warmup - 1:
                eps = np.exp(log_eps_bar)
        else:
            j = it - config.warmup
            accepts += alpha
            divergent += int(not delta < config.max_energy_error)
            kept[j] = model.constrain_vector(u)
            if config.keep_derived:
                derived.append(model.derived(u))
    return kept, accepts / config.samples, eps, divergent, derived


def hmc_sample(model, config: HmcConfig) -> HmcRun:
    """Run ``config.chains`` independent chains; each seeds from (seed, chain index)."""
    start = time.perf_counter()
    with np.errstate(all="ignore"):
        results = [_run_chain(model, config, c) for c in range(config.chains)]
    wall = time.perf_counter() - start
    draws = np.stack([r[0] for r in results])
    derived = {}
    if config.keep_derived and results[0][4]:
        for key in results[0][4][0]:
            derived[key] = np.stack([np.stack([d[key] for d in r[4]]) for r in results])
    div = np.array([r[3] for r in results])
    run = HmcRun(
        names=list(model.names),
        draws=draws,
        accept_rate=np.array([r[1] for r in results]),
        step_size=np.array([r[2] for r in results]),
        divergences=div,
        wall_seconds=wall,
        config=config,
        kind=getattr(model, "kind", ""),
        derived=derived,
    )
    if div.sum() > config.divergence_threshold * config.samples * config.chains:
        run.divergence_warning = True
        warnings.warn(
            f"{div.sum()} divergent transitions out of {config.samples * config.chains}",
            DivergenceWarning,
            stacklevel=2,
        )
    return run
