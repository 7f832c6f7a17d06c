"""Effective sample size, split R-hat and posterior summaries."""

from __future__ import annotations

import warnings

import numpy as np


class DegenerateChainWarning(RuntimeWarning):
    pass


def _as_chains(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError(f"expected (chains, draws), got shape {x.shape}")
    return x


def autocovariance(x) -> np.ndarray:
    """Biased autocovariance of a 1-D series at every lag, via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    m = 1 << (2 * n - 1).bit_length()
    fx = np.fft.rfft(x - x.mean(), n=m)
    return np.fft.irfft(fx * np.conj(fx), n=m)[:n] / n


def ess(chains) -> float:
    """Multi-chain ESS with Geyer's initial monotone positive sequence.

    Autocorrelations are pooled across chains through the between/within
    variance estimate, so well-mixed chains contribute additively. A constant
    input returns 0.0 and emits :class:`DegenerateChainWarning`.
    """
    x = _as_chains(chains)
    m, n = x.shape
    if n < 10:
        raise ValueError("ESS needs at least 10 draws per chain")
    acov = np.stack([autocovariance(c) for c in x])
    chain_var = acov[:, 0] * n / (n - 1.0)
    W = chain_var.mean()
    var_plus = W * (n - 1.0) / n
    if m > 1:
        var_plus += np.var(x.mean(axis=1), ddof=1)
    if not W > 0 or not var_plus > 0:
        warnings.warn("constant chain: ESS reported as 0", DegenerateChainWarning, stacklevel=2)
        return 0.0
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # sum consecutive pairs while positive, forcing the pair sums to be non-increasing
    tau = -1.0
    prev = np.inf
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        prev = min(prev, pair)
        tau += 2.0 * prev
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def r_hat(chains) -> float:
    """Split R-hat: each chain is halved, then the classic between/within ratio."""
    x = _as_chains(chains)
    m, n = x.shape
    if m == 1 and n < 4:
        raise ValueError("a single chain needs at least 4 draws to split")
    if n < 2:
        raise ValueError("chains need at least 2 draws")
    half = n // 2
    if half < 2:
        raise ValueError("split halves need at least 2 draws each")
    splits = np.concatenate([x[:, :half], x[:, n - half :]])
    means = splits.mean(axis=1)
    W = splits.var(axis=1, ddof=1).mean()
    B = half * np.var(means, ddof=1)
    if W == 0:
        return float("nan") if B == 0 else float("inf")
    return float(np.sqrt(((half - 1.0) / half * W + B / half) / W))


def summarize(run, names=None) -> list[dict]:
    """Per-parameter mean, sd, 5%/95% quantiles, ESS, split R-hat and ESS per second."""
    rows = []
    names = run.names if names is None else names
    for name in names:
        x = run.param(name)
        flat = x.ravel()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateChainWarning)
            e = ess(x) if x.shape[1] >= 10 else float("nan")
        rh = r_hat(x) if x.shape[0] * x.shape[1] >= 4 and x.shape[1] >= 4 else float("nan")
        q05, q95 = np.percentile(flat, [5, 95])
        rows.append(
            {
                "param": name,
                "mean": float(flat.mean()),
                "sd": float(flat.std(ddof=1)) if flat.size > 1 else 0.0,
                "q05": float(q05),
                "q95": float(q95),
                "ess": e,
                "rhat": rh,
                "ess_per_s": e / run.wall_seconds if run.wall_seconds > 0 else float("nan"),
            }
        )
    return rows
