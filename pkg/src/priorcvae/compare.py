"""Side-by-side efficiency tables for finished runs and covariance-fidelity tables for decoded draws."""

from __future__ import annotations

import csv
import math
import warnings
from pathlib import Path

import numpy as np

from .data import PriorDataset
from .gp import Grid, KernelSpec, empirical_covariance, frobenius_distance, kernel_matrix
from .mcmc.diagnostics import DegenerateChainWarning, ess
from .mcmc.hmc import HmcRun

COMPARISON_FIELDS = ["model", "time_s", "ess", "ess_per_s"]
FROBENIUS_FIELDS = ["lengthscale", "F_priorvae", "F_priorcvae"]
NA = "NA"


def field_ess(run: HmcRun, key: str = "f") -> float:
    """Mean ESS of the derived field over its grid points."""
    x = run.param(key)
    x = x.reshape(x.shape[0], x.shape[1], -1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateChainWarning)
        return float(np.mean([ess(x[:, :, i]) for i in range(x.shape[2])]))


def _shared_field(runs) -> bool:
    shapes = {r.derived["f"].shape[2:] if "f" in r.derived else None for r in runs}
    return len(shapes) == 1 and None not in shapes


def comparison_rows(runs: dict) -> tuple[list[dict], str]:
    """One row per run: wall time, ESS and ESS/s under a common measure.

    The measure is the mean ESS of the latent field f when every run recorded
    the same field; otherwise the minimum ESS over the parameters all runs share.
    Returns (rows, description of the measure); ESS is NaN when nothing is shared.
    """
    vals = list(runs.values())
    if _shared_field(vals):
        measure = "mean ESS over grid points of f"
        values = {k: field_ess(r) for k, r in runs.items()}
    else:
        shared = sorted(set.intersection(*(set(r.names) for r in vals))) if vals else []
        measure = f"min ESS over shared parameters ({', '.join(shared) or 'none'})"
        values = {}
        for k, r in runs.items():
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegenerateChainWarning)
                values[k] = min((ess(r.param(p)) for p in shared), default=float("nan"))
    rows = []
    for k, r in runs.items():
        e = values[k]
        rows.append(
            {
                "model": k,
                "time_s": r.wall_seconds,
                "ess": e,
                "ess_per_s": e / r.wall_seconds if r.wall_seconds > 0 else float("nan"),
            }
        )
    return rows, measure


def parameter_rows(runs: dict) -> list[dict]:
    """Per-parameter ESS/s for every run; parameters a run lacks are NaN (written as NA)."""
    names = []
    for r in runs.values():
        names += [n for n in r.names if n not in names and not n.startswith("z[")]
    rows = []
    for name in names:
        row = {"param": name}
        for k, r in runs.items():
            if name in r.names:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", DegenerateChainWarning)
                    row[k] = ess(r.param(name)) / r.wall_seconds
            else:
                row[k] = float("nan")
        rows.append(row)
    return rows


def frobenius_rows(kernel: KernelSpec, grid: Grid, cvae: PriorDataset, vae: PriorDataset | None = None) -> list[dict]:
    """Distance between the empirical covariance of decoded draws and the analytic kernel, per lengthscale.

    ``cvae`` carries one condition column (the lengthscale); rows are grouped by it.
    ``vae`` draws are unconditional and compared against every lengthscale.
    """
    if cvae.k != 1:
        raise ValueError(f"expected decoded draws with one condition column, got {cvae.k}")
    rows = []
    vae_cov = empirical_covariance(vae.draws) if vae is not None and vae.count > 1 else None
    for ell in np.unique(cvae.conditions[:, 0]):
        K = kernel_matrix(kernel.with_lengthscale(float(ell)), grid.points)
        sel = cvae.draws[cvae.conditions[:, 0] == ell]
        f_cvae = frobenius_distance(empirical_covariance(sel), K) if len(sel) > 1 else float("nan")
        f_vae = frobenius_distance(vae_cov, K) if vae_cov is not None else float("nan")
        rows.append({"lengthscale": float(ell), "F_priorvae": f_vae, "F_priorcvae": f_cvae})
    return rows


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    return NA if v is None or not math.isfinite(v) else repr(float(v))


def write_rows(rows: list[dict], fields: list[str], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(fields)
        for r in rows:
            w.writerow([_cell(r[f]) for f in fields])


def read_rows(path, fields: list[str] | None = None) -> list[dict]:
    """Parse a table written by :func:`write_rows`; NA becomes NaN, the first column stays text."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader)
        if fields is not None and head != fields:
            raise ValueError(f"{path}: expected columns {fields}, found {head}")
        out = []
        for row in reader:
            rec = {head[0]: row[0]}
            for h, v in zip(head[1:], row[1:]):
                rec[h] = float("nan") if v == NA else float(v)
            out.append(rec)
        return out


def format_table(rows: list[dict], fields: list[str]) -> str:
    """Fixed-width text rendering for the terminal."""
    cells = [[f for f in fields]]
    for r in rows:
        cells.append([
            r[f] if isinstance(r[f], str) else (NA if not math.isfinite(r[f]) else f"{r[f]:.4g}") for f in fields
        ])
    widths = [max(len(c[i]) for c in cells) for i in range(len(fields))]
    return "\n".join("  ".join(c[i].rjust(widths[i]) for i in range(len(fields))) for c in cells)
