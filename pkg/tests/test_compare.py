import math

import numpy as np
import pytest

from priorcvae.compare import (
    COMPARISON_FIELDS,
    FROBENIUS_FIELDS,
    comparison_rows,
    field_ess,
    format_table,
    frobenius_rows,
    parameter_rows,
    read_rows,
    write_rows,
)
from priorcvae.data import PriorDataset
from priorcvae.gp import Grid, KernelSpec, kernel_matrix, sample_gp
from priorcvae.mcmc import HmcConfig
from priorcvae.mcmc.hmc import HmcRun


def _run(names, chains=2, samples=400, seconds=2.0, field_n=None, seed=0):
    rng = np.random.default_rng(seed)
    derived = {"f": rng.normal(size=(chains, samples, field_n))} if field_n else {}
    return HmcRun(
        list(names), rng.normal(size=(chains, samples, len(names))), np.full(chains, 0.8),
        np.full(chains, 0.1), np.zeros(chains, dtype=int), seconds, HmcConfig(), "test", derived,
    )


def test_field_measure_when_runs_share_field():
    runs = {"a": _run(["x"], field_n=5, seed=1), "b": _run(["x", "y"], field_n=5, seconds=4.0, seed=2)}
    rows, measure = comparison_rows(runs)
    assert "grid points of f" in measure
    assert [r["model"] for r in rows] == ["a", "b"]
    for r, run in zip(rows, runs.values()):
        assert r["ess"] == pytest.approx(field_ess(run))
        assert r["ess_per_s"] == pytest.approx(r["ess"] / run.wall_seconds)
    # i.i.d. draws: ESS close to the draw count
    assert 500 < rows[0]["ess"] < 1300


def test_shared_parameter_fallback_and_nothing_shared():
    rows, measure = comparison_rows({"a": _run(["x", "y"]), "b": _run(["y", "z"], seed=3)})
    assert "(y)" in measure and all(math.isfinite(r["ess"]) for r in rows)
    rows, measure = comparison_rows({"a": _run(["x"]), "b": _run(["z"])})
    assert "none" in measure and all(math.isnan(r["ess"]) for r in rows)


def test_single_run_table():
    rows, _ = comparison_rows({"only": _run(["x"], field_n=3)})
    assert len(rows) == 1 and set(rows[0]) == set(COMPARISON_FIELDS)


def test_parameter_rows_mark_missing_as_nan(tmp_path):
    rows = parameter_rows({"a": _run(["x", "z[0]"]), "b": _run(["x", "noise"])})
    assert [r["param"] for r in rows] == ["x", "noise"]
    assert math.isnan(rows[1]["a"]) and math.isfinite(rows[1]["b"])
    write_rows(rows, ["param", "a", "b"], tmp_path / "p.csv")
    assert "NA" in (tmp_path / "p.csv").read_text()
    back = read_rows(tmp_path / "p.csv", ["param", "a", "b"])
    assert back[0]["a"] == rows[0]["a"] and math.isnan(back[1]["a"])


def test_read_rows_checks_columns(tmp_path):
    write_rows([{"model": "m", "time_s": 1.0, "ess": 2.0, "ess_per_s": 2.0}], COMPARISON_FIELDS, tmp_path / "c.csv")
    with pytest.raises(ValueError):
        read_rows(tmp_path / "c.csv", ["model", "other"])


def test_frobenius_exact_draws_are_close():
    grid = Grid.regular(20)
    kernel = KernelSpec("rbf", 0.5)
    parts = []
    for ell in (0.1, 0.4):
        d = sample_gp(kernel.with_lengthscale(ell), grid, 4000, int(ell * 10)).draws
        parts.append(PriorDataset(np.full((len(d), 1), ell), d))
    cvae = PriorDataset.concat(parts)
    vae = PriorDataset(np.zeros((4000, 0)), np.random.default_rng(0).normal(size=(4000, 20)))
    rows = frobenius_rows(kernel, grid, cvae, vae)
    assert [r["lengthscale"] for r in rows] == [0.1, 0.4]
    for r in rows:
        assert r["F_priorcvae"] < r["F_priorvae"]
        assert r["F_priorcvae"] < 2.0


def test_frobenius_without_vae_and_bad_conditions():
    grid = Grid.regular(5)
    d = PriorDataset(np.full((3, 1), 0.2), np.zeros((3, 5)))
    rows = frobenius_rows(KernelSpec("rbf", 0.2), grid, d)
    assert math.isnan(rows[0]["F_priorvae"])
    # zero draws -> zero covariance -> distance is the kernel's own norm
    assert rows[0]["F_priorcvae"] == pytest.approx(np.linalg.norm(kernel_matrix(KernelSpec("rbf", 0.2), grid.points)))
    with pytest.raises(ValueError):
        frobenius_rows(KernelSpec("rbf", 0.2), grid, PriorDataset(np.zeros((3, 2)), np.zeros((3, 5))))
    assert FROBENIUS_FIELDS[0] == "lengthscale"


def test_format_table_alignment():
    text = format_table([{"a": "x", "b": 1.23456789}, {"a": "long", "b": float("nan")}], ["a", "b"])
    lines = text.splitlines()
    assert len(lines) == 3 and len({len(l) for l in lines}) == 1
    assert "1.235" in lines[1] and lines[2].endswith("NA")
