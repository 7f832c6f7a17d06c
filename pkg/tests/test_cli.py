import json

import numpy as np
import pytest

from priorcvae.cli import main
from priorcvae.data import read_dataset
from priorcvae.experiments import (
    PRESET_NAMES,
    Observations,
    PresetError,
    apply_overrides,
    build_posterior,
    generate_dataset,
    get_preset,
    make_observations,
    normalize_kind,
)


# ---------------------------------------------------------------- presets


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_presets_are_consistent(name):
    desk, paper = get_preset(name), get_preset(name, paper_scale=True)
    assert desk.grid.n == paper.grid.n
    assert paper.count >= desk.count
    doc = json.loads(json.dumps(desk.to_dict()))
    assert doc["name"] == name and doc["grid_n"] == desk.grid.n
    data = generate_dataset(desk, 3, 0)
    assert data.n == desk.grid.n
    assert data.k == desk.condition_dim


def test_published_sizes():
    p = get_preset("gp1d-matern52", paper_scale=True)
    assert (p.grid.n, p.net.hidden, p.net.latent_dim, p.net.sigma2_vae) == (80, (60,), 40, 1.0)
    assert (p.train.epochs, p.train.batch_size, p.count) == (500, 2000, 100000)
    s = get_preset("sir", paper_scale=True)
    assert (s.net.hidden, s.net.latent_dim, s.net.output_activation) == ((10,), 6, "sigmoid")


def test_unknown_preset_and_kind():
    with pytest.raises(PresetError):
        get_preset("nope")
    with pytest.raises(PresetError):
        normalize_kind("nuts")
    assert normalize_kind("sir-cvae") == "priorcvae"


def test_overrides():
    p = apply_overrides(get_preset("gp1d-rbf"), {"train": {"epochs": 3}, "count": 50, "hmc": {"chains": 1},
                                                  "net": {"hidden": [8, 4]}, "seed": 5})
    assert p.train.epochs == 3 and p.count == 50 and p.hmc.chains == 1 and p.net.hidden == (8, 4)
    base = get_preset("gp1d-rbf")
    assert apply_overrides(base, {"train": {"epochs": 3}}) is not base and base.train.epochs == 50
    for bad in ({"train": {"epochz": 1}}, {"count": 0}, {"whatever": 1}, {"hmc": 3}):
        with pytest.raises(PresetError):
            apply_overrides(get_preset("gp1d-rbf"), bad)


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_observations_round_trip(tmp_path, name):
    obs = make_observations(get_preset(name), 4)
    obs.save(tmp_path / "obs.csv")
    back = Observations.load(tmp_path / "obs.csv")
    assert back.columns == obs.columns
    np.testing.assert_array_equal(back.rows, obs.rows)
    assert back.truth == json.loads(json.dumps(obs.truth))


def test_observation_file_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        Observations.load(tmp_path / "missing.csv")
    (tmp_path / "e.csv").write_text("")
    with pytest.raises(ValueError, match="empty"):
        Observations.load(tmp_path / "e.csv")
    (tmp_path / "r.csv").write_text("index,x,y\n1,0.5\n")
    with pytest.raises(ValueError, match=":2:"):
        Observations.load(tmp_path / "r.csv")


def test_exact_gp_posterior_needs_no_model():
    preset = get_preset("gp1d-rbf")
    post = build_posterior(preset, "gp-exact", make_observations(preset, 0))
    assert post.dim > 2  # lengthscale, noise and the whitened field
    with pytest.raises(PresetError, match="model"):
        build_posterior(preset, "priorcvae", make_observations(preset, 0))
    with pytest.raises(PresetError):
        build_posterior(get_preset("lgcp-integral"), "gp-exact", make_observations(get_preset("lgcp-integral"), 0))


# ---------------------------------------------------------------- command line


def _cli(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert _cli("generate", "--preset", "gp1d-rbf", "--count", 300, "--seed", 1, "--out", root / "gen") == 0
    for name, extra in (("cvae", []), ("vae", ["--unconditional"])):
        code = _cli("train", "--data", root / "gen" / "dataset.csv", "--preset", "gp1d-rbf", "--epochs", 2,
                    "--hidden", "8", "--latent-dim", 4, "--seed", 1, "--out", root / name, *extra)
        assert code == 0
    return root


def test_generate_outputs(trained):
    data = read_dataset(trained / "gen" / "dataset.csv")
    assert (data.count, data.k, data.n) == (300, 1, 80)
    cfg = json.loads((trained / "gen" / "config.json").read_text())
    assert cfg["seed"] == 1 and cfg["count"] == 300
    assert (trained / "gen" / "observations.csv").exists()


def test_train_outputs(trained):
    assert (trained / "cvae" / "model.json").exists()
    lines = (trained / "cvae" / "loss.csv").read_text().splitlines()
    # header, the untrained loss at epoch 0, then one row per epoch
    assert lines[0] == "epoch,train_loss,heldout_loss" and [l.split(",")[0] for l in lines[1:]] == ["0", "1", "2"]


def test_infer_and_compare(trained):
    common = ["--preset", "gp1d-rbf", "--warmup", 20, "--samples", 20, "--chains", 1, "--seed", 2,
              "--data", trained / "gen" / "observations.csv"]
    assert _cli("infer", "--kind", "priorcvae", "--model", trained / "cvae" / "model.json", *common,
                "--out", trained / "run_cvae") == 0
    assert _cli("infer", "--kind", "gp-exact", *common, "--out", trained / "run_gp") == 0
    assert (trained / "run_cvae" / "chain_0.csv").exists()
    assert _cli("compare", f"priorcvae={trained / 'run_cvae'}", f"gp={trained / 'run_gp'}",
                "--out", trained / "cmp") == 0
    text = (trained / "cmp" / "comparison.csv").read_text().splitlines()
    assert text[0] == "model,time_s,ess,ess_per_s" and len(text) == 3


def test_decode_is_seeded_and_frobenius_table(trained):
    model = trained / "cvae" / "model.json"
    for out in ("d1", "d2"):
        assert _cli("decode", "--model", model, "--condition", 0.1, "--condition", 0.5, "--count", 30,
                    "--seed", 7, "--out", trained / out) == 0
    a = (trained / "d1" / "decoded.csv").read_bytes()
    assert a == (trained / "d2" / "decoded.csv").read_bytes()
    assert read_dataset(trained / "d1" / "decoded.csv").count == 60
    assert _cli("decode", "--model", trained / "vae" / "model.json", "--count", 30, "--out", trained / "dv") == 0
    assert _cli("compare", "--decoded", f"priorcvae={trained / 'd1' / 'decoded.csv'}",
                "--decoded", f"priorvae={trained / 'dv' / 'decoded.csv'}", "--preset", "gp1d-rbf",
                "--out", trained / "frob") == 0
    assert len((trained / "frob" / "frobenius.csv").read_text().splitlines()) == 3


def test_decode_zero_count_writes_header_only(trained):
    assert _cli("decode", "--model", trained / "cvae" / "model.json", "--condition", 0.3, "--count", 0,
                "--out", trained / "d0") == 0
    assert len((trained / "d0" / "decoded.csv").read_text().splitlines()) == 1


def test_decode_svg(trained):
    assert _cli("decode", "--model", trained / "cvae" / "model.json", "--condition", 0.3, "--count", 3,
                "--svg", "--preset", "gp1d-rbf", "--out", trained / "dsvg") == 0
    assert (trained / "dsvg" / "decoded.svg").read_text().lstrip().startswith("<")


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["bogus"],
        ["generate"],
        ["generate", "--preset", "nope"],
        ["generate", "--preset", "gp1d-rbf", "--count", "0"],
        ["generate", "--preset", "gp1d-rbf", "--count", "x"],
        ["train"],
        ["infer", "--preset", "gp1d-rbf", "--kind", "nuts"],
        ["infer", "--preset", "gp1d-rbf", "--kind", "priorcvae"],
        ["decode"],
        ["compare"],
    ],
)
def test_usage_errors_exit_1(tmp_path, capsys, argv):
    assert main(argv + ["--out", str(tmp_path)] if argv else argv) == 1
    assert "Traceback" not in capsys.readouterr().err


def test_missing_model_names_path(tmp_path, capsys):
    missing = tmp_path / "nowhere" / "model.json"
    assert _cli("decode", "--model", missing, "--condition", 0.2, "--out", tmp_path) == 1
    assert str(missing) in capsys.readouterr().err


def test_bad_config_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text("{not json")
    assert _cli("generate", "--preset", "gp1d-rbf", "--config", cfg, "--out", tmp_path) == 1
    cfg.write_text(json.dumps({"preset": "gp1d-rbf", "count": 5, "train": {"nope": 1}}))
    assert _cli("generate", "--config", cfg, "--out", tmp_path) == 1
    cfg.write_text(json.dumps({"preset": "gp1d-rbf", "count": 5, "seed": 3}))
    assert _cli("generate", "--config", cfg, "--out", tmp_path) == 0
    assert read_dataset(tmp_path / "dataset.csv").count == 5
    assert json.loads((tmp_path / "config.json").read_text())["seed"] == 3


def test_condition_width_mismatch(trained, tmp_path):
    assert _cli("decode", "--model", trained / "cvae" / "model.json", "--condition", "0.1,0.2",
                "--out", tmp_path) == 1


def test_runtime_failure_exits_2(tmp_path, monkeypatch):
    import priorcvae.cli as cli

    def boom(*a, **k):
        raise np.linalg.LinAlgError("not positive definite")

    monkeypatch.setattr(cli, "generate_dataset", boom)
    assert _cli("generate", "--preset", "gp1d-rbf", "--count", 3, "--out", tmp_path) == 2
