"""Experiment presets: every pipeline (data, network, training, observations, inference)
fully specified by name, at desk scale by default and at published scale on request.
"""

from __future__ import annotations

import copy
import csv
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ._rng import make_rng
from .cvae import CvaeModel, TrainConfig, build_cvae, log_integral
from .data import PriorDataset
from .dynamics import (
    BOARDING_SCHOOL,
    BOARDING_SCHOOL_N,
    DoubleWellParams,
    SirParams,
    doublewell_conditions,
    euler_maruyama_dw,
    sample_doublewell_dataset,
    sample_sir_dataset,
    with_theta,
)
from .gp import Grid, HyperPrior, KernelSpec, sample_gp, sample_gp_dataset
from .mcmc import (
    DecoderField,
    GaussianObs,
    HmcConfig,
    Posterior,
    binary_condition_relaxation,
    gp_exact_model,
    prior_cvae_model,
    prior_vae_model,
    sir_cvae_model,
)
from .spatial import SpatialScenario, generate_scenario, spatial_cvae_posterior, spatial_gp_posterior

PRESET_NAMES = (
    "gp1d-matern52",
    "gp1d-rbf",
    "gp1d-binary",
    "nonstationary",
    "lgcp-integral",
    "doublewell",
    "sir",
    "spatial",
)
INFER_KINDS = ("gp-exact", "priorvae", "priorcvae")
KIND_ALIASES = {"sir-cvae": "priorcvae", "gp_exact": "gp-exact", "prior_cvae": "priorcvae", "prior_vae": "priorvae"}

NOISE_PRIOR = HyperPrior.half_normal(0.1)
DW_SETTINGS = ((2.0, 3.0), (4.0, 1.0))
SIR_TRAIN_PRIORS = {"beta": HyperPrior.uniform(0.0, 3.0), "gamma": HyperPrior.uniform(0.0, 1.0)}


class PresetError(ValueError):
    """Unknown preset, unsupported kind, or an invalid configuration field."""


@dataclass
class NetConfig:
    hidden: tuple = (60,)
    latent_dim: int = 40
    sigma2_vae: float = 1.0
    hidden_activation: str = "leaky_relu"
    output_activation: str = "identity"


@dataclass
class Preset:
    name: str
    family: str  # gp | binary | lgcp | doublewell | sir | spatial
    grid: Grid
    kernel: KernelSpec | None
    hyperprior: HyperPrior | None
    net: NetConfig
    train: TrainConfig
    hmc: HmcConfig
    count: int = 20000
    observations: dict = field(default_factory=dict)
    paper_scale: bool = False

    @property
    def condition_dim(self) -> int:
        return 2 if self.family in ("doublewell", "sir") else 1

    def build_model(self, seed: int | None = None, unconditional: bool = False) -> CvaeModel:
        k = 0 if unconditional else self.condition_dim
        model = build_cvae(
            self.grid.n,
            k,
            self.net.hidden,
            self.net.latent_dim,
            self.net.sigma2_vae,
            seed=self.train.seed if seed is None else seed,
            hidden_activation=self.net.hidden_activation,
            output_activation=self.net.output_activation,
        )
        model.metadata["preset"] = self.name
        return model

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "family": self.family,
            "paper_scale": self.paper_scale,
            "grid_n": self.grid.n,
            "kernel": None if self.kernel is None else asdict(self.kernel),
            "hyperprior": None if self.hyperprior is None else {"kind": self.hyperprior.kind,
                                                                "params": list(self.hyperprior.params)},
            "count": self.count,
            "net": {**asdict(self.net), "hidden": list(self.net.hidden)},
            "train": asdict(self.train),
            "hmc": asdict(self.hmc),
            "observations": self.observations,
        }


def _hmc(paper: bool, **kw) -> HmcConfig:
    if paper:
        return HmcConfig(warmup=5000, samples=50000, chains=3, **kw)
    return HmcConfig(warmup=200, samples=800, chains=2, **kw)


def get_preset(name: str, paper_scale: bool = False) -> Preset:
    """Fully specified pipeline for ``name``; desk scale unless ``paper_scale``."""
    p = paper_scale
    desk_train = TrainConfig(epochs=50, batch_size=500)
    if name in ("gp1d-matern52", "gp1d-rbf"):
        family = "matern52" if name.endswith("matern52") else "rbf"
        return Preset(
            name, "gp", Grid.regular(80), KernelSpec(family, 0.2), HyperPrior.uniform(0.01, 0.99),
            NetConfig((60,), 40, 1.0),
            TrainConfig(epochs=500, batch_size=2000) if p else desk_train,
            _hmc(p), 100000 if p else 20000,
            {"lengthscale": 0.2, "locations": 4, "noise": 0.1}, p,
        )
    if name == "gp1d-binary":
        return Preset(
            name, "binary", Grid.regular(100), KernelSpec("rbf", 0.1), HyperPrior.bernoulli_mixture(0.1, 0.4, 0.5),
            NetConfig((70,), 50, 0.9),
            # the condition only starts to shape the decoded covariance after ~20k optimiser steps
            TrainConfig(epochs=250, batch_size=1000) if p else TrainConfig(epochs=600, batch_size=500),
            HmcConfig(warmup=1000, samples=100000, chains=4) if p else _hmc(False), 100000 if p else 20000,
            {"c": 1, "locations": 7, "noise": 0.1}, p,
        )
    if name == "nonstationary":
        return Preset(
            name, "gp", Grid.regular(80), KernelSpec("lin_rbf", 0.2, c_lin=0.4), HyperPrior.uniform(0.01, 0.4),
            NetConfig((60,), 40, 0.01),
            TrainConfig(epochs=5000, batch_size=2000) if p else desk_train,
            _hmc(p), 100000 if p else 20000,
            {"lengthscale": 0.2, "locations": 10, "noise": 0.1}, p,
        )
    if name == "lgcp-integral":
        return Preset(
            name, "lgcp", Grid.regular(80), KernelSpec("rbf", 0.2), None,
            NetConfig((60,), 40, 0.1),
            replace(TrainConfig(epochs=500, batch_size=2000) if p else desk_train, loss="lgcp", sigma2_integral=0.01),
            _hmc(p), 100000 if p else 20000,
            {"locations": 20, "noise": 0.1}, p,
        )
    if name == "doublewell":
        return Preset(
            name, "doublewell", Grid(np.linspace(0.0, 20.0, DoubleWellParams(2.0, 3.0).grid_length)), None, None,
            NetConfig((1000, 500, 100) if p else (256, 128), 50, 1.0, "sigmoid", "identity"),
            TrainConfig(epochs=5000, batch_size=2000) if p else desk_train,
            _hmc(p), 100000 if p else 20000,
            {"theta1": 2.0, "theta2": 3.0, "locations": 25, "noise": 0.3}, p,
        )
    if name == "sir":
        return Preset(
            name, "sir", Grid(np.arange(14.0)), None, None,
            NetConfig((10,), 6, 0.01, "leaky_relu", "sigmoid"),
            TrainConfig(epochs=10000, batch_size=2000) if p else TrainConfig(epochs=200, batch_size=500),
            _hmc(p), 100000 if p else 20000,
            {"N": BOARDING_SCHOOL_N, "I0": 1, "days": 13}, p,
        )
    if name == "spatial":
        scen = SpatialScenario.default()
        return Preset(
            name, "spatial", scen.grid, KernelSpec("rbf", 0.3), HyperPrior.uniform(0.01, 1.5),
            NetConfig((60,), 30, 0.8),
            TrainConfig(epochs=10000, batch_size=2000) if p else desk_train,
            _hmc(p), 100000 if p else 20000,
            {"units": scen.units, "trials": 500, "b0": -1.0, "lengthscale": 0.3, "amplitude": 1.0,
             "layout_seed": 2024}, p,
        )
    raise PresetError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")


def _update_dataclass(obj, values: dict, where: str):
    names = {f.name for f in fields(obj)}
    unknown = set(values) - names
    if unknown:
        raise PresetError(f"unknown field(s) in {where}: {', '.join(sorted(unknown))}")
    try:
        if "hidden" in values:
            values = {**values, "hidden": tuple(values["hidden"])}
        return replace(obj, **values)
    except (TypeError, ValueError) as exc:
        raise PresetError(f"invalid value in {where}: {exc}") from None


def apply_overrides(preset: Preset, overrides: dict) -> Preset:
    """Return a copy with fields replaced from a nested dict (as read from a config file)."""
    out = copy.deepcopy(preset)
    for key, value in overrides.items():
        if key in ("train", "hmc", "net"):
            if not isinstance(value, dict):
                raise PresetError(f"config field {key!r} must be an object")
            setattr(out, key, _update_dataclass(getattr(out, key), value, key))
        elif key == "count":
            if not isinstance(value, int) or value < 1:
                raise PresetError("config field 'count' must be a positive integer")
            out.count = value
        elif key == "observations":
            if not isinstance(value, dict):
                raise PresetError("config field 'observations' must be an object")
            out.observations = {**out.observations, **value}
        elif key in ("preset", "name", "paper_scale", "seed"):
            continue
        else:
            raise PresetError(f"unknown config field {key!r}")
    return out


# --------------------------------------------------------------------------- data


def _scenario(preset: Preset, seed: int) -> SpatialScenario:
    o = preset.observations
    return SpatialScenario.default(
        units=int(o["units"]), trials=int(o["trials"]), layout_seed=int(o["layout_seed"]),
        b0=float(o["b0"]), lengthscale=float(o["lengthscale"]), amplitude=float(o["amplitude"]), seed=seed,
    )


def generate_dataset(preset: Preset, count: int, seed: int) -> PriorDataset:
    """Training draws for the preset's prior (conditions + values)."""
    if count < 1:
        raise PresetError("count must be >= 1")
    fam = preset.family
    if fam in ("gp", "binary", "spatial"):
        return sample_gp_dataset(preset.kernel, preset.hyperprior, preset.grid, count, seed)
    if fam == "lgcp":
        return sample_gp(preset.kernel, preset.grid, count, seed)
    if fam == "doublewell":
        thetas = doublewell_conditions(DW_SETTINGS, count, seed)
        return sample_doublewell_dataset(thetas, DoubleWellParams(*DW_SETTINGS[0]), seed)
    o = preset.observations
    template = SirParams(0.0, 0.0, N=o["N"], I0=o["I0"], days=o["days"])
    return sample_sir_dataset(SIR_TRAIN_PRIORS["beta"], SIR_TRAIN_PRIORS["gamma"], template, count, seed)


@dataclass
class Observations:
    """Observed data for inference plus the generating truth (when synthetic)."""

    columns: list
    rows: np.ndarray
    truth: dict = field(default_factory=dict)

    def column(self, name) -> np.ndarray:
        return self.rows[:, self.columns.index(name)]

    def save(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for row in self.rows.tolist():
                w.writerow([_fmt(v) for v in row])
        path.with_suffix(".truth.json").write_text(json.dumps(self.truth, indent=2))

    @classmethod
    def load(cls, path) -> "Observations":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"observation file not found: {path}")
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            try:
                columns = next(reader)
            except StopIteration:
                raise ValueError(f"{path}: empty observation file") from None
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(columns):
                    raise ValueError(f"{path}:{lineno}: expected {len(columns)} fields, got {len(row)}")
                try:
                    rows.append([float(v) for v in row])
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: non-numeric field") from None
        truth_path = path.with_suffix(".truth.json")
        truth = json.loads(truth_path.read_text()) if truth_path.exists() else {}
        return cls(columns, np.array(rows, dtype=float).reshape(-1, len(columns)), truth)


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() and abs(v) < 2**53 else repr(float(v))


def _pick_locations(n: int, m: int, rng) -> np.ndarray:
    return np.sort(rng.choice(n, size=min(m, n), replace=False))


def make_observations(preset: Preset, seed: int) -> Observations:
    """Synthetic observations for the preset (the real boarding-school series for SIR)."""
    fam, o = preset.family, preset.observations
    rng = make_rng(seed, 11)
    x = preset.grid.points[:, 0]
    if fam in ("gp", "binary", "lgcp"):
        if fam == "binary":
            first, second, _ = preset.hyperprior.params
            ell = second if int(o["c"]) == 1 else first
            truth = {"c": int(o["c"]), "lengthscale": ell}
        elif fam == "lgcp":
            ell = preset.kernel.lengthscale
            truth = {"lengthscale": ell}
        else:
            ell = float(o["lengthscale"])
            truth = {"lengthscale": ell}
        f = sample_gp(preset.kernel.with_lengthscale(ell), preset.grid, 1, seed).draws[0]
        idx = _pick_locations(preset.grid.n, int(o["locations"]), rng)
        y = f[idx] + float(o["noise"]) * rng.standard_normal(idx.size)
        truth.update({"noise": float(o["noise"]), "f": f.tolist()})
        if fam == "lgcp":
            truth["log_integral"] = float(log_integral(f))
        return Observations(["index", "x", "y"], np.column_stack([idx, x[idx], y]), truth)
    if fam == "doublewell":
        params = with_theta(DoubleWellParams(*DW_SETTINGS[0]), float(o["theta1"]), float(o["theta2"]))
        f = euler_maruyama_dw(params, 1, seed).draws[0]
        idx = _pick_locations(preset.grid.n, int(o["locations"]), rng)
        y = f[idx] + float(o["noise"]) * rng.standard_normal(idx.size)
        truth = {"theta1": params.theta1, "theta2": params.theta2, "noise": float(o["noise"]), "f": f.tolist()}
        return Observations(["index", "x", "y"], np.column_stack([idx, x[idx], y]), truth)
    if fam == "sir":
        days = np.arange(BOARDING_SCHOOL.size)
        return Observations(["day", "infected"], np.column_stack([days, BOARDING_SCHOOL]).astype(float),
                            {"source": "boarding school influenza outbreak, N=763"})
    scen = _scenario(preset, seed)
    obs = generate_scenario(scen)
    rows = np.column_stack([np.arange(scen.units), scen.centroids, scen.trials, obs.y]).astype(float)
    truth = {"b0": scen.b0, "lengthscale": scen.lengthscale, "amplitude": scen.amplitude,
             "theta": obs.theta.tolist()}
    return Observations(["unit", "x0", "x1", "trials", "y"], rows, truth)


# --------------------------------------------------------------------------- inference


def normalize_kind(kind: str) -> str:
    kind = KIND_ALIASES.get(kind, kind)
    if kind not in INFER_KINDS:
        raise PresetError(f"unknown inference kind {kind!r}; choose from {', '.join(INFER_KINDS)}")
    return kind


def _check_model(preset: Preset, model: CvaeModel, kind: str):
    if model is None:
        raise PresetError(f"kind {kind} needs a trained model (--model)")
    if model.n != preset.grid.n:
        raise PresetError(f"model decodes {model.n} values but the {preset.name} grid has {preset.grid.n} points")
    want = 0 if kind == "priorvae" else preset.condition_dim
    if model.condition_dim != want:
        raise PresetError(f"kind {kind} needs a model with {want} condition(s); got {model.condition_dim}")


def build_posterior(preset: Preset, kind: str, obs: Observations, model: CvaeModel | None = None) -> Posterior:
    """The log posterior for ``kind`` on ``obs`` under the preset's prior structure."""
    kind = normalize_kind(kind)
    fam = preset.family
    if kind != "gp-exact":
        _check_model(preset, model, kind)
    if fam == "sir":
        if kind != "priorcvae":
            raise PresetError("the sir preset supports only --kind priorcvae (sir-cvae)")
        return sir_cvae_model(model, obs.column("infected"), preset.observations["N"])
    if fam == "spatial":
        if kind == "priorvae":
            raise PresetError("the spatial preset supports gp-exact and priorcvae")
        scen = SpatialScenario(obs.rows[:, 1:3], obs.column("trials").astype(int))
        if kind == "gp-exact":
            return spatial_gp_posterior(scen, obs.column("y"))
        return spatial_cvae_posterior(scen, obs.column("y"), model)
    idx = obs.column("index").astype(int)
    y = obs.column("y")
    if kind == "gp-exact":
        if fam in ("lgcp", "doublewell"):
            raise PresetError(f"no exact GP baseline for the {preset.name} preset")
        prior = preset.hyperprior
        if fam == "binary":
            prior = HyperPrior.uniform(*sorted(preset.hyperprior.params[:2]))
        return gp_exact_model(preset.kernel, preset.grid, idx, y, prior, NOISE_PRIOR)
    if kind == "priorvae":
        return prior_vae_model(model, idx, y, NOISE_PRIOR)
    if fam == "gp":
        return prior_cvae_model(model, idx, y, [preset.hyperprior], NOISE_PRIOR, ["lengthscale"])
    if fam == "binary":
        base = prior_cvae_model(model, idx, y, [HyperPrior.uniform(0.0, 1.0)], NOISE_PRIOR, ["lengthscale"])
        return binary_condition_relaxation(base, preset.hyperprior)
    if fam == "lgcp":
        ell = np.array([preset.kernel.lengthscale])
        field_ = DecoderField(model, [], [], condition_map=lambda c: (ell, None))
        return Posterior("prior_cvae", field_, GaussianObs(idx, y, NOISE_PRIOR), {"log_integral": True})
    # doublewell: drift parameters inferred over a box spanning both training settings
    priors = [HyperPrior.uniform(1.5, 4.5), HyperPrior.uniform(0.5, 3.5)]
    return prior_cvae_model(model, idx, y, priors, HyperPrior.half_normal(0.5), ["theta1", "theta2"])
