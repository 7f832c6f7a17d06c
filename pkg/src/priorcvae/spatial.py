"""Synthetic 2-D binomial prevalence demo: encode an RBF prior over centroids, then infer.

A fixed set of area centroids in [0, 1]^2 carries a latent field
f ~ GP(0, sigma^2 * RBF_l), and unit i reports y_i ~ Binomial(n_i, logistic(b0 + f_i)).
The CVAE is trained on unit-variance draws conditioned on the lengthscale only;
the amplitude sigma is applied by scaling the decoded field at inference time.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import special, stats
from scipy.stats import qmc

from ._rng import make_rng
from .cvae import CvaeModel, TrainConfig, build_cvae, train
from .gp import DEFAULT_JITTER, Grid, HyperPrior, KernelSpec, cholesky_lower, build_covariance, sample_gp_dataset
from .mcmc import HmcConfig, HmcRun, DecoderField, ExactGpField, binom_spatial_model, hmc_sample

# inference-time priors for the spatial model
SPATIAL_PRIORS = {
    "lengthscale": HyperPrior.gamma(2.0, 4.0),
    "amplitude": HyperPrior.gamma(1.5, 1.5),
    "b0": HyperPrior.normal(0.0, 1.0),
}


@dataclass
class SpatialScenario:
    centroids: np.ndarray
    trials: np.ndarray
    b0: float = -1.0
    lengthscale: float = 0.3
    amplitude: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.centroids = np.atleast_2d(np.asarray(self.centroids, dtype=float))
        if self.centroids.shape[1] != 2:
            raise ValueError("centroids must be 2-D points")
        m = self.centroids.shape[0]
        self.trials = np.broadcast_to(np.asarray(self.trials, dtype=int), (m,)).copy()
        if np.any(self.trials < 1):
            raise ValueError("every unit needs at least one trial")
        if np.unique(self.centroids, axis=0).shape[0] != m:
            raise ValueError("centroids must be distinct")
        if not self.lengthscale > 0 or self.amplitude < 0:
            raise ValueError("need lengthscale > 0 and amplitude >= 0")

    @property
    def units(self) -> int:
        return self.centroids.shape[0]

    @property
    def grid(self) -> Grid:
        return Grid(self.centroids)

    @classmethod
    def default(cls, units: int = 63, trials: int = 500, layout_seed: int = 2024, **kw) -> "SpatialScenario":
        """Quasi-uniform centroids (scrambled Halton) in the unit square."""
        pts = qmc.Halton(d=2, scramble=True, seed=layout_seed).random(units)
        return cls(pts, np.full(units, trials), **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["centroids"] = self.centroids.tolist()
        d["trials"] = self.trials.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SpatialScenario":
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "SpatialScenario":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class SpatialObservations:
    y: np.ndarray
    f: np.ndarray
    theta: np.ndarray


def generate_scenario(scenario: SpatialScenario, jitter: float = DEFAULT_JITTER) -> SpatialObservations:
    """Draw the latent field and binomial counts; deterministic in ``scenario.seed``."""
    K = build_covariance(KernelSpec("rbf", scenario.lengthscale), scenario.grid, jitter)
    L = cholesky_lower(K)
    rng = make_rng(scenario.seed, 0)
    f = scenario.amplitude * (L @ rng.standard_normal(scenario.units))
    theta = special.expit(scenario.b0 + f)
    y = rng.binomial(scenario.trials, theta)
    return SpatialObservations(y=y, f=f, theta=theta)


@dataclass
class SpatialConfig:
    """Encoding and inference settings for the spatial demo."""

    train_count: int = 20000
    train_lengthscale: tuple = (0.01, 1.5)
    hidden: tuple = (60,)
    latent_dim: int = 30
    sigma2_vae: float = 0.8
    epochs: int = 100
    batch_size: int = 500
    learning_rate: float = 1e-3
    seed: int = 0

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.learning_rate, self.seed)


def train_spatial_cvae(scenario: SpatialScenario, config: SpatialConfig, log=None) -> CvaeModel:
    """Encode unit-variance RBF draws over the scenario's centroids, conditioned on lengthscale."""
    prior = HyperPrior.uniform(*config.train_lengthscale)
    data = sample_gp_dataset(KernelSpec("rbf", 0.5), prior, scenario.grid, config.train_count, config.seed)
    model = build_cvae(scenario.units, 1, config.hidden, config.latent_dim, config.sigma2_vae, seed=config.seed)
    model.metadata["kernel"] = "rbf"
    model, _ = train(model, config.train_config(), data, log=log)
    return model


@dataclass
class SpatialReport:
    gp_run: HmcRun
    cvae_run: HmcRun
    gp_prevalence: np.ndarray
    cvae_prevalence: np.ndarray
    pearson_r: float
    observations: SpatialObservations
    scenario: SpatialScenario
    extra: dict = field(default_factory=dict)

    def interval(self, run: HmcRun, name: str, level: float = 0.9):
        lo = 50.0 * (1.0 - level)
        return tuple(np.percentile(run.flat(name), [lo, 100.0 - lo]))

    def scatter_rows(self):
        return [
            (i, float(g), float(c)) for i, (g, c) in enumerate(zip(self.gp_prevalence, self.cvae_prevalence))
        ]

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_scatter(self.scatter_rows(), out / "scatter.csv")
        self.gp_run.save(out / "gp-exact")
        self.cvae_run.save(out / "priorcvae")
        self.scenario.save(out / "scenario.json")
        summary = {
            "pearson_r": self.pearson_r,
            "true": {"lengthscale": self.scenario.lengthscale, "amplitude": self.scenario.amplitude,
                     "b0": self.scenario.b0},
            "priorcvae_lengthscale_90": list(self.interval(self.cvae_run, "lengthscale")),
            "gp_lengthscale_90": list(self.interval(self.gp_run, "lengthscale")),
            **self.extra,
        }
        (out / "report.json").write_text(json.dumps(summary, indent=2))


def write_scatter(rows, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["unit", "gp_mean", "priorcvae_mean"])
        for unit, g, c in rows:
            w.writerow([unit, repr(g), repr(c)])


def read_scatter(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        if next(reader) != ["unit", "gp_mean", "priorcvae_mean"]:
            raise ValueError(f"{path}: not a scatter file")
        return np.array([[float(v) for v in row] for row in reader])


def spatial_gp_posterior(scenario: SpatialScenario, y, priors=None):
    """Exact-GP binomial posterior over (lengthscale, amplitude, b0, z)."""
    pr = {**SPATIAL_PRIORS, **(priors or {})}
    field_ = ExactGpField(KernelSpec("rbf", 0.5), scenario.grid, pr["lengthscale"], pr["amplitude"])
    return binom_spatial_model(field_, y, scenario.trials, pr["b0"])


def spatial_cvae_posterior(scenario: SpatialScenario, y, model: CvaeModel, priors=None):
    """Decoder-prior binomial posterior; the amplitude multiplies the decoded unit-variance field."""
    if model.n != scenario.units or model.condition_dim != 1:
        raise ValueError(f"model encodes {model.n} units / {model.condition_dim} conditions; "
                         f"scenario has {scenario.units} units")
    pr = {**SPATIAL_PRIORS, **(priors or {})}
    field_ = DecoderField(model, [pr["lengthscale"]], ["lengthscale"], pr["amplitude"])
    return binom_spatial_model(field_, y, scenario.trials, pr["b0"])


def spatial_posteriors(scenario: SpatialScenario, obs: SpatialObservations, model: CvaeModel, priors=None):
    """(GpExact posterior, PriorCVAE posterior) for the same binomial data."""
    return spatial_gp_posterior(scenario, obs.y, priors), spatial_cvae_posterior(scenario, obs.y, model, priors)


def run_spatial_pipeline(
    scenario: SpatialScenario,
    config: SpatialConfig | None = None,
    hmc: HmcConfig | None = None,
    model: CvaeModel | None = None,
    log=None,
) -> SpatialReport:
    """Generate data, encode (unless ``model`` is given), and infer with both priors."""
    config = config or SpatialConfig()
    hmc = hmc or HmcConfig()
    if model is None:
        model = train_spatial_cvae(scenario, config, log=log)
    obs = generate_scenario(scenario)
    gp_post, cvae_post = spatial_posteriors(scenario, obs, model)
    gp_run = hmc_sample(gp_post, hmc)
    cvae_run = hmc_sample(cvae_post, hmc)
    gp_prev = gp_run.flat("prevalence").mean(axis=0)
    cvae_prev = cvae_run.flat("prevalence").mean(axis=0)
    r = float(stats.pearsonr(gp_prev, cvae_prev)[0])
    return SpatialReport(gp_run, cvae_run, gp_prev, cvae_prev, r, obs, scenario)
