"""Seeded end-to-end studies: each trains what it needs, runs inference, and returns a result
with the measured quantities and a ``passed`` verdict against its threshold.

The functions are shared by the acceptance tests and ``scripts/``; all defaults are desk scale.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from ._rng import make_rng
from .compare import field_ess
from .cvae import decode, encode, log_integral, sample_prior, train
from .dynamics import BOARDING_SCHOOL, BOARDING_SCHOOL_N, DoubleWellParams, euler_maruyama_dw
from .experiments import NOISE_PRIOR, build_posterior, generate_dataset, get_preset, make_observations
from .gp import empirical_covariance, frobenius_distance, kernel_matrix, sample_gp
from .mcmc import DivergenceWarning, HmcConfig, gp_exact_model, hmc_sample, prior_cvae_model
from .spatial import SpatialConfig, SpatialScenario, run_spatial_pipeline


@dataclass
class StudyResult:
    name: str
    passed: bool
    summary: str
    values: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.summary} ({self.seconds:.0f} s)"


def _quiet_hmc(post, cfg):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DivergenceWarning)
        return hmc_sample(post, cfg)


# --------------------------------------------------------------------------- covariance fidelity


def conditioning_fidelity(
    seed: int = 0,
    rows: int = 20000,
    epochs: int = 200,
    batch_size: int = 500,
    draws: int = 10000,
    lengthscales=(0.05, 0.1, 0.3, 0.9),
) -> StudyResult:
    """Train CVAE and VAE identically on Matern-5/2 draws; compare decoded covariances with K_l."""
    t0 = time.perf_counter()
    preset = get_preset("gp1d-matern52")
    data = generate_dataset(preset, rows, seed)
    tcfg = replace(preset.train, epochs=epochs, batch_size=batch_size, seed=seed)
    cvae = preset.build_model(seed)
    vae = preset.build_model(seed, unconditional=True)
    train(cvae, tcfg, data)
    train(vae, tcfg, data.without_conditions())
    vae_cov = empirical_covariance(sample_prior(vae, None, draws, seed + 1))
    f_cvae, f_vae = [], []
    for ell in lengthscales:
        K = kernel_matrix(preset.kernel.with_lengthscale(ell), preset.grid.points)
        f_cvae.append(frobenius_distance(empirical_covariance(sample_prior(cvae, [ell], draws, seed + 1)), K))
        f_vae.append(frobenius_distance(vae_cov, K))
    ok = all(a < b for a, b in zip(f_cvae, f_vae))
    summary = ", ".join(f"l={ell}: {a:.2f} vs {b:.2f}" for ell, a, b in zip(lengthscales, f_cvae, f_vae))
    return StudyResult("conditioning fidelity (F_priorcvae < F_priorvae)", ok, summary,
                       {"lengthscales": list(lengthscales), "F_priorcvae": f_cvae, "F_priorvae": f_vae},
                       time.perf_counter() - t0)


# --------------------------------------------------------------------------- lengthscale recovery + efficiency


@dataclass
class RecoveryRep:
    rep: int
    cvae_interval: tuple
    cvae_mean: float
    gp_mean: float
    cvae_ess: float
    gp_ess: float
    cvae_seconds: float
    gp_seconds: float
    cvae_divergences: int
    gp_divergences: int

    @property
    def ratio(self) -> float:
        return (self.cvae_ess / self.cvae_seconds) / (self.gp_ess / self.gp_seconds)


def recovery_runs(
    reps: int = 10,
    seed: int = 0,
    rows: int = 20000,
    epochs: int = 100,
    hmc: HmcConfig | None = None,
    true_lengthscale: float = 0.2,
    locations: int = 4,
    noise: float = 0.1,
    log=None,
) -> tuple[list[RecoveryRep], float]:
    """Replicated RBF regression fits with the PriorCVAE and exact-GP priors.

    Each replication draws a fresh ground-truth curve and observation sites; both
    models share the data, the priors (l ~ U(0.01, 0.99), noise ~ N+(0.1)) and the
    HMC settings. Returns (per-rep records, training seconds).
    """
    hmc = hmc or HmcConfig(warmup=300, samples=700, chains=2)
    preset = get_preset("gp1d-rbf")
    t0 = time.perf_counter()
    model = preset.build_model(seed)
    train(model, replace(preset.train, epochs=epochs, seed=seed), generate_dataset(preset, rows, seed))
    train_seconds = time.perf_counter() - t0
    grid, kernel = preset.grid, preset.kernel.with_lengthscale(true_lengthscale)
    out = []
    for r in range(reps):
        f = sample_gp(kernel, grid, 1, 1000 + seed * 100 + r).draws[0]
        rng = make_rng(seed, 12, r)
        idx = np.sort(rng.choice(grid.n, size=locations, replace=False))
        y = f[idx] + noise * rng.standard_normal(locations)
        cfg = replace(hmc, seed=seed * 100 + r)
        runs = {}
        for name, post in (
            ("cvae", prior_cvae_model(model, idx, y, [preset.hyperprior], NOISE_PRIOR, ["lengthscale"])),
            ("gp", gp_exact_model(preset.kernel, grid, idx, y, preset.hyperprior, NOISE_PRIOR)),
        ):
            runs[name] = _quiet_hmc(post, cfg)
        ell_c = runs["cvae"].flat("lengthscale")
        rec = RecoveryRep(
            r,
            tuple(np.percentile(ell_c, [5.0, 95.0])),
            float(ell_c.mean()),
            float(runs["gp"].flat("lengthscale").mean()),
            field_ess(runs["cvae"]),
            field_ess(runs["gp"]),
            runs["cvae"].wall_seconds,
            runs["gp"].wall_seconds,
            int(runs["cvae"].divergences.sum()),
            int(runs["gp"].divergences.sum()),
        )
        out.append(rec)
        if log:
            log(rec)
    return out, train_seconds


def lengthscale_recovery(records: list[RecoveryRep], true_lengthscale: float = 0.2, need: int = 8) -> StudyResult:
    covered = sum(lo <= true_lengthscale <= hi for lo, hi in (r.cvae_interval for r in records))
    close = sum(abs(r.gp_mean - r.cvae_mean) < 0.15 for r in records)
    ok = covered >= need and close >= need
    return StudyResult(
        "lengthscale recovery",
        ok,
        f"90% interval covers {true_lengthscale} in {covered}/{len(records)}; "
        f"|mean_gp - mean_cvae| < 0.15 in {close}/{len(records)}",
        {"covered": covered, "close": close, "intervals": [list(r.cvae_interval) for r in records],
         "cvae_means": [r.cvae_mean for r in records], "gp_means": [r.gp_mean for r in records]},
    )


def efficiency_ordering(records: list[RecoveryRep], factor: float = 10.0) -> StudyResult:
    """Pooled ESS/s ratio: total field ESS over total wall time, PriorCVAE versus exact GP."""
    cvae = sum(r.cvae_ess for r in records) / sum(r.cvae_seconds for r in records)
    gp = sum(r.gp_ess for r in records) / sum(r.gp_seconds for r in records)
    ratio = cvae / gp
    per_rep = [r.ratio for r in records]
    return StudyResult(
        "efficiency ordering (ESS/s ratio)",
        ratio >= factor,
        f"pooled ESS/s {cvae:.1f} vs {gp:.1f} -> ratio {ratio:.1f} (need >= {factor:g}); "
        f"per-rep median {np.median(per_rep):.1f}",
        {"ratio": ratio, "cvae_ess_per_s": cvae, "gp_ess_per_s": gp, "per_rep": per_rep,
         "cvae_divergences": [r.cvae_divergences for r in records],
         "gp_divergences": [r.gp_divergences for r in records]},
    )


# --------------------------------------------------------------------------- SIR


def sir_envelope(seed: int = 0, rows: int = 20000, epochs: int | None = None, hmc: HmcConfig | None = None,
                 level: float = 0.9, need: int = 12) -> StudyResult:
    """PriorCVAE-SIR fit to the boarding-school series; count days inside the predictive envelope."""
    t0 = time.perf_counter()
    preset = get_preset("sir")
    tcfg = replace(preset.train, seed=seed, **({"epochs": epochs} if epochs else {}))
    model = preset.build_model(seed)
    train(model, tcfg, generate_dataset(preset, rows, seed))
    post = build_posterior(preset, "priorcvae", make_observations(preset, seed), model)
    run = _quiet_hmc(post, replace(hmc or HmcConfig(warmup=500, samples=1000, chains=2), seed=seed))
    mu = run.flat("mean_count")
    phi = 1.0 / run.flat("phi_inv")[:, None]
    rng = make_rng(seed, 21)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.clip(phi / (phi + mu), 1e-12, 1.0)
    yrep = rng.negative_binomial(np.broadcast_to(phi, mu.shape), p)
    lo, hi = np.percentile(yrep, [50 * (1 - level), 100 - 50 * (1 - level)], axis=0)
    inside = int(np.sum((BOARDING_SCHOOL >= lo) & (BOARDING_SCHOOL <= hi)))
    beta, gamma = run.flat("beta"), run.flat("gamma")
    return StudyResult(
        "SIR predictive envelope",
        inside >= need,
        f"{inside}/{BOARDING_SCHOOL.size} observed days inside the {level:.0%} envelope; "
        f"beta {beta.mean():.2f}, gamma {gamma.mean():.2f}, R0 {np.mean(beta / gamma):.2f}",
        {"inside": inside, "lower": lo.tolist(), "upper": hi.tolist(), "beta_mean": float(beta.mean()),
         "gamma_mean": float(gamma.mean()), "N": BOARDING_SCHOOL_N},
        time.perf_counter() - t0,
    )


# --------------------------------------------------------------------------- double well


def bimodality(states, bins: int = 40, min_mass: float = 0.2, span: float = 3.5) -> dict:
    """Histogram test: a local maximum on each side of zero, each side holding >= ``min_mass``."""
    x = np.asarray(states, dtype=float).ravel()
    counts, edges = np.histogram(x, bins=bins, range=(-span, span))
    centres = 0.5 * (edges[:-1] + edges[1:])
    neg, pos = centres < 0, centres > 0
    mode_neg = float(centres[neg][np.argmax(counts[neg])])
    mode_pos = float(centres[pos][np.argmax(counts[pos])])
    # each side's peak must stand above the histogram at the origin (not a shoulder of one central mode)
    centre = counts[np.argmin(np.abs(centres))]
    mass_neg, mass_pos = float(np.mean(x < 0)), float(np.mean(x > 0))
    ok = (mass_neg >= min_mass and mass_pos >= min_mass and counts[neg].max() > centre
          and counts[pos].max() > centre and mode_neg < 0 < mode_pos)
    return {"bimodal": bool(ok), "mode_neg": mode_neg, "mode_pos": mode_pos, "mass_neg": mass_neg,
            "mass_pos": mass_pos}


def doublewell_bimodality(seed: int = 0, rows: int = 20000, epochs: int | None = None, draws: int = 2000,
                          theta=(2.0, 3.0), burn_in: float = 10.0) -> StudyResult:
    """Decoded states at theta versus simulated ones, pooled over t >= ``burn_in``."""
    t0 = time.perf_counter()
    preset = get_preset("doublewell")
    tcfg = replace(preset.train, seed=seed, **({"epochs": epochs} if epochs else {}))
    model = preset.build_model(seed)
    train(model, tcfg, generate_dataset(preset, rows, seed))
    t = preset.grid.points[:, 0]
    late = t >= burn_in
    decoded = sample_prior(model, list(theta), draws, seed + 1)[:, late]
    truth = euler_maruyama_dw(DoubleWellParams(*theta), draws, seed + 2).draws[:, late]
    b_dec, b_true = bimodality(decoded), bimodality(truth)
    ok = b_dec["bimodal"] and b_true["bimodal"]
    return StudyResult(
        "double-well bimodality",
        ok,
        f"decoded modes {b_dec['mode_neg']:.2f}/{b_dec['mode_pos']:.2f} with mass "
        f"{b_dec['mass_neg']:.2f}/{b_dec['mass_pos']:.2f}; simulated modes "
        f"{b_true['mode_neg']:.2f}/{b_true['mode_pos']:.2f} (wells at +-{np.sqrt(theta[1]):.2f})",
        {"decoded": b_dec, "simulated": b_true},
        time.perf_counter() - t0,
    )


# --------------------------------------------------------------------------- LGCP integral


def lgcp_reconstruction(seed: int = 0, rows: int = 20000, epochs: int | None = None, heldout: int = 1000,
                        tol: float = 0.1) -> StudyResult:
    """Mean |log I_hat - log I| over held-out draws, decoding at the encoder mean."""
    t0 = time.perf_counter()
    preset = get_preset("lgcp-integral")
    tcfg = replace(preset.train, seed=seed, **({"epochs": epochs} if epochs else {}))
    model = preset.build_model(seed)
    train(model, tcfg, generate_dataset(preset, rows, seed))
    ho = generate_dataset(preset, heldout, seed + 7919)
    mu, _ = encode(model, ho.draws, ho.conditions)
    fhat = decode(model, mu, ho.conditions)
    err = np.abs(log_integral(fhat) - log_integral(ho.draws))
    return StudyResult(
        "LGCP integral reconstruction",
        float(err.mean()) <= tol,
        f"held-out mean |log I_hat - log I| = {err.mean():.4f} (need <= {tol}); 95th pct {np.percentile(err, 95):.4f}",
        {"mean_abs_error": float(err.mean()), "p95": float(np.percentile(err, 95))},
        time.perf_counter() - t0,
    )


# --------------------------------------------------------------------------- binary condition


def binary_condition(seed: int = 0, rows: int = 20000, epochs: int | None = None, hmc: HmcConfig | None = None,
                     need: float = 0.8) -> StudyResult:
    """Data generated with c = 1; share of Beta-relaxed c draws above 0.5."""
    t0 = time.perf_counter()
    preset = get_preset("gp1d-binary")
    tcfg = replace(preset.train, seed=seed, **({"epochs": epochs} if epochs else {}))
    model = preset.build_model(seed)
    train(model, tcfg, generate_dataset(preset, rows, seed))
    obs = make_observations(preset, seed)
    post = build_posterior(preset, "priorcvae", obs, model)
    run = _quiet_hmc(post, replace(hmc or HmcConfig(warmup=500, samples=1500, chains=2), seed=seed))
    c = run.flat("c")
    share = float(np.mean(c > 0.5))
    return StudyResult(
        "binary condition recovery",
        share >= need,
        f"{share:.1%} of c draws above 0.5 (need >= {need:.0%})",
        {"share": share, "c_mean": float(c.mean())},
        time.perf_counter() - t0,
    )


# --------------------------------------------------------------------------- spatial


def spatial_agreement(seed: int = 0, units: int = 25, epochs: int = 100, hmc: HmcConfig | None = None,
                      need: float = 0.9) -> StudyResult:
    t0 = time.perf_counter()
    scen = SpatialScenario.default(units=units, seed=seed)
    cfg = SpatialConfig(latent_dim=min(30, units), epochs=epochs, seed=seed)
    report = run_spatial_pipeline(scen, cfg, replace(hmc or HmcConfig(warmup=500, samples=1000, chains=2), seed=seed))
    r = report.pearson_r
    return StudyResult(
        "spatial prevalence agreement",
        r >= need,
        f"Pearson r = {r:.4f} between exact-GP and PriorCVAE posterior-mean prevalences over {units} units",
        {"pearson_r": r},
        time.perf_counter() - t0,
    )


__all__ = [
    "StudyResult",
    "RecoveryRep",
    "bimodality",
    "binary_condition",
    "conditioning_fidelity",
    "doublewell_bimodality",
    "efficiency_ordering",
    "lengthscale_recovery",
    "lgcp_reconstruction",
    "recovery_runs",
    "sir_envelope",
    "spatial_agreement",
]
