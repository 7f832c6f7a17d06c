"""Conditional VAE for prior encoding.

The encoder sees ``concat(f, c)`` and emits ``(mu_z, logvar_z)``; the decoder
sees ``concat(z, c)`` and reconstructs ``f``. With ``condition_dim == 0`` the
same machinery is the unconditional PriorVAE baseline.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._rng import make_rng
from .data import PriorDataset
from .neural import (
    FORMAT_VERSION,
    AdamState,
    MlpParams,
    ModelFileError,
    _load_json,
    adam_step,
    init_params,
    mlp_forward,
    mlp_value_and_backward,
)


@dataclass
class CvaeModel:
    encoder: MlpParams
    decoder: MlpParams
    latent_dim: int
    condition_dim: int
    sigma2_vae: float = 1.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        d, k = self.latent_dim, self.condition_dim
        if self.encoder.n_out != 2 * d:
            raise ValueError(f"encoder emits {self.encoder.n_out} values, expected 2*{d}")
        if self.decoder.n_in != d + k:
            raise ValueError(f"decoder takes {self.decoder.n_in} inputs, expected {d}+{k}")
        if self.encoder.n_in != self.decoder.n_out + k:
            raise ValueError("encoder input width must be n + condition_dim")
        if not self.sigma2_vae > 0:
            raise ValueError("sigma2_vae must be positive")

    @property
    def n(self) -> int:
        return self.decoder.n_out

    def arrays(self) -> list[np.ndarray]:
        return self.encoder.arrays() + self.decoder.arrays()

    def copy(self) -> "CvaeModel":
        return CvaeModel(
            self.encoder.copy(),
            self.decoder.copy(),
            self.latent_dim,
            self.condition_dim,
            self.sigma2_vae,
            dict(self.metadata),
        )


def build_cvae(
    n: int,
    condition_dim: int,
    hidden=(60,),
    latent_dim: int = 40,
    sigma2_vae: float = 1.0,
    seed: int = 0,
    hidden_activation: str = "leaky_relu",
    output_activation: str = "identity",
    negative_slope: float = 0.01,
) -> CvaeModel:
    """Mirror-image MLP encoder/decoder; the decoder walks ``hidden`` in reverse."""
    hidden = [int(h) for h in hidden]
    enc = init_params(
        [n + condition_dim, *hidden, 2 * latent_dim],
        [hidden_activation] * len(hidden) + ["identity"],
        seed=make_rng(seed, 1).integers(2**31),
        negative_slope=negative_slope,
    )
    dec = init_params(
        [latent_dim + condition_dim, *hidden[::-1], n],
        [hidden_activation] * len(hidden) + [output_activation],
        seed=make_rng(seed, 2).integers(2**31),
        negative_slope=negative_slope,
    )
    return CvaeModel(enc, dec, latent_dim, condition_dim, sigma2_vae)


def _cond(model: CvaeModel, c, lead_shape) -> np.ndarray:
    if c is None:
        c = np.zeros((*lead_shape, 0))
    c = np.asarray(c, dtype=float)
    if c.ndim == 0:
        c = c.reshape(1)
    if c.shape[-1] != model.condition_dim:
        raise ValueError(f"condition has {c.shape[-1]} entries, model expects {model.condition_dim}")
    if c.shape[:-1] != tuple(lead_shape):
        c = np.broadcast_to(c, (*lead_shape, model.condition_dim))
    return c


def encode(model: CvaeModel, y, c=None):
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != model.n:
        raise ValueError(f"input has length {y.shape[-1]}, model grid has {model.n}")
    c = _cond(model, c, y.shape[:-1])
    out = mlp_forward(model.encoder, np.concatenate([y, c], axis=-1))
    d = model.latent_dim
    return out[..., :d], out[..., d:]


def reparameterize(mu, logvar, eps):
    mu, logvar, eps = (np.asarray(a, dtype=float) for a in (mu, logvar, eps))
    if not (mu.shape == logvar.shape == eps.shape):
        raise ValueError("mu, logvar and eps must have equal shapes")
    return mu + np.exp(0.5 * logvar) * eps


def decode(model: CvaeModel, z, c=None) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != model.latent_dim:
        raise ValueError(f"latent has {z.shape[-1]} entries, model expects {model.latent_dim}")
    c = _cond(model, c, z.shape[:-1])
    return mlp_forward(model.decoder, np.concatenate([z, c], axis=-1))


def kl_to_standard_normal(mu, logvar):
    """KL(N(mu, diag exp(logvar)) || N(0, I)), summed over the last axis."""
    mu = np.asarray(mu, dtype=float)
    logvar = np.asarray(logvar, dtype=float)
    # expm1 avoids cancellation in exp(v) - 1 - v for small v
    return 0.5 * np.sum(mu * mu + (np.expm1(logvar) - logvar), axis=-1)


def log_sum_exp(v, axis=-1):
    v = np.asarray(v, dtype=float)
    if v.size == 0 or v.shape[axis] == 0:
        raise ValueError("log_sum_exp of an empty vector")
    m = np.max(v, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def log_integral(f, axis=-1):
    """Grid quadrature of log of the integral of exp(f) over the unit domain."""
    f = np.asarray(f, dtype=float)
    return log_sum_exp(f, axis=axis) - np.log(f.shape[axis])


def _softmax(v):
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _loss_and_grads(model, f, c, eps, sigma2_f, sigma2_I=None, need_grads=True):
    f = np.atleast_2d(np.asarray(f, dtype=float))
    B = f.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    c = _cond(model, c, (B,))
    eps = np.asarray(eps, dtype=float).reshape(B, model.latent_dim)
    d = model.latent_dim

    enc_in = np.concatenate([f, c], axis=1)
    holder = {}

    def enc_cot(out):
        mu, logvar = out[:, :d], out[:, d:]
        std = np.exp(0.5 * logvar)
        z = mu + std * eps

        def dec_cot(fhat):
            resid = fhat - f
            recon = 0.5 * np.sum(resid * resid, axis=1) / sigma2_f
            g_fhat = resid / (sigma2_f * B)
            terms = {"recon": recon}
            if sigma2_I is not None:
                lI, lI_hat = log_integral(f), log_integral(fhat)
                diff = lI_hat - lI
                terms["integral"] = 0.5 * diff * diff / sigma2_I
                terms["integral_abs_err"] = np.abs(diff)
                g_fhat = g_fhat + (diff / (sigma2_I * B))[:, None] * _softmax(fhat)
            return terms, g_fhat

        _, terms, dgrads, gx = mlp_value_and_backward(model.decoder, np.concatenate([z, c], 1), dec_cot)
        kl = kl_to_standard_normal(mu, logvar)
        gz = gx[:, :d]
        g_mu = gz + mu / B
        g_logvar = gz * eps * 0.5 * std + 0.5 * np.expm1(logvar) / B
        terms["kl"] = kl
        holder["dec"] = dgrads
        return terms, np.concatenate([g_mu, g_logvar], axis=1)

    _, terms, egrads, _ = mlp_value_and_backward(model.encoder, enc_in, enc_cot)
    per_row = terms["recon"] + terms["kl"] + terms.get("integral", 0.0)
    loss = float(np.mean(per_row))
    stats = {k: float(np.mean(v)) for k, v in terms.items()}
    return loss, egrads + holder["dec"], stats


def priorcvae_loss(model: CvaeModel, f, c, eps):
    """Batch mean of ||f - f_hat||^2 / (2 sigma2_vae) + KL, with gradients.

    Returns ``(loss, grads, terms)``; ``grads`` aligns with :meth:`CvaeModel.arrays`
    and ``terms`` holds the batch-mean ``recon`` and ``kl`` parts.
    """
    return _loss_and_grads(model, f, c, eps, model.sigma2_vae)


def lgcp_loss(model: CvaeModel, f, c, eps, sigma2_f: float, sigma2_I: float):
    """PriorCVAE loss plus a squared-error term on the log-integral of exp(f).

    The reconstructed log-integral is computed from the decoded field with the same
    log-sum-exp quadrature as the target, so the decoder keeps a single output head.
    """
    return _loss_and_grads(model, f, c, eps, sigma2_f, sigma2_I)


# --------------------------------------------------------------------------- training


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 2000
    learning_rate: float = 1e-3
    seed: int = 0
    loss: str = "priorcvae"  # or "lgcp"
    sigma2_integral: float = 0.01

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")
        if self.loss not in ("priorcvae", "lgcp"):
            raise ValueError(f"unknown loss {self.loss!r}")


@dataclass
class LossHistory:
    epoch: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    heldout_loss: list = field(default_factory=list)

    def append(self, epoch, train, heldout):
        self.epoch.append(epoch)
        self.train_loss.append(train)
        self.heldout_loss.append(heldout)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "heldout_loss"])
            for row in zip(self.epoch, self.train_loss, self.heldout_loss):
                w.writerow([row[0], repr(float(row[1])), repr(float(row[2]))])

    @classmethod
    def from_csv(cls, path) -> "LossHistory":
        hist = cls()
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            if next(reader) != ["epoch", "train_loss", "heldout_loss"]:
                raise ValueError(f"{path}: not a loss history file")
            for row in reader:
                hist.append(int(row[0]), float(row[1]), float(row[2]))
        return hist


def _batch_loss(model, config, f, c, eps):
    if config.loss == "lgcp":
        return lgcp_loss(model, f, c, eps, model.sigma2_vae, config.sigma2_integral)
    return priorcvae_loss(model, f, c, eps)


def evaluate_loss(model: CvaeModel, dataset: PriorDataset, config: TrainConfig, seed=None):
    """Full-dataset loss with a fixed eps stream (deterministic for a given seed)."""
    seed = config.seed if seed is None else seed
    eps = make_rng(seed, 99).standard_normal((dataset.count, model.latent_dim))
    total, stats_sum = 0.0, {}
    for start in range(0, dataset.count, 5000):
        sl = slice(start, start + 5000)
        loss, _, stats = _batch_loss(model, config, dataset.draws[sl], dataset.conditions[sl], eps[sl])
        m = len(dataset.draws[sl])
        total += loss * m
        for k, v in stats.items():
            stats_sum[k] = stats_sum.get(k, 0.0) + v * m
    return total / dataset.count, {k: v / dataset.count for k, v in stats_sum.items()}


def check_dataset(model: CvaeModel, dataset: PriorDataset) -> None:
    if dataset.n != model.n or dataset.k != model.condition_dim:
        raise ValueError(
            f"dataset has {dataset.k} condition + {dataset.n} value columns; model expects "
            f"{model.condition_dim} + {model.n}"
        )


def train(model: CvaeModel, config: TrainConfig, dataset: PriorDataset, heldout: PriorDataset | None = None, log=None):
    """Minibatch Adam over ``config.epochs``; the model is updated in place.

    Epoch 0 in the history is the untrained model. The train column is the mean
    minibatch loss of each epoch; the held-out column uses a fixed eps stream.
    """
    check_dataset(model, dataset)
    if heldout is not None:
        check_dataset(model, heldout)
    history = LossHistory()
    start_time = time.perf_counter()
    ho = evaluate_loss(model, heldout, config)[0] if heldout is not None else float("nan")
    history.append(0, evaluate_loss(model, dataset, config)[0], ho)
    state = AdamState.zeros_like(model.arrays(), lr=config.learning_rate)
    arrays = model.arrays()
    N = dataset.count
    for epoch in range(1, config.epochs + 1):
        perm = make_rng(config.seed, 1, epoch).permutation(N)
        eps_all = make_rng(config.seed, 2, epoch).standard_normal((N, model.latent_dim))
        losses, sizes = [], []
        for start in range(0, N, config.batch_size):
            idx = perm[start : start + config.batch_size]
            loss, grads, _ = _batch_loss(
                model, config, dataset.draws[idx], dataset.conditions[idx], eps_all[start : start + len(idx)]
            )
            adam_step(arrays, grads, state)
            losses.append(loss)
            sizes.append(len(idx))
        train_loss = float(np.average(losses, weights=sizes))
        ho = evaluate_loss(model, heldout, config)[0] if heldout is not None else float("nan")
        history.append(epoch, train_loss, ho)
        if log is not None:
            log(epoch, train_loss, ho)
    model.metadata.update(
        {
            "seed": config.seed,
            "epochs": config.epochs,
            "batch_size": config.batch_size,
            "learning_rate": config.learning_rate,
            "loss": config.loss,
            "train_seconds": time.perf_counter() - start_time,
        }
    )
    return model, history


def sample_prior(model: CvaeModel, c, count: int, seed: int) -> np.ndarray:
    """Decoded prior draws D(z, c) with z ~ N(0, I), shape (count, n)."""
    z = make_rng(seed, 3).standard_normal((count, model.latent_dim))
    return decode(model, z, c)


# --------------------------------------------------------------------------- persistence


def save_model(model: CvaeModel, path, loss_history_path=None) -> None:
    meta = dict(model.metadata)
    if loss_history_path is not None:
        meta["loss_history_path"] = str(loss_history_path)
    doc = {
        "format_version": FORMAT_VERSION,
        "latent_dim": model.latent_dim,
        "condition_dim": model.condition_dim,
        "sigma2_vae": model.sigma2_vae,
        "layer_sizes": {"encoder": model.encoder.layer_sizes, "decoder": model.decoder.layer_sizes},
        "activations": {"encoder": model.encoder.activations, "decoder": model.decoder.activations},
        "encoder": model.encoder.to_dict(),
        "decoder": model.decoder.to_dict(),
        "training_metadata": meta,
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path) -> CvaeModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    doc = _load_json(path)
    try:
        if doc["format_version"] != FORMAT_VERSION:
            raise ModelFileError(f"{path}: unsupported format_version {doc['format_version']}")
        return CvaeModel(
            MlpParams.from_dict(doc["encoder"]),
            MlpParams.from_dict(doc["decoder"]),
            int(doc["latent_dim"]),
            int(doc["condition_dim"]),
            float(doc["sigma2_vae"]),
            dict(doc.get("training_metadata", {})),
        )
    except ModelFileError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"{path}: invalid model description: {exc}") from None
