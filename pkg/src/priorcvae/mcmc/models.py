"""Log posteriors on an unconstrained parameter vector, with exact gradients.

A :class:`Posterior` couples a latent *field* (exact GP or trained decoder) with
an observation *likelihood*. Constrained parameters are sampled on log or logit
scales; Jacobian terms are included in the density.

Hyperparameters are scalars, so the hot path evaluates them with plain ``math``
calls; numpy is reserved for the field and likelihood vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.linalg import lapack

from ..cvae import CvaeModel, decode, log_integral
from ..gp import (
    DEFAULT_JITTER,
    Grid,
    HyperPrior,
    KernelSpec,
    NotPositiveDefiniteError,
    kernel_from_terms,
    pair_terms,
)

KINDS = ("gp_exact", "prior_vae", "prior_cvae", "sir_cvae", "binom_spatial_cvae", "binom_spatial_gp")
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class NonFiniteDensityError(FloatingPointError):
    def __init__(self, message, snapshot):
        super().__init__(message)
        self.snapshot = snapshot


def _softplus(u):
    return np.logaddexp(0.0, u)


def _softplus1(u: float) -> float:
    return max(u, 0.0) + math.log1p(math.exp(-abs(u)))


def _expit1(u: float) -> float:
    if u >= 0:
        return 1.0 / (1.0 + math.exp(-u))
    e = math.exp(u)
    return e / (1.0 + e)


def beta_logit_scale(a: float, b: float) -> float:
    """Scale k of the unit-interval map c = expit(u / k) used for Beta(a, b) priors.

    For a, b >= 1 this is the plain logit. For small shape parameters the plain
    logit leaves a prior density ~ exp(-a |u|) in u, flat over thousands of units,
    so a trajectory that wanders toward one end never returns. With k = min(a, b)
    the tails decay like exp(-|u|) and the mass near c = 0 and c = 1 stays within a
    few units of the origin; the posterior itself is unchanged.
    """
    return min(1.0, a, b)


def transform1(prior: HyperPrior, u: float):
    """Scalar version of :func:`transform`: ``(x, lp, dlp_du, dx_du)`` as floats.

    On the positive support ``log x`` is taken as ``u`` itself, which keeps the
    density finite where ``exp(u)`` underflows.
    """
    kind, p = prior.kind, prior.params
    if kind == "normal":
        m, s = p
        d = (u - m) / s
        return u, -math.log(s) - _HALF_LOG_2PI - 0.5 * d * d, -d / s, 1.0
    if kind == "uniform":
        lo, hi = p
        s = _expit1(u)
        ls, l1s = -_softplus1(-u), -_softplus1(u)
        dx = (hi - lo) * s * (1.0 - s)
        # the uniform density cancels the log(hi - lo) of the Jacobian
        return lo + (hi - lo) * s, ls + l1s, 1.0 - 2.0 * s, dx
    if kind == "beta":
        a, b = p
        k = beta_logit_scale(a, b)
        v = u / k
        s = _expit1(v)
        ls, l1s = -_softplus1(-v), -_softplus1(v)
        lbeta = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
        return s, a * ls + b * l1s - lbeta - math.log(k), (a * (1.0 - s) - b * s) / k, s * (1.0 - s) / k
    if kind == "bernoulli_mixture":
        raise ValueError("no continuous transform for a bernoulli_mixture prior")
    x = math.exp(u)
    if kind == "gamma":
        a, b = p
        lp = a * math.log(b) - math.lgamma(a) + (a - 1.0) * u - b * x
        g = (a - 1.0) - b * x
    elif kind == "half_normal":
        s = p[0]
        lp = math.log(math.sqrt(2.0 / math.pi) / s) - 0.5 * (x / s) ** 2
        g = -x * x / s**2
    elif kind == "trunc_normal_pos":
        m, s = p
        lp = -math.log(s) - _HALF_LOG_2PI - 0.5 * ((x - m) / s) ** 2
        g = -(x - m) * x / s**2
    else:  # exponential
        r = p[0]
        lp = math.log(r) - r * x
        g = -r * x
    return x, lp + u, g + 1.0, x


def transform(prior: HyperPrior, u):
    """Map unconstrained ``u`` (array) to the prior's support.

    Returns ``(x, lp, dlp_du, dx_du)`` where ``lp`` is the prior log density plus
    the log-Jacobian and ``dlp_du`` its derivative in ``u``.
    """
    u = np.asarray(u, dtype=float)
    support = prior.support
    if support == "real":
        lp, g = prior.logpdf(u)
        return u, lp, g, np.ones_like(u)
    if support == "positive":
        x = np.exp(u)
        lp, g = prior.logpdf(x)
        return x, lp + u, g * x + 1.0, x
    if support == "unit":
        # Beta density times Jacobian, kept on the log-sigmoid scale so the
        # concentrated Beta(1e-4, 1e-4) stays finite at saturated logits
        a, b = prior.params
        k = beta_logit_scale(a, b)
        v = u / k
        s = special.expit(v)
        lp = a * -_softplus(-v) + b * -_softplus(v) - special.betaln(a, b) - np.log(k)
        return s, lp, (a * (1.0 - s) - b * s) / k, s * (1.0 - s) / k
    s = special.expit(u)
    log_s, log_1ms = -_softplus(-u), -_softplus(u)
    if support == "interval":
        lo, hi = prior.bounds
        x = lo + (hi - lo) * s
        lp, g = prior.logpdf(x)
        dx = (hi - lo) * s * (1.0 - s)
        return x, lp + np.log(hi - lo) + log_s + log_1ms, g * dx + (1.0 - 2.0 * s), dx
    raise ValueError(f"no continuous transform for a {prior.kind} prior")


def inverse_transform(prior: HyperPrior, x):
    x = np.asarray(x, dtype=float)
    support = prior.support
    if support == "real":
        return x
    if support == "positive":
        return np.log(x)
    if support == "unit":
        return beta_logit_scale(*prior.params) * special.logit(x)
    lo, hi = prior.bounds
    return special.logit((x - lo) / (hi - lo))


def scale_field(amplitude, f_std):
    """f = amplitude * f_std: the single product node carrying the amplitude."""
    return amplitude * f_std


@dataclass
class Block:
    name: str
    size: int
    prior: HyperPrior | None  # None: standard normal latent block (z)


# --------------------------------------------------------------------------- fields


class ExactGpField:
    """f = amplitude * L(lengthscale) z, with L the Cholesky factor of the unit-variance kernel."""

    def __init__(self, kernel: KernelSpec, grid: Grid, lengthscale_prior: HyperPrior,
                 amplitude_prior: HyperPrior | None = None, jitter: float = DEFAULT_JITTER):
        self.kernel = kernel
        self.grid = grid
        self.jitter = jitter
        self.n = grid.n
        self.blocks = [Block("lengthscale", 1, lengthscale_prior)]
        if amplitude_prior is not None:
            self.blocks.append(Block("amplitude", 1, amplitude_prior))
        self.latent = Block("z", grid.n, None)
        # distances are lengthscale-free: computed once per grid
        self._r2, self._lin = pair_terms(kernel, grid.points)
        self._diag = np.diag_indices(grid.n)

    def _chol(self, ell, with_grad=False):
        out = kernel_from_terms(self.kernel.with_lengthscale(ell), self._r2, self._lin, with_grad)
        K, dK = out if with_grad else (out, None)
        K[self._diag] += self.jitter
        L, info = lapack.dpotrf(K, lower=1, clean=1, overwrite_a=1)
        if info > 0:
            raise NotPositiveDefiniteError(info - 1)
        return L, dK

    def value(self, x: dict) -> np.ndarray:
        L, _ = self._chol(x["lengthscale"])
        return scale_field(x.get("amplitude", 1.0), L @ x["z"])

    def value_and_vjp(self, x: dict, likelihood_grad):
        ell = x["lengthscale"]
        amp = x.get("amplitude", 1.0)
        z = x["z"]
        L, dK = self._chol(ell, with_grad=True)
        f_std = L @ z
        f = scale_field(amp, f_std)
        extra, g = likelihood_grad(f)
        Ltg = L.T @ g
        grads = {"z": amp * Ltg}
        if "amplitude" in x:
            grads["amplitude"] = float(g @ f_std)
        # dL = L Phi(L^-1 dK L^-T), Phi = lower triangle with halved diagonal
        X, _ = lapack.dtrtrs(L, dK, lower=1)
        A, _ = lapack.dtrtrs(L, X.T, lower=1)
        phi_z = np.tril(A) @ z - 0.5 * np.diagonal(A) * z
        grads["lengthscale"] = float(amp * (Ltg @ phi_z))
        return f, extra, grads


class DecoderField:
    """f = amplitude * D(z, condition_map(c)) with a trained decoder."""

    def __init__(self, model: CvaeModel, condition_priors=(), condition_names=None,
                 amplitude_prior: HyperPrior | None = None, condition_map=None):
        self.model = model
        condition_priors = list(condition_priors)
        if condition_map is None and len(condition_priors) != model.condition_dim:
            raise ValueError(
                f"decoder takes {model.condition_dim} conditions, {len(condition_priors)} priors given"
            )
        names = condition_names or (
            ["lengthscale"] if len(condition_priors) == 1 else [f"c{i}" for i in range(len(condition_priors))]
        )
        self.condition_names = list(names)
        self.condition_map = condition_map
        self.n = model.n
        self.blocks = [Block(nm, 1, pr) for nm, pr in zip(self.condition_names, condition_priors)]
        if amplitude_prior is not None:
            self.blocks.append(Block("amplitude", 1, amplitude_prior))
        self.latent = Block("z", model.latent_dim, None)
        dec = model.decoder
        self._layers = list(zip(dec.weights, dec.biases, dec.activations))
        self._slope = dec.negative_slope
        if not 0.0 <= self._slope <= 1.0:
            raise ValueError(f"leaky ReLU slope must lie in [0, 1], got {self._slope}")

    def _conditions(self, x):
        c = np.array([x[nm] for nm in self.condition_names], dtype=float)
        if self.condition_map is None:
            return c, None
        return self.condition_map(c)

    def value(self, x: dict) -> np.ndarray:
        c, _ = self._conditions(x)
        return scale_field(x.get("amplitude", 1.0), decode(self.model, x["z"], c))

    def value_and_vjp(self, x: dict, likelihood_grad):
        # inline forward/backward of the decoder MLP (same arithmetic as neural.mlp_forward)
        d = self.model.latent_dim
        c, dc = self._conditions(x)
        amp = x.get("amplitude", 1.0)
        h = np.concatenate([x["z"], c])
        masks = []
        for w, b, act in self._layers:
            a = w @ h + b
            if act == "leaky_relu":
                # max/sign beat np.where on short vectors; valid for slopes in [0, 1]
                h = np.maximum(a, self._slope * a)
                masks.append(np.maximum(np.sign(a), self._slope))
            elif act == "sigmoid":
                h = special.expit(a)
                masks.append(h * (1.0 - h))
            else:
                h = a
                masks.append(None)
        f_std = h
        f = scale_field(amp, f_std)
        extra, g = likelihood_grad(f)
        gx = amp * g
        for (w, _, _), m in zip(reversed(self._layers), reversed(masks)):
            if m is not None:
                gx = gx * m
            gx = gx @ w
        grads = {"z": gx[:d]}
        gc = gx[d:] if dc is None else gx[d:] * dc
        for i, nm in enumerate(self.condition_names):
            grads[nm] = float(gc[i])
        if "amplitude" in x:
            grads["amplitude"] = float(g @ f_std)
        return f, extra, grads


# --------------------------------------------------------------------------- likelihoods


def _scatter(index, values, n, unique):
    if unique:
        g = np.zeros(n)
        g[index] = values
        return g
    return np.bincount(index, weights=values, minlength=n)


class GaussianObs:
    """y_j ~ N(f[index_j], noise^2)."""

    def __init__(self, index, y, noise_prior: HyperPrior):
        self.index = np.asarray(index, dtype=int)
        self.y = np.asarray(y, dtype=float)
        if self.index.shape != self.y.shape:
            raise ValueError("index and y must align")
        self._unique = np.unique(self.index).size == self.index.size
        self.blocks = [Block("noise", 1, noise_prior)]

    def check(self, n):
        if self.index.size and (self.index.min() < 0 or self.index.max() >= n):
            raise ValueError(f"observation index outside grid of {n} points")

    def loglik(self, f, x):
        s = x["noise"]
        r = self.y - f[self.index]
        rr = float(r @ r)
        inv = 1.0 / (s * s)
        lp = -self.y.size * math.log(s) - 0.5 * rr * inv
        g = _scatter(self.index, r * inv, f.size, self._unique)
        return lp, g, {"noise": -self.y.size / s + rr * inv / s}


class BinomialObs:
    """y_i ~ Binomial(trials_i, logistic(b0 + f_i)); binomial coefficients dropped."""

    def __init__(self, y, trials, intercept_prior: HyperPrior | None = None, index=None):
        self.y = np.asarray(y, dtype=float)
        self.trials = np.asarray(trials, dtype=float) * np.ones_like(self.y)
        self.index = np.arange(self.y.size) if index is None else np.asarray(index, dtype=int)
        self._unique = np.unique(self.index).size == self.index.size
        self.blocks = [Block("b0", 1, intercept_prior or HyperPrior.normal(0.0, 1.0))]

    def check(self, n):
        if self.index.size and (self.index.min() < 0 or self.index.max() >= n):
            raise ValueError(f"observation index outside grid of {n} points")

    def loglik(self, f, x):
        eta = x["b0"] + f[self.index]
        y, m = self.y, self.trials
        lp = float(np.sum(-y * _softplus(-eta) - (m - y) * _softplus(eta)))
        r = y - m * special.expit(eta)
        return lp, _scatter(self.index, r, f.size, self._unique), {"b0": float(r.sum())}


def negbin_logpmf(y, mu, phi):
    """NegBin with mean ``mu`` and variance mu + mu^2 / phi."""
    y = np.asarray(y, dtype=float)
    return (
        special.gammaln(y + phi) - special.gammaln(phi) - special.gammaln(y + 1)
        - phi * np.log1p(mu / phi) + y * (np.log(mu) - np.log(phi + mu))
    )


class NegBinObs:
    """y_t ~ NegBin(scale * f_t, phi) with phi = 1 / phi_inv."""

    def __init__(self, y, scale: float, phi_inv_prior: HyperPrior, index=None):
        self.y = np.asarray(y, dtype=float)
        self.scale = float(scale)
        self.index = np.arange(self.y.size) if index is None else np.asarray(index, dtype=int)
        self._unique = np.unique(self.index).size == self.index.size
        self.blocks = [Block("phi_inv", 1, phi_inv_prior)]

    def check(self, n):
        if self.index.size and (self.index.min() < 0 or self.index.max() >= n):
            raise ValueError(f"observation index outside grid of {n} points")

    def loglik(self, f, x):
        phi = 1.0 / x["phi_inv"]
        mu = self.scale * f[self.index]
        y = self.y
        lp = float(np.sum(negbin_logpmf(y, mu, phi)))
        dmu = y / mu - (y + phi) / (phi + mu)
        dphi = float(np.sum(
            special.digamma(y + phi) - special.digamma(phi) - np.log1p(mu / phi) + 1.0 - (y + phi) / (phi + mu)
        ))
        g = _scatter(self.index, self.scale * dmu, f.size, self._unique)
        return lp, g, {"phi_inv": -dphi * phi * phi}


# --------------------------------------------------------------------------- posterior


class Posterior:
    """Joint density of field hyperparameters, likelihood parameters and latent z.

    The unconstrained vector is laid out as field blocks, likelihood blocks, then z.
    Scalar hyperparameters appear as floats in the constrained dict; z as an array.
    """

    def __init__(self, kind: str, field, likelihood, meta=None):
        if kind not in KINDS:
            raise ValueError(f"unknown model kind {kind!r}")
        self.kind = kind
        self.field = field
        self.likelihood = likelihood
        likelihood.check(field.n)
        self.meta = dict(meta or {})
        self.blocks = list(field.blocks) + list(likelihood.blocks) + [field.latent]
        if any(b.size != 1 for b in self.blocks if b.prior is not None):
            raise ValueError("hyperparameter blocks must be scalar")
        self.slices = {}
        start = 0
        for b in self.blocks:
            self.slices[b.name] = slice(start, start + b.size)
            start += b.size
        self.dim = start
        self.names = []
        for b in self.blocks:
            self.names += [b.name] if b.prior is not None else [f"{b.name}[{i}]" for i in range(b.size)]
        self._hyper = [(b.name, self.slices[b.name].start, b.prior) for b in self.blocks if b.prior is not None]
        self._latent = self.slices[field.latent.name]

    @property
    def hyper_names(self) -> list[str]:
        return [name for name, _, _ in self._hyper]

    def constrain(self, u) -> dict:
        u = np.asarray(u, dtype=float)
        out = {name: transform1(prior, float(u[i]))[0] for name, i, prior in self._hyper}
        out[self.field.latent.name] = u[self._latent].copy()
        return out

    def constrain_vector(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        v = u.copy()
        for name, i, prior in self._hyper:
            v[i] = transform1(prior, float(u[i]))[0]
        return v

    def unconstrain(self, values: dict) -> np.ndarray:
        u = np.zeros(self.dim)
        for b in self.blocks:
            v = np.atleast_1d(np.asarray(values[b.name], dtype=float))
            u[self.slices[b.name]] = v if b.prior is None else inverse_transform(b.prior, v)
        return u

    def log_density(self, u):
        """(log density, gradient) at unconstrained ``u``; may be non-finite or raise ArithmeticError."""
        u = np.asarray(u, dtype=float)
        grad = np.empty(self.dim)
        z = u[self._latent]
        x = {self.field.latent.name: z}
        dx = {}
        lp = -0.5 * float(z @ z)
        grad[self._latent] = -z
        for name, i, prior in self._hyper:
            xb, lpb, gb, dxb = transform1(prior, float(u[i]))
            x[name] = xb
            dx[name] = dxb
            lp += lpb
            grad[i] = gb

        def lik_grad(f):
            llp, g, lgrads = self.likelihood.loglik(f, x)
            return (llp, lgrads), g

        _, (llp, lgrads), fgrads = self.field.value_and_vjp(x, lik_grad)
        lp += llp
        grad[self._latent] += fgrads.pop(self.field.latent.name)
        for grads in (fgrads, lgrads):
            for name, g in grads.items():
                grad[self.slices[name].start] += g * dx[name]
        return lp, grad

    def derived(self, u) -> dict:
        x = self.constrain(u)
        f = self.field.value(x)
        out = {"f": f}
        if isinstance(self.likelihood, BinomialObs):
            out["prevalence"] = special.expit(x["b0"] + f)
        if isinstance(self.likelihood, NegBinObs):
            out["mean_count"] = self.likelihood.scale * f
        if self.meta.get("log_integral"):
            out["log_integral"] = float(log_integral(f))
        return out

    def initial_point(self, rng, radius: float = 2.0) -> np.ndarray:
        return rng.uniform(-radius, radius, size=self.dim)


def log_posterior(model: Posterior, u):
    """Checked log density: raises :class:`NonFiniteDensityError` with a parameter snapshot."""
    try:
        with np.errstate(all="ignore"):
            lp, grad = model.log_density(u)
    except ArithmeticError:
        lp, grad = -np.inf, np.full(model.dim, np.nan)
    if not (np.isfinite(lp) and np.all(np.isfinite(grad))):
        try:
            values = model.constrain_vector(u)
        except ArithmeticError:
            values = np.asarray(u, dtype=float)
        snapshot = dict(zip(model.names, values.tolist()))
        raise NonFiniteDensityError(f"non-finite log density {lp} for {model.kind}", snapshot)
    return lp, grad


# --------------------------------------------------------------------------- model zoo


def gp_exact_model(kernel, grid, index, y, lengthscale_prior, noise_prior, amplitude_prior=None, jitter=DEFAULT_JITTER):
    field = ExactGpField(kernel, grid, lengthscale_prior, amplitude_prior, jitter)
    return Posterior("gp_exact", field, GaussianObs(index, y, noise_prior))


def prior_vae_model(model: CvaeModel, index, y, noise_prior, amplitude_prior=None):
    if model.condition_dim != 0:
        raise ValueError("PriorVAE models are unconditional (condition_dim 0)")
    return Posterior("prior_vae", DecoderField(model, (), [], amplitude_prior), GaussianObs(index, y, noise_prior))


def prior_cvae_model(model: CvaeModel, index, y, condition_priors, noise_prior, condition_names=None,
                     amplitude_prior=None, condition_map=None):
    field = DecoderField(model, condition_priors, condition_names, amplitude_prior, condition_map)
    return Posterior("prior_cvae", field, GaussianObs(index, y, noise_prior))


SIR_PRIORS = {
    "beta": HyperPrior.trunc_normal_pos(2.0, 1.0),
    "gamma": HyperPrior.trunc_normal_pos(0.4, 0.5),
    "phi_inv": HyperPrior.exponential(5.0),
}


def sir_cvae_model(model: CvaeModel, y, N: float, priors=None):
    priors = {**SIR_PRIORS, **(priors or {})}
    field = DecoderField(model, [priors["beta"], priors["gamma"]], ["beta", "gamma"])
    return Posterior("sir_cvae", field, NegBinObs(y, N, priors["phi_inv"]))


def binom_spatial_model(field, y, trials, intercept_prior=None):
    kind = "binom_spatial_gp" if isinstance(field, ExactGpField) else "binom_spatial_cvae"
    return Posterior(kind, field, BinomialObs(y, trials, intercept_prior))


def binary_condition_relaxation(model: Posterior, mixture: HyperPrior, a: float = 1e-4) -> Posterior:
    """Swap a two-point lengthscale prior for a Beta(a, a) indicator c in (0, 1).

    The decoder then sees lengthscale(c) = (1 - c) * first + c * second.
    """
    if mixture.kind != "bernoulli_mixture":
        raise ValueError(f"expected a bernoulli_mixture prior, got {mixture.kind}")
    first, second, _ = mixture.params
    if first == second:
        raise ValueError("mixture components coincide; nothing binary to relax")
    field = model.field
    if not isinstance(field, DecoderField) or field.model.condition_dim != 1:
        raise ValueError("relaxation needs a decoder field with one condition")
    amp = next((b.prior for b in field.blocks if b.name == "amplitude"), None)

    def to_lengthscale(c):
        return (1.0 - c) * first + c * second, np.full_like(c, second - first)

    new_field = DecoderField(field.model, [HyperPrior.beta(a, a)], ["c"], amp, condition_map=to_lengthscale)
    meta = {**model.meta, "relaxed_mixture": (first, second)}
    return Posterior(model.kind, new_field, model.likelihood, meta)


class CallableTarget:
    """Wrap a bare ``logp_and_grad(u)`` so it can be handed to the sampler."""

    kind = "callable"

    def __init__(self, logp_and_grad, dim: int, names=None):
        self._fn = logp_and_grad
        self.dim = int(dim)
        self.names = list(names) if names is not None else [f"x[{i}]" for i in range(dim)]

    def log_density(self, u):
        return self._fn(np.asarray(u, dtype=float))

    def constrain_vector(self, u):
        return np.asarray(u, dtype=float).copy()

    def derived(self, u):
        return {}

    def initial_point(self, rng, radius: float = 2.0):
        return rng.uniform(-radius, radius, size=self.dim)
