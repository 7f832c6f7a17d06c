"""Kernels, covariance assembly, Cholesky sampling and hyperpriors over fixed grids."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special
from scipy.linalg import lapack

from ._rng import make_rng
from .data import PriorDataset

FAMILIES = ("rbf", "matern12", "matern52", "lin_rbf")
DEFAULT_JITTER = 1e-6
_SHARD = 1000


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    def __init__(self, pivot: int):
        self.pivot = pivot
        super().__init__(f"matrix is not positive definite: Cholesky failed at pivot {pivot}")


@dataclass(frozen=True)
class Grid:
    """Fixed spatial structure: ``points`` has shape (n, m)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("grid needs at least one point given as an (n, m) array")
        object.__setattr__(self, "points", pts)

    @classmethod
    def regular(cls, n: int, lo: float = 0.0, hi: float = 1.0) -> "Grid":
        return cls(np.linspace(lo, hi, n))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class KernelSpec:
    family: str
    lengthscale: float
    variance: float = 1.0
    c_lin: float | None = None

    def __post_init__(self):
        fam = self.family.lower().replace("-", "_")
        aliases = {"matern_12": "matern12", "matern_52": "matern52", "lintimesrbf": "lin_rbf"}
        fam = aliases.get(fam, fam)
        if fam not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "family", fam)
        if not self.lengthscale > 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")
        if fam == "lin_rbf":
            if self.c_lin is None:
                raise ValueError("lin_rbf kernel requires c_lin")
            if self.variance != 1.0:
                raise ValueError("lin_rbf has no free variance; the linear factor sets the scale")
        elif self.c_lin is not None:
            raise ValueError(f"c_lin is only meaningful for lin_rbf, not {fam}")

    def with_lengthscale(self, lengthscale: float) -> "KernelSpec":
        return KernelSpec(self.family, lengthscale, self.variance, self.c_lin)


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return x.reshape(1, 1)
    if x.ndim == 1:
        return x[:, None]
    return x


def _sqdist(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def pair_terms(spec: KernelSpec, X, Y=None):
    """Squared distances and (for lin_rbf) the linear factor between point sets.

    These do not depend on the lengthscale, so callers that re-evaluate a kernel at
    many lengthscales over a fixed grid can compute them once.
    """
    X = _as_points(X)
    Y = X if Y is None else _as_points(Y)
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    lin = (X - spec.c_lin) @ (Y - spec.c_lin).T if spec.family == "lin_rbf" else None
    return _sqdist(X, Y), lin


def kernel_from_terms(spec: KernelSpec, r2, lin=None, with_grad: bool = False):
    """Kernel matrix from precomputed pair terms; optionally also d/d(lengthscale)."""
    ell = spec.lengthscale
    if spec.family in ("rbf", "lin_rbf"):
        e = np.exp(-0.5 * r2 / ell**2)
        K = spec.variance * e if lin is None else lin * e
        return (K, K * (r2 / ell**3)) if with_grad else K
    if spec.family == "matern12":
        r = np.sqrt(r2)
        K = spec.variance * np.exp(-r / ell)
        return (K, K * (r / ell**2)) if with_grad else K
    a = np.sqrt(5.0 * r2) / ell
    e = spec.variance * np.exp(-a)
    K = (1.0 + a + a * a / 3.0) * e
    return (K, a * a * (1.0 + a) * e / (3.0 * ell)) if with_grad else K


def kernel_matrix(spec: KernelSpec, X, Y=None) -> np.ndarray:
    """Cross-covariance between point sets ``X`` (n, m) and ``Y`` (p, m)."""
    return kernel_from_terms(spec, *pair_terms(spec, X, Y))


def kernel_matrix_dlengthscale(spec: KernelSpec, X, Y=None) -> np.ndarray:
    """Elementwise derivative of :func:`kernel_matrix` with respect to the lengthscale."""
    return kernel_from_terms(spec, *pair_terms(spec, X, Y), with_grad=True)[1]


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError(f"points differ in dimensionality: {x.shape} vs {y.shape}")
    return float(kernel_matrix(spec, x[None, :], y[None, :])[0, 0])


def build_covariance(spec: KernelSpec, grid: Grid, jitter: float = DEFAULT_JITTER) -> np.ndarray:
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    K = kernel_matrix(spec, grid.points)
    K = 0.5 * (K + K.T)
    K[np.diag_indices_from(K)] += jitter
    return K


def cholesky_lower(K) -> np.ndarray:
    """Lower Cholesky factor; raises :class:`NotPositiveDefiniteError` naming the pivot."""
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {K.shape}")
    L, info = lapack.dpotrf(K, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(info - 1)
    if info < 0:
        raise ValueError(f"invalid argument {-info} to dpotrf")
    return L


def sample_gp(
    spec: KernelSpec,
    grid: Grid,
    count: int,
    rng_seed: int,
    jitter: float = DEFAULT_JITTER,
) -> PriorDataset:
    """Draw ``count`` realisations f = L z at a fixed kernel spec.

    The condition column holds the lengthscale so the result can be stacked with
    other conditional datasets.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    L = cholesky_lower(build_covariance(spec, grid, jitter))
    rows = []
    for shard, start in enumerate(range(0, count, _SHARD)):
        m = min(_SHARD, count - start)
        z = make_rng(rng_seed, shard).standard_normal((m, grid.n))
        rows.append(z @ L.T)
    return PriorDataset(np.full((count, 1), spec.lengthscale), np.concatenate(rows))


def sample_gp_dataset(
    base: KernelSpec,
    lengthscale_prior: "HyperPrior",
    grid: Grid,
    count: int,
    seed: int,
    jitter: float = DEFAULT_JITTER,
) -> PriorDataset:
    """Hierarchical draws: lengthscale from the hyperprior, then f | lengthscale.

    Each row gets its own lengthscale; the condition column is that lengthscale.
    Work is sharded with sub-seeds derived from (seed, shard), so row order is fixed.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    ells = lengthscale_prior.sample(count, seed)
    rows = []
    for shard, start in enumerate(range(0, count, _SHARD)):
        chunk = ells[start : start + _SHARD]
        Ks = np.stack([build_covariance(base.with_lengthscale(l), grid, jitter) for l in chunk])
        Ls = np.linalg.cholesky(Ks)
        z = make_rng(seed, 1, shard).standard_normal((len(chunk), grid.n))
        rows.append(np.einsum("bij,bj->bi", Ls, z))
    return PriorDataset(ells[:, None], np.concatenate(rows))


def empirical_covariance(dataset) -> np.ndarray:
    draws = dataset.draws if isinstance(dataset, PriorDataset) else np.asarray(dataset, float)
    if draws.shape[0] < 2:
        raise ValueError("need at least 2 draws for a sample covariance")
    return np.cov(draws, rowvar=False, ddof=1).reshape(draws.shape[1], draws.shape[1])


def frobenius_distance(A, B) -> float:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    return float(np.sqrt(np.sum((A - B) ** 2)))


# --------------------------------------------------------------------------- hyperpriors

_PRIOR_PARAMS = {
    "uniform": ("low", "high"),
    "gamma": ("shape", "rate"),
    "bernoulli_mixture": ("first", "second", "p"),
    "half_normal": ("scale",),
    "trunc_normal_pos": ("loc", "scale"),
    "exponential": ("rate",),
    "normal": ("loc", "scale"),
    "beta": ("a", "b"),
}


@dataclass(frozen=True)
class HyperPrior:
    """A univariate prior used both to generate training conditions and inside posteriors.

    ``support`` tells the sampler which unconstraining transform to use:
    ``"real"``, ``"positive"``, ``"interval"`` (uniform) or ``"unit"`` (beta).
    Densities drop parameter-independent constants where noted.
    """

    kind: str
    params: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in _PRIOR_PARAMS:
            raise ValueError(f"unknown prior kind {self.kind!r}")
        names = _PRIOR_PARAMS[self.kind]
        if len(self.params) != len(names):
            raise ValueError(f"{self.kind} takes parameters {names}, got {self.params}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        p = self.params
        if self.kind == "uniform" and not p[0] < p[1]:
            raise ValueError(f"uniform needs low < high, got {p}")
        if self.kind == "bernoulli_mixture" and not 0.0 <= p[2] <= 1.0:
            raise ValueError(f"mixture probability must lie in [0, 1], got {p[2]}")
        positive = {
            "gamma": p[:2],
            "half_normal": p[:1],
            "trunc_normal_pos": p[1:2],
            "exponential": p[:1],
            "normal": p[1:2],
            "beta": p[:2],
        }.get(self.kind, ())
        if any(v <= 0 for v in positive):
            raise ValueError(f"{self.kind} scale/rate parameters must be positive, got {p}")

    # constructors read better at call sites than raw tuples
    @classmethod
    def uniform(cls, low, high):
        return cls("uniform", (low, high))

    @classmethod
    def gamma(cls, shape, rate):
        return cls("gamma", (shape, rate))

    @classmethod
    def bernoulli_mixture(cls, first, second, p=0.5):
        return cls("bernoulli_mixture", (first, second, p))

    @classmethod
    def half_normal(cls, scale):
        return cls("half_normal", (scale,))

    @classmethod
    def trunc_normal_pos(cls, loc, scale):
        return cls("trunc_normal_pos", (loc, scale))

    @classmethod
    def exponential(cls, rate):
        return cls("exponential", (rate,))

    @classmethod
    def normal(cls, loc, scale):
        return cls("normal", (loc, scale))

    @classmethod
    def beta(cls, a, b):
        return cls("beta", (a, b))

    @property
    def support(self) -> str:
        if self.kind in ("normal",):
            return "real"
        if self.kind == "uniform":
            return "interval"
        if self.kind == "beta":
            return "unit"
        if self.kind == "bernoulli_mixture":
            return "discrete"
        return "positive"

    @property
    def bounds(self) -> tuple[float, float]:
        if self.kind == "uniform":
            return self.params
        if self.kind == "beta":
            return (0.0, 1.0)
        if self.support == "positive":
            return (0.0, np.inf)
        if self.kind == "bernoulli_mixture":
            return (min(self.params[:2]), max(self.params[:2]))
        return (-np.inf, np.inf)

    def sample(self, count: int, seed: int) -> np.ndarray:
        rng = make_rng(seed, 0)
        p = self.params
        if self.kind == "uniform":
            return rng.uniform(p[0], p[1], size=count)
        if self.kind == "gamma":
            return rng.gamma(p[0], 1.0 / p[1], size=count)
        if self.kind == "bernoulli_mixture":
            c = rng.random(count) < p[2]
            return np.where(c, p[1], p[0])
        if self.kind == "half_normal":
            return np.abs(rng.normal(0.0, p[0], size=count))
        if self.kind == "trunc_normal_pos":
            out = np.empty(0)
            while out.size < count:
                x = rng.normal(p[0], p[1], size=2 * count + 16)
                out = np.concatenate([out, x[x > 0]])
            return out[:count]
        if self.kind == "exponential":
            return rng.exponential(1.0 / p[0], size=count)
        if self.kind == "normal":
            return rng.normal(p[0], p[1], size=count)
        return rng.beta(p[0], p[1], size=count)

    def logpdf(self, x):
        """Log density up to parameter-free constants, with its derivative in x."""
        p = self.params
        x = np.asarray(x, dtype=float)
        if self.kind == "uniform":
            return np.full_like(x, -np.log(p[1] - p[0])), np.zeros_like(x)
        if self.kind == "gamma":
            a, b = p
            lp = a * np.log(b) - special.gammaln(a) + (a - 1) * np.log(x) - b * x
            return lp, (a - 1) / x - b
        if self.kind == "half_normal":
            s = p[0]
            return np.log(np.sqrt(2 / np.pi) / s) - 0.5 * (x / s) ** 2, -x / s**2
        if self.kind in ("trunc_normal_pos", "normal"):
            m, s = p
            return -np.log(s) - 0.5 * np.log(2 * np.pi) - 0.5 * ((x - m) / s) ** 2, -(x - m) / s**2
        if self.kind == "exponential":
            r = p[0]
            return np.log(r) - r * x, np.full_like(x, -r)
        if self.kind == "beta":
            a, b = p
            lp = (a - 1) * np.log(x) + (b - 1) * np.log1p(-x) - special.betaln(a, b)
            return lp, (a - 1) / x - (b - 1) / (1 - x)
        raise ValueError("bernoulli_mixture has no density; relax it to a Beta prior first")


def sample_hyperprior(prior: HyperPrior, count: int, rng_seed: int) -> np.ndarray:
    return prior.sample(count, rng_seed)
