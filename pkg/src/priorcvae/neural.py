"""A small multilayer perceptron with exact reverse-mode gradients and Adam.

Gradients are available with respect to parameters *and* inputs: samplers
differentiate trained decoders through their (latent, condition) inputs.
Everything runs in float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import special

from ._rng import make_rng

ACTIVATIONS = ("leaky_relu", "sigmoid", "identity")
FORMAT_VERSION = 1


class ModelFileError(ValueError):
    pass


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]
    negative_slope: float = 0.01

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations) >= 1):
            raise ValueError("weights, biases and activations must have equal nonzero length")
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        for i, (w, b, a) in enumerate(zip(self.weights, self.biases, self.activations)):
            if a not in ACTIVATIONS:
                raise ValueError(f"layer {i}: unknown activation {a!r}")
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(
                    f"layer {i} expects {w.shape[1]} inputs but layer {i - 1} emits "
                    f"{self.weights[i - 1].shape[0]}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite parameters")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[0]

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order (W0, b0, W1, b1, ...), by reference."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
            self.negative_slope,
        )

    def to_dict(self) -> dict:
        return {
            "layer_sizes": self.layer_sizes,
            "activations": list(self.activations),
            "negative_slope": self.negative_slope,
            "weights": [{"W": w.tolist(), "b": b.tolist()} for w, b in zip(self.weights, self.biases)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpParams":
        params = cls(
            [np.array(layer["W"], dtype=float) for layer in d["weights"]],
            [np.array(layer["b"], dtype=float) for layer in d["weights"]],
            list(d["activations"]),
            float(d.get("negative_slope", 0.01)),
        )
        if params.layer_sizes != list(d["layer_sizes"]):
            raise ModelFileError(
                f"layer_sizes {d['layer_sizes']} disagree with weights {params.layer_sizes}"
            )
        return params


def _activate(name, a, slope):
    if name == "leaky_relu":
        return np.where(a > 0, a, slope * a)
    if name == "sigmoid":
        return special.expit(a)
    return a


def _activate_grad(name, a, h, slope):
    if name == "leaky_relu":
        return np.where(a > 0, 1.0, slope)
    if name == "sigmoid":
        return h * (1.0 - h)
    return np.ones_like(a)


def _check_input(params: MlpParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.n_in:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {params.n_in}")
    return x


def _forward_cache(params: MlpParams, x):
    hs, pre = [x], []
    h = x
    for w, b, act in zip(params.weights, params.biases, params.activations):
        a = h @ w.T + b
        h = _activate(act, a, params.negative_slope)
        pre.append(a)
        hs.append(h)
    return hs, pre


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    """Apply the network to ``x`` of shape (in,) or (batch, in)."""
    x = _check_input(params, x)
    h = x
    for w, b, act in zip(params.weights, params.biases, params.activations):
        h = _activate(act, h @ w.T + b, params.negative_slope)
    return h


def mlp_backward(params: MlpParams, x, cotangent):
    """Reverse-mode gradients of <mlp_forward(x), cotangent>.

    Returns ``(grads, input_grad)`` where ``grads`` is a list aligned with
    :meth:`MlpParams.arrays` (summed over any batch dimension) and ``input_grad``
    has the shape of ``x``.
    """
    x = _check_input(params, x)
    cot = np.asarray(cotangent, dtype=float)
    if cot.shape[-1] != params.n_out or cot.shape[:-1] != x.shape[:-1]:
        raise ValueError(f"cotangent shape {cot.shape} does not match output for input {x.shape}")
    return _backward(params, *_forward_cache(params, x), cot)


def _backward(params, hs, pre, cot):
    grads = [None] * (2 * len(params.weights))
    g = cot
    for i in range(len(params.weights) - 1, -1, -1):
        g = g * _activate_grad(params.activations[i], pre[i], hs[i + 1], params.negative_slope)
        h_in = hs[i]
        if g.ndim == 1:
            grads[2 * i] = np.outer(g, h_in)
            grads[2 * i + 1] = g.copy()
        else:
            g2 = g.reshape(-1, g.shape[-1])
            grads[2 * i] = g2.T @ h_in.reshape(-1, h_in.shape[-1])
            grads[2 * i + 1] = g2.sum(axis=0)
        g = g @ params.weights[i]
    return grads, g


def mlp_value_and_backward(params: MlpParams, x, cotangent_fn):
    """Forward pass, then backward with a cotangent computed from the output.

    ``cotangent_fn(output) -> (extra, cotangent)``; returns (output, extra, grads, input_grad).
    Saves a second forward pass when the loss needs the output first.
    """
    x = _check_input(params, x)
    hs, pre = _forward_cache(params, x)
    extra, cot = cotangent_fn(hs[-1])
    grads, gx = _backward(params, hs, pre, cot)
    return hs[-1], extra, grads, gx


def mlp_value_and_input_grad(params: MlpParams, x, cotangent_fn):
    """Like :func:`mlp_value_and_backward` but only the input gradient is formed."""
    hs, pre = _forward_cache(params, x)
    extra, g = cotangent_fn(hs[-1])
    for i in range(len(params.weights) - 1, -1, -1):
        g = g * _activate_grad(params.activations[i], pre[i], hs[i + 1], params.negative_slope)
        g = g @ params.weights[i]
    return hs[-1], extra, g


def init_params(layer_sizes, activations, seed: int, negative_slope: float = 0.01) -> MlpParams:
    """He-style fan-in uniform weights (variance 2/fan_in) and zero biases."""
    layer_sizes = [int(s) for s in layer_sizes]
    if len(layer_sizes) < 2:
        raise ValueError("need at least an input and an output size")
    if isinstance(activations, str):
        activations = [activations] * (len(layer_sizes) - 1)
    activations = list(activations)
    if len(activations) != len(layer_sizes) - 1:
        raise ValueError(f"{len(layer_sizes) - 1} layers but {len(activations)} activations")
    rng = make_rng(seed, 0)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, activations, negative_slope)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, arrays, **kwargs) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], **kwargs)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update, applied in place.

    ``params`` is an :class:`MlpParams` or a list of arrays; ``grads`` aligns with
    its arrays. Returns ``(params, state)``.
    """
    arrays = params.arrays() if isinstance(params, MlpParams) else params
    if len(arrays) != len(grads) or len(arrays) != len(state.m):
        raise ValueError("params, grads and optimizer state are not aligned")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(arrays, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def _load_json(path) -> dict:
    path = Path(path)
    text = path.read_text()
    if not text.strip():
        raise ModelFileError(f"{path}: empty model file")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(
            f"{path}: malformed model file at line {exc.lineno}, column {exc.colno} "
            f"(char {exc.pos}): {exc.msg}"
        ) from None


def save_params(params: MlpParams, path) -> None:
    doc = {"format_version": FORMAT_VERSION, **params.to_dict()}
    Path(path).write_text(json.dumps(doc))


def load_params(path) -> MlpParams:
    doc = _load_json(path)
    try:
        return MlpParams.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFileError):
            raise
        raise ModelFileError(f"{path}: invalid network description: {exc}") from None
