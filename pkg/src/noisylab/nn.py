"""A small ReLU multilayer perceptron with exact backpropagation and Adam.

All parameters live in one contiguous float64 vector; per-layer weights and
biases are reshaped views into it, so writing through either view is seen
by the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .special import softmax

CKPT_MAGIC = "NOISYLAB-CKPT"
CKPT_VERSION = "v1"


class NonFiniteGradientError(FloatingPointError):
    pass


class MlpModel:
    """Feed-forward classifier ``affine -> ReLU -> ... -> affine``."""

    def __init__(self, layer_dims, theta=None):
        layer_dims = [int(d) for d in layer_dims]
        if len(layer_dims) < 2 or min(layer_dims) < 1:
            raise ValueError(f"layer_dims must hold >= 2 positive sizes, got {layer_dims}")
        self.layer_dims = layer_dims
        self._slices = []
        offset = 0
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            w = (offset, offset + fan_in * fan_out, (fan_in, fan_out))
            offset = w[1]
            b = (offset, offset + fan_out, (fan_out,))
            offset = b[1]
            self._slices.append((w, b))
        self.num_params = offset
        if theta is None:
            theta = np.zeros(offset)
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (offset,):
            raise ValueError(f"expected {offset} parameters, got shape {theta.shape}")
        self.theta = theta.copy()

    @classmethod
    def initialize(cls, layer_dims, seed):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
        model = cls(layer_dims)
        rng = np.random.default_rng(seed)
        for weight, bias in model.layers:
            bound = 1.0 / math.sqrt(weight.shape[0])
            weight[...] = rng.uniform(-bound, bound, size=weight.shape)
            bias[...] = rng.uniform(-bound, bound, size=bias.shape)
        return model

    @property
    def layers(self):
        out = []
        for (w0, w1, wshape), (b0, b1, bshape) in self._slices:
            out.append((self.theta[w0:w1].reshape(wshape), self.theta[b0:b1].reshape(bshape)))
        return out

    @property
    def num_classes(self):
        return self.layer_dims[-1]

    def copy(self):
        return MlpModel(self.layer_dims, self.theta)

    def predict(self, features, batch_size=2048):
        probs = predict_proba(self, features, batch_size)
        return np.argmax(probs, axis=1)


@dataclass
class ForwardRecord:
    logits: np.ndarray
    probs: np.ndarray
    inputs: np.ndarray
    # post-activation hidden outputs, one per hidden layer
    hidden: list = field(default_factory=list)

    def subset(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return ForwardRecord(self.logits[rows], self.probs[rows], self.inputs[rows],
                             [h[rows] for h in self.hidden])


def forward(model, batch):
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.layer_dims[0]:
        raise ValueError(f"batch shape {x.shape} does not match input width {model.layer_dims[0]}")
    hidden = []
    a = x
    layers = model.layers
    for weight, bias in layers[:-1]:
        a = np.maximum(a @ weight + bias, 0.0)
        hidden.append(a)
    weight, bias = layers[-1]
    logits = a @ weight + bias
    return ForwardRecord(logits, softmax(logits), x, hidden)


def predict_proba(model, features, batch_size=2048):
    features = np.asarray(features, dtype=np.float64)
    parts = [forward(model, features[i:i + batch_size]).probs
             for i in range(0, features.shape[0], batch_size)]
    return np.concatenate(parts, axis=0)


def backward(model, record, dloss_dlogits):
    """Gradient over the flat parameter vector for the supplied logit gradient."""
    delta = np.asarray(dloss_dlogits, dtype=np.float64)
    if delta.shape != record.logits.shape:
        raise ValueError(f"logit gradient shape {delta.shape} != logits {record.logits.shape}")
    grad = np.zeros(model.num_params)
    activations = [record.inputs] + record.hidden
    layers = model.layers
    for k in range(len(layers) - 1, -1, -1):
        (w0, w1, wshape), (b0, b1, _) = model._slices[k]
        a_in = activations[k]
        grad[w0:w1] = (a_in.T @ delta).ravel()
        grad[b0:b1] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ layers[k][0].T) * (activations[k] > 0)
    return grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_model(cls, model, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(np.zeros(model.num_params), np.zeros(model.num_params), 0, lr, beta1, beta2, eps)


def adam_step(model, state, gradient):
    g = np.asarray(gradient, dtype=np.float64)
    if g.shape != (model.num_params,):
        raise ValueError(f"gradient length {g.shape} != parameter count {model.num_params}")
    if not np.all(np.isfinite(g)):
        bad = np.flatnonzero(~np.isfinite(g))
        raise NonFiniteGradientError(
            f"{bad.size} non-finite gradient entries (first at index {bad[0]}); step refused")
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    model.theta -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return model, state


def param_distance(model_a, model_b):
    if model_a.layer_dims != model_b.layer_dims:
        raise ValueError(f"layer_dims differ: {model_a.layer_dims} vs {model_b.layer_dims}")
    return float(np.linalg.norm(model_a.theta - model_b.theta))


def save_checkpoint(model, path):
    header = f"{CKPT_MAGIC} {CKPT_VERSION} {','.join(map(str, model.layer_dims))} {model.num_params}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(model.theta.astype("<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        payload = fh.read()
    if len(header) != 4 or header[0] != CKPT_MAGIC or header[1] != CKPT_VERSION:
        raise ValueError(f"{path}: not a {CKPT_MAGIC} {CKPT_VERSION} file")
    dims = [int(d) for d in header[2].split(",")]
    count = int(header[3])
    if len(payload) != 8 * count:
        raise ValueError(f"{path}: expected {count} parameters, found {len(payload) // 8}")
    model = MlpModel(dims, np.frombuffer(payload, dtype="<f8"))
    if model.num_params != count:
        raise ValueError(f"{path}: header count {count} disagrees with layer dims {dims}")
    return model
