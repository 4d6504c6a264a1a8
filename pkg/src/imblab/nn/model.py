"""Rectifier MLP with hand-written reverse-mode gradients.

Weights are stored as (fan_in, fan_out) matrices so a batch ``x`` of shape
(n, d) maps through ``x @ W + b``. The last layer is the classifier (or the
scalar regression head); everything before it is the encoder whose output is
the penultimate feature vector.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core import make_rng

CHECKPOINT_FORMAT = "imblab-mlp"
CHECKPOINT_VERSION = 1


@dataclass
class MLP:
    weights: list
    biases: list
    head: str = "linear"  # linear | cdt | regression
    temperatures: Optional[np.ndarray] = None
    # second classifier for the bilateral-branch (BBN) re-balancing branch
    branch_weight: Optional[np.ndarray] = None
    branch_bias: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValueError(f"layer {i}: weight {W.shape} incompatible with bias {b.shape}")
            if i and self.weights[i - 1].shape[1] != W.shape[0]:
                raise ValueError(f"layer {i} expects {W.shape[0]} inputs, previous layer gives "
                                 f"{self.weights[i - 1].shape[1]}")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def has_branch(self) -> bool:
        return self.branch_weight is not None

    def params(self) -> list:
        """Flat parameter list [W0, b0, W1, b1, ..., (Wr, br)] (live references)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend([W, b])
        if self.has_branch:
            out.extend([self.branch_weight, self.branch_bias])
        return out

    def copy(self) -> "MLP":
        return MLP(
            weights=[W.copy() for W in self.weights],
            biases=[b.copy() for b in self.biases],
            head=self.head,
            temperatures=None if self.temperatures is None else self.temperatures.copy(),
            branch_weight=None if self.branch_weight is None else self.branch_weight.copy(),
            branch_bias=None if self.branch_bias is None else self.branch_bias.copy(),
            meta=dict(self.meta),
        )

    def encoder_params(self) -> list:
        return self.params()[: 2 * (self.n_layers - 1)]


def _init_layer(rng, fan_in, fan_out):
    bound = 1.0 / math.sqrt(fan_in)
    W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-bound, bound, size=fan_out)
    return W, b


def init_mlp(in_dim: int, hidden, out_dim: int, seed: int, head: str = "linear",
             branch: bool = False) -> MLP:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization from ``seed``."""
    rng = make_rng(seed, "init")
    dims = [in_dim, *hidden, out_dim]
    weights, biases = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        W, bias = _init_layer(rng, a, b)
        weights.append(W)
        biases.append(bias)
    model = MLP(weights, biases, head=head)
    if branch:
        model.branch_weight, model.branch_bias = _init_layer(rng, dims[-2], out_dim)
    return model


def reinit_classifier(model: MLP, seed: int) -> None:
    rng = make_rng(seed, "reinit")
    W, b = _init_layer(rng, *model.weights[-1].shape)
    model.weights[-1] = W
    model.biases[-1] = b


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def encode(model: MLP, x):
    """Run every layer except the last. Returns (features, activations).

    ``activations[i]`` is the input to layer ``i``; the final entry is the
    penultimate feature matrix.
    """
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if h.shape[1] != model.in_dim:
        raise ValueError(f"expected {model.in_dim} input features, got {h.shape[1]}")
    acts = [h]
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        h = np.maximum(h @ W + b, 0.0)
        acts.append(h)
    return h, acts


def classify(model: MLP, features, branch: bool = False):
    if branch:
        return features @ model.branch_weight + model.branch_bias
    return features @ model.weights[-1] + model.biases[-1]


def mlp_forward(model: MLP, features):
    """Raw outputs plus per-layer activations (kept for backward and mixing).

    Regression heads return a vector of scalars. BBN models return the
    equal-weight average of the two classifiers.
    """
    feats, acts = encode(model, features)
    out = classify(model, feats)
    if model.has_branch:
        out = 0.5 * out + 0.5 * classify(model, feats, branch=True)
    if model.head == "regression":
        out = out[:, 0]
    return out, acts


def predict_logits(model: MLP, x) -> np.ndarray:
    return mlp_forward(model, x)[0]


def encoder_backward(model: MLP, acts, grad_features) -> tuple:
    """Gradients of the encoder layers given d(loss)/d(penultimate features).

    Returns (list of (dW, db) per encoder layer, grad wrt the network input).
    """
    g = np.asarray(grad_features, dtype=np.float64)
    if g.shape != acts[-1].shape:
        raise ValueError(f"feature gradient shape {g.shape} does not match {acts[-1].shape}")
    grads = [None] * (model.n_layers - 1)
    for i in range(model.n_layers - 2, -1, -1):
        g = g * (acts[i + 1] > 0)
        grads[i] = (acts[i].T @ g, g.sum(axis=0))
        g = g @ model.weights[i].T
    return grads, g


def mlp_backward(model: MLP, activations, grad_logits) -> list:
    """Exact parameter gradients for the plain (single-classifier) forward pass.

    Returns a list aligned with ``model.params()`` minus any branch head.
    """
    g = np.asarray(grad_logits, dtype=np.float64)
    if model.head == "regression" and g.ndim == 1:
        g = g[:, None]
    g = np.atleast_2d(g)
    feats = activations[-1]
    if g.shape != (feats.shape[0], model.out_dim):
        raise ValueError(f"upstream gradient shape {g.shape} does not match "
                         f"({feats.shape[0]}, {model.out_dim})")
    dW = feats.T @ g
    db = g.sum(axis=0)
    enc, _ = encoder_backward(model, activations, g @ model.weights[-1].T)
    out = []
    for pair in enc:
        out.extend(pair)
    return out + [dW, db]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _tensor(name, arr):
    arr = np.asarray(arr, dtype=np.float64)
    return {"name": name, "shape": list(arr.shape), "data": [float(v) for v in arr.ravel()]}


def _untensor(entry):
    return np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])


def model_to_dict(model: MLP) -> dict:
    tensors = []
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        tensors.append(_tensor(f"layer{i}.weight", W))
        tensors.append(_tensor(f"layer{i}.bias", b))
    if model.temperatures is not None:
        tensors.append(_tensor("temperatures", model.temperatures))
    if model.has_branch:
        tensors.append(_tensor("branch.weight", model.branch_weight))
        tensors.append(_tensor("branch.bias", model.branch_bias))
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "head": model.head,
        "n_layers": model.n_layers,
        "meta": model.meta,
        "tensors": tensors,
    }


def model_from_dict(data: dict) -> MLP:
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a model checkpoint")
    if data.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {data.get('version')}")
    t = {e["name"]: _untensor(e) for e in data["tensors"]}
    n = data["n_layers"]
    model = MLP(
        weights=[t[f"layer{i}.weight"] for i in range(n)],
        biases=[t[f"layer{i}.bias"] for i in range(n)],
        head=data["head"],
        temperatures=t.get("temperatures"),
        branch_weight=t.get("branch.weight"),
        branch_bias=t.get("branch.bias"),
        meta=data.get("meta", {}),
    )
    return model


def save_model(model: MLP, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path) -> MLP:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
