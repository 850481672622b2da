"""Small fully-connected classifier with hand-written forward/backward.

Hidden layers are linear -> ReLU -> inverted dropout; the final layer is
linear and emits logits for the loss head. Double precision throughout so
composed gradient checks hold at tight tolerances.
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ForwardCacheError, InvalidConfigError, InvalidInputError


class Mode(Enum):
    TRAIN = "train"
    EVAL = "eval"


@dataclass(frozen=True)
class NetConfig:
    input_dim: int
    hidden_dims: tuple = ()
    num_classes: int = 2
    dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise InvalidConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if any(h < 1 for h in self.hidden_dims):
            raise InvalidConfigError(f"zero-sized hidden layer in {self.hidden_dims}")
        if self.num_classes < 2:
            raise InvalidConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidConfigError(f"dropout_rate {self.dropout_rate!r} outside [0, 1)")
        if self.seed < 0:
            raise InvalidConfigError("seed must be non-negative")

    @property
    def layer_dims(self) -> tuple:
        return (self.input_dim, *self.hidden_dims, self.num_classes)


@dataclass
class NetState:
    """Per-layer weights (out x in) and biases; mutated in place by updates."""

    config: NetConfig
    weights: list
    biases: list

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def named_tensors(self):
        """[(name, array)] in a fixed order; names match the checkpoint files."""
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"layer{i}_W", w))
            out.append((f"layer{i}_b", b))
        return out


def init(config: NetConfig) -> NetState:
    """He-uniform weights (bound sqrt(6/fan_in)), zero biases, seeded by config.seed."""
    rng = np.random.default_rng(config.seed)
    dims = config.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return NetState(config=config, weights=weights, biases=biases)


@dataclass
class ForwardCache:
    """Activations and dropout masks recorded by a training-mode forward."""

    layer_inputs: list  # input to each linear layer, post dropout
    pre_acts: list  # pre-ReLU activations of each hidden layer
    masks: list  # boolean keep-masks per hidden layer, or None
    batch: int


def forward(state: NetState, inputs, mode: Mode = Mode.EVAL, rng=None, masks=None):
    """Run the net on a (B, input_dim) batch.

    EVAL returns logits and is a pure function of (state, inputs). TRAIN
    returns (logits, cache): hidden activations pass through inverted
    dropout (scale 1/(1-rate)) with masks drawn from `rng`, or taken from
    `masks` to replay a recorded pass (used by finite-difference checks).
    """
    cfg = state.config
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise InvalidInputError(
            f"inputs must be (B, {cfg.input_dim}), got shape {x.shape}"
        )
    train = mode is Mode.TRAIN
    rate = cfg.dropout_rate
    if train and rate > 0.0 and rng is None and masks is None:
        raise InvalidInputError("training-mode forward with dropout needs an rng or fixed masks")

    keep = 1.0 - rate
    layer_inputs, pre_acts, used_masks = [], [], []
    a = x
    n_hidden = state.num_layers - 1
    for i in range(n_hidden):
        layer_inputs.append(a)
        z = a @ state.weights[i].T + state.biases[i]
        pre_acts.append(z)
        h = np.maximum(z, 0.0)
        if train and rate > 0.0:
            mask = masks[i] if masks is not None else rng.random(h.shape) < keep
            h = h * mask / keep
            used_masks.append(mask)
        else:
            used_masks.append(None)
        a = h
    layer_inputs.append(a)
    logits = a @ state.weights[-1].T + state.biases[-1]

    if not train:
        return logits
    cache = ForwardCache(
        layer_inputs=layer_inputs, pre_acts=pre_acts, masks=used_masks, batch=x.shape[0]
    )
    return logits, cache


def backward(state: NetState, cache: ForwardCache, grad_logits) -> list:
    """Gradients [(dW, db)] per layer from the loss gradient w.r.t. logits.

    grad_logits must carry any batch-averaging factor already; the cache
    must come from a matching training-mode forward on this state.
    """
    if cache is None:
        raise ForwardCacheError("backward needs the cache from a training-mode forward")
    n = state.num_layers
    if len(cache.layer_inputs) != n or len(cache.pre_acts) != n - 1:
        raise ForwardCacheError(
            f"cache holds {len(cache.layer_inputs)} layer inputs, state has {n} layers"
        )
    g = np.asarray(grad_logits, dtype=np.float64)
    if g.shape != (cache.batch, state.config.num_classes):
        raise ForwardCacheError(
            f"grad_logits shape {g.shape} does not match cached batch "
            f"({cache.batch}, {state.config.num_classes})"
        )
    for i, a in enumerate(cache.layer_inputs):
        if a.shape != (cache.batch, state.weights[i].shape[1]):
            raise ForwardCacheError(f"stale cache: layer {i} input shape {a.shape}")

    keep = 1.0 - state.config.dropout_rate
    grads = [None] * n
    for i in range(n - 1, -1, -1):
        a_in = cache.layer_inputs[i]
        grads[i] = (g.T @ a_in, g.sum(axis=0))
        if i > 0:
            da = g @ state.weights[i]
            mask = cache.masks[i - 1]
            if mask is not None:
                da = da * mask / keep
            g = da * (cache.pre_acts[i - 1] > 0.0)
    return grads
