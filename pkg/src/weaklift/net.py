"""A small numpy neural-network engine with hand-written backpropagation.

Covers exactly what the lifting modules need: dense layers, batch
normalization, ReLU, inverted dropout, residual blocks and Adam. Everything
is float64 so gradients can be checked against finite differences.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .exceptions import NumericalError

DENSE = "dense"
BATCH_NORM = "batch_norm"
RELU = "relu"
DROPOUT = "dropout"
RESIDUAL_BEGIN = "residual_begin"
RESIDUAL_END = "residual_end"
LAYER_KINDS = (DENSE, BATCH_NORM, RELU, DROPOUT, RESIDUAL_BEGIN, RESIDUAL_END)

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ValueError("layer dimensions must be positive")
        if self.kind != DENSE and self.in_dim != self.out_dim:
            raise ValueError(f"{self.kind} layers cannot change width")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")


def _check_chain(layers):
    if not layers:
        raise ValueError("network needs at least one layer")
    depth = 0
    for a, b in zip(layers, layers[1:]):
        if a.out_dim != b.in_dim:
            raise ValueError(f"incompatible layer chain: {a} -> {b}")
    for layer in layers:
        depth += (layer.kind == RESIDUAL_BEGIN) - (layer.kind == RESIDUAL_END)
        if depth < 0:
            raise ValueError("residual_end without matching residual_begin")
    if depth:
        raise ValueError("unclosed residual block")


class NetworkParams:
    """Learnable weights plus batch-norm running statistics of one network.

    ``weights`` holds the trainable arrays and ``buffers`` the running
    statistics; both are dicts in declaration order, which is also the order
    used by checkpoints.
    """

    def __init__(self, layers, weights, buffers, metadata=None):
        self.layers = tuple(layers)
        _check_chain(self.layers)
        self.weights = dict(weights)
        self.buffers = dict(buffers)
        self.metadata = dict(metadata or {})

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def output_dim(self):
        return self.layers[-1].out_dim

    @property
    def n_parameters(self):
        return sum(w.size for w in self.weights.values())

    @property
    def has_batch_norm(self):
        return any(layer.kind == BATCH_NORM for layer in self.layers)

    def architecture_hash(self):
        desc = ";".join(f"{l.kind}:{l.in_dim}:{l.out_dim}:{l.dropout_rate!r}" for l in self.layers)
        return hashlib.sha256(desc.encode()).hexdigest()[:16]

    def arrays(self):
        """All arrays, trainable first, in declaration order."""
        return {**self.weights, **self.buffers}

    def copy(self):
        return NetworkParams(self.layers, {k: v.copy() for k, v in self.weights.items()},
                             {k: v.copy() for k, v in self.buffers.items()}, self.metadata)

    def equals(self, other):
        a, b = self.arrays(), other.arrays()
        return (self.layers == other.layers and a.keys() == b.keys()
                and all(np.array_equal(a[k], b[k]) for k in a))

    def __repr__(self):
        return (f"NetworkParams({self.input_dim}->{self.output_dim}, layers={len(self.layers)}, "
                f"parameters={self.n_parameters})")


def _name(i, suffix):
    return f"layer{i:02d}.{suffix}"


def _he_uniform(rng, fan_in, shape):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def build_network(layers, seed=0):
    """Allocate and initialize parameters for an arbitrary layer chain.

    Dense layers are He-uniform initialized with zero bias; batch norm starts
    at scale 1, shift 0, running mean 0 and running variance 1.
    """
    layers = tuple(layers)
    _check_chain(layers)
    rng = np.random.default_rng(seed)
    weights, buffers = {}, {}
    for i, layer in enumerate(layers):
        if layer.kind == DENSE:
            weights[_name(i, "W")] = _he_uniform(rng, layer.in_dim, (layer.in_dim, layer.out_dim))
            weights[_name(i, "b")] = np.zeros(layer.out_dim)
        elif layer.kind == BATCH_NORM:
            weights[_name(i, "gamma")] = np.ones(layer.out_dim)
            weights[_name(i, "beta")] = np.zeros(layer.out_dim)
            buffers[_name(i, "running_mean")] = np.zeros(layer.out_dim)
            buffers[_name(i, "running_var")] = np.ones(layer.out_dim)
    return NetworkParams(layers, weights, buffers)


def module_layers(input_dim, output_dim, hidden=1024, dropout_rate=0.5, n_blocks=2,
                  batch_norm=True):
    """Layer chain of one lifting module.

    dense(in->H), then ``n_blocks`` residual blocks of two
    [dense(H->H), batch norm, ReLU, dropout] units with a skip connection,
    then dense(H->out).
    """
    H = hidden
    unit = [LayerSpec(DENSE, H, H)]
    if batch_norm:
        unit.append(LayerSpec(BATCH_NORM, H, H))
    unit.append(LayerSpec(RELU, H, H))
    if dropout_rate > 0:
        unit.append(LayerSpec(DROPOUT, H, H, dropout_rate))
    layers = [LayerSpec(DENSE, input_dim, H)]
    for _ in range(n_blocks):
        layers += [LayerSpec(RESIDUAL_BEGIN, H, H), *unit, *unit, LayerSpec(RESIDUAL_END, H, H)]
    layers.append(LayerSpec(DENSE, H, output_dim))
    return layers


def build_module(input_dim, output_dim, hidden=1024, dropout_rate=0.5, seed=0, *,
                 batch_norm=True, n_blocks=2):
    """Build one lifting module (2d->3d lifter or 3d->2d re-projector)."""
    if min(input_dim, output_dim, hidden) <= 0:
        raise ValueError("dimensions must be positive")
    params = build_network(module_layers(input_dim, output_dim, hidden, dropout_rate, n_blocks,
                                         batch_norm), seed)
    params.metadata.update(hidden=hidden, input_dim=input_dim, output_dim=output_dim,
                           dropout_rate=dropout_rate, batch_norm=batch_norm, n_blocks=n_blocks)
    return params


@dataclass
class ForwardTrace:
    """Activations cached by :func:`forward` for a single :func:`backward` call."""

    mode: str
    caches: list
    masks: dict
    batch_size: int
    consumed: bool = False


def forward(params: NetworkParams, x, mode="eval", rng=None, masks=None, update_stats=True):
    """Run the network on a batch ``x`` of shape (B, input_dim).

    In ``train`` mode batch norm normalizes with batch statistics and updates
    the running averages (unless ``update_stats`` is false) and dropout draws
    masks from ``rng``. Passing ``masks`` from an earlier trace replays the
    same dropout pattern. ``eval`` mode is deterministic.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ValueError(f"expected input of shape (B, {params.input_dim}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite values in network input")
    B = x.shape[0]
    train = mode == "train"
    if train and B < 2 and params.has_batch_norm:
        raise ValueError("train-mode batch norm needs a batch of at least 2")
    W = params.weights
    caches, used_masks, skips = [], {}, []
    for i, layer in enumerate(params.layers):
        kind = layer.kind
        if kind == DENSE:
            caches.append(x)
            x = x @ W[_name(i, "W")] + W[_name(i, "b")]
        elif kind == BATCH_NORM:
            gamma, beta = W[_name(i, "gamma")], W[_name(i, "beta")]
            rm, rv = params.buffers[_name(i, "running_mean")], params.buffers[_name(i, "running_var")]
            if train:
                mu = x.mean(axis=0)
                var = x.var(axis=0)
                if update_stats:
                    rm *= 1.0 - BN_MOMENTUM
                    rm += BN_MOMENTUM * mu
                    rv *= 1.0 - BN_MOMENTUM
                    rv += BN_MOMENTUM * var
            else:
                mu, var = rm, rv
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (x - mu) * inv_std
            caches.append((xhat, inv_std, train))
            x = gamma * xhat + beta
        elif kind == RELU:
            active = x > 0
            caches.append(active)
            x = x * active
        elif kind == DROPOUT:
            if train and layer.dropout_rate > 0:
                if masks is not None:
                    mask = masks[i]
                else:
                    if rng is None:
                        raise ValueError("train-mode dropout needs an rng or replay masks")
                    keep = 1.0 - layer.dropout_rate
                    mask = (rng.random(x.shape) < keep) / keep
                used_masks[i] = mask
                x = x * mask
            caches.append(None)
        elif kind == RESIDUAL_BEGIN:
            skips.append(x)
            caches.append(None)
        else:
            x = x + skips.pop()
            caches.append(None)
    return x, ForwardTrace(mode, caches, used_masks, B)


def backward(params: NetworkParams, trace: ForwardTrace, grad_output):
    """Backpropagate ``grad_output`` through a recorded forward pass.

    Returns ``(grads, grad_input)`` where ``grads`` maps every trainable
    parameter name to its gradient.
    """
    if trace.consumed:
        raise RuntimeError("forward trace has already been used by backward")
    g = np.asarray(grad_output, dtype=np.float64)
    if g.shape != (trace.batch_size, params.output_dim):
        raise ValueError(f"gradient shape {g.shape} does not match forward output "
                         f"({trace.batch_size}, {params.output_dim})")
    trace.consumed = True
    W = params.weights
    grads = {}
    pending = []
    for i in range(len(params.layers) - 1, -1, -1):
        layer, cache = params.layers[i], trace.caches[i]
        kind = layer.kind
        if kind == DENSE:
            grads[_name(i, "W")] = cache.T @ g
            grads[_name(i, "b")] = g.sum(axis=0)
            g = g @ W[_name(i, "W")].T
        elif kind == BATCH_NORM:
            xhat, inv_std, batch_stats = cache
            gamma = W[_name(i, "gamma")]
            grads[_name(i, "gamma")] = (g * xhat).sum(axis=0)
            grads[_name(i, "beta")] = g.sum(axis=0)
            dxhat = g * gamma
            if batch_stats:
                g = inv_std * (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0))
            else:
                g = dxhat * inv_std
        elif kind == RELU:
            g = g * cache
        elif kind == DROPOUT:
            if i in trace.masks:
                g = g * trace.masks[i]
        elif kind == RESIDUAL_END:
            pending.append(g)
        else:
            g = g + pending.pop()
    grads = {k: grads[k] for k in W}
    return grads, g


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: NetworkParams, learning_rate=1e-4, beta1=0.9, beta2=0.999,
                   eps=1e-8):
        zeros = lambda: {k: np.zeros_like(w) for k, w in params.weights.items()}
        return cls(zeros(), zeros(), 0, learning_rate, beta1, beta2, eps)

    def copy(self):
        return AdamState({k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()},
                         self.step, self.learning_rate, self.beta1, self.beta2, self.eps)

    def equals(self, other):
        return (self.step == other.step
                and (self.learning_rate, self.beta1, self.beta2, self.eps)
                == (other.learning_rate, other.beta1, other.beta2, other.eps)
                and all(np.array_equal(self.m[k], other.m[k]) and np.array_equal(self.v[k], other.v[k])
                        for k in self.m))


def adam_step(params: NetworkParams, grads, state: AdamState):
    """Apply one bias-corrected Adam update in place and return ``(params, state)``."""
    for name, g in grads.items():
        if name not in params.weights:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params.weights[name].shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in {name.split('.')[0]} (parameter {name!r})")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    step_size = state.learning_rate / (1.0 - b1 ** t)
    bias2 = 1.0 - b2 ** t
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params.weights[name] -= step_size * m / (np.sqrt(v / bias2) + state.eps)
    return params, state
