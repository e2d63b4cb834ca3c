"""Network assembly: dense and sparse MLPs, the 1-D conv stack, and the
Elman recurrent model, with manual forward/backward passes throughout.

Every unit follows the same protocol: ``forward(x, mode)``, ``backward(grad)``
returning the gradient with respect to its input while stashing parameter
gradients, and ``update(lr)`` applying a plain SGD step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BatchTooSmallError,
    InvalidSpecError,
    NoCachedForwardError,
    ShapeMismatchError,
)
from .sparse import (
    DEFAULT_EPSILON,
    DEFAULT_INIT_SCALE,
    SparseLayer,
    activation_derivative,
    apply_activation,
    erdos_renyi_init,
    sgd_step,
)

MODEL_KINDS = ("dnn", "cnn", "rnn")
NUM_APPLIANCES = 4


@dataclass(frozen=True)
class ConvSpec:
    kernel_len: int = 9
    num_filters: int = 16
    pool_len: int = 4


@dataclass(frozen=True)
class RnnSpec:
    hidden_state_dim: int = 32
    chunk_len: int = 10


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "dnn"
    sparse: bool = False
    input_len: int = 600
    hidden_sizes: tuple[int, int] = (64, 64)
    output_dim: int = NUM_APPLIANCES
    conv: ConvSpec = field(default_factory=ConvSpec)
    rnn: RnnSpec = field(default_factory=RnnSpec)
    dropout_rate: float = 0.2
    epsilon: float = DEFAULT_EPSILON
    init_scale: float = DEFAULT_INIT_SCALE

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise InvalidSpecError(f"unknown model kind {self.kind!r}")
        if len(self.hidden_sizes) != 2 or any(h < 1 for h in self.hidden_sizes):
            raise InvalidSpecError("hidden_sizes must be two positive integers")
        if self.output_dim != NUM_APPLIANCES:
            raise InvalidSpecError(f"output_dim must be {NUM_APPLIANCES}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidSpecError("dropout_rate must be in [0, 1)")
        if self.kind == "cnn":
            conv_out = self.input_len - self.conv.kernel_len + 1
            if self.conv.kernel_len < 1 or conv_out < 1:
                raise InvalidSpecError("conv kernel longer than the input")
            if self.conv.pool_len < 1 or conv_out // self.conv.pool_len < 1:
                raise InvalidSpecError("pooling collapses the conv output to nothing")
        if self.kind == "rnn":
            if self.rnn.chunk_len < 1 or self.input_len % self.rnn.chunk_len != 0:
                raise InvalidSpecError("input_len must be a multiple of chunk_len")

    @property
    def name(self) -> str:
        return ("set_" if self.sparse else "") + self.kind

    @property
    def display_name(self) -> str:
        return ("SET-" if self.sparse else "") + self.kind.upper()

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "sparse": self.sparse,
            "input_len": self.input_len,
            "hidden_sizes": list(self.hidden_sizes),
            "output_dim": self.output_dim,
            "conv": vars(self.conv).copy(),
            "rnn": vars(self.rnn).copy(),
            "dropout_rate": self.dropout_rate,
            "epsilon": self.epsilon,
            "init_scale": self.init_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            kind=d["kind"],
            sparse=d["sparse"],
            input_len=d["input_len"],
            hidden_sizes=tuple(d["hidden_sizes"]),
            output_dim=d["output_dim"],
            conv=ConvSpec(**d["conv"]),
            rnn=RnnSpec(**d["rnn"]),
            dropout_rate=d["dropout_rate"],
            epsilon=d["epsilon"],
            init_scale=d["init_scale"],
        )


def grid_specs(base: ModelSpec | None = None) -> list[ModelSpec]:
    """The six experiment specs: {dnn, cnn, rnn} x {dense, sparse}."""
    base = base or ModelSpec()
    out = []
    for kind in MODEL_KINDS:
        for sparse in (False, True):
            d = base.to_dict()
            d["kind"] = kind
            d["sparse"] = sparse
            out.append(ModelSpec.from_dict(d))
    return out


# ---------------------------------------------------------------------------
# units


def _glorot_uniform(rng, n_in, n_out, shape=None):
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=shape or (n_in, n_out))


class DenseLayer:
    def __init__(self, n_in, n_out, activation, rng):
        self.n_in = n_in
        self.n_out = n_out
        self.activation = activation
        self.weight = _glorot_uniform(rng, n_in, n_out)
        self.bias = np.zeros(n_out)
        self._cache = None
        self._grads = None

    def forward(self, x, mode="eval"):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeMismatchError(f"expected input (batch, {self.n_in}), got {x.shape}")
        z = x @ self.weight + self.bias
        a = apply_activation(self.activation, z)
        self._cache = (x, z, a) if mode == "train" else None
        return a

    def backward(self, grad_out):
        if self._cache is None:
            raise NoCachedForwardError("dense backward requires a train-mode forward")
        x, z, a = self._cache
        delta = grad_out * activation_derivative(self.activation, z, a)
        return self._backward_delta(x, delta)

    def backward_from_delta(self, delta):
        if self._cache is None:
            raise NoCachedForwardError("dense backward requires a train-mode forward")
        x, _, _ = self._cache
        return self._backward_delta(x, delta)

    def _backward_delta(self, x, delta):
        self._grads = (x.T @ delta, delta.sum(axis=0))
        return delta @ self.weight.T

    def update(self, lr):
        dw, db = self._grads
        self.weight -= lr * dw
        self.bias -= lr * db

    def state_dict(self):
        return {"weight": self.weight, "bias": self.bias}

    def load_state(self, state):
        self.weight = np.asarray(state["weight"], dtype=np.float64)
        self.bias = np.asarray(state["bias"], dtype=np.float64)


class SparseUnit:
    """Adapter giving a SparseLayer the sequential-unit protocol."""

    def __init__(self, layer: SparseLayer):
        self.layer = layer
        self._grads = None

    @property
    def activation(self):
        return self.layer.activation

    def forward(self, x, mode="eval"):
        return self.layer.forward(x, mode)

    def backward(self, grad_out):
        grad_in, wg, bg = self.layer.backward(grad_out)
        self._grads = (wg, bg)
        return grad_in

    def backward_from_delta(self, delta):
        grad_in, wg, bg = self.layer.backward_from_delta(delta)
        self._grads = (wg, bg)
        return grad_in

    def update(self, lr):
        sgd_step(self.layer, self._grads, lr)

    def state_dict(self):
        return self.layer.state_dict()

    def load_state(self, state):
        self.layer = SparseLayer.from_state(state)


class Conv1D:
    """Single-channel valid cross-correlation producing one map per filter.

    Output layout is channels-last, (batch, out_len, filters): the batch-norm
    and flatten stages downstream then reshape without copying.
    """

    def __init__(self, kernel_len, num_filters, rng):
        self.kernel_len = kernel_len
        self.num_filters = num_filters
        self.filters = _glorot_uniform(rng, kernel_len, num_filters)
        self.bias = np.zeros(num_filters)
        self._cache = None
        self._grads = None

    def forward(self, x, mode="eval"):
        if x.ndim != 2 or x.shape[1] < self.kernel_len:
            raise ShapeMismatchError(f"conv input {x.shape} shorter than kernel {self.kernel_len}")
        batch, in_len = x.shape
        out_len = in_len - self.kernel_len + 1
        cols = np.lib.stride_tricks.sliding_window_view(x, self.kernel_len, axis=1)
        cols = cols.reshape(batch * out_len, self.kernel_len)  # copies into one gemm operand
        z = cols @ self.filters + self.bias
        self._cache = cols if mode == "train" else None
        self._in_len = in_len
        return z.reshape(batch, out_len, self.num_filters)

    def backward(self, grad_out):
        if self._cache is None:
            raise NoCachedForwardError("conv backward requires a train-mode forward")
        cols = self._cache
        batch, out_len, _ = grad_out.shape
        g2 = grad_out.reshape(batch * out_len, self.num_filters)
        self._grads = (cols.T @ g2, g2.sum(axis=0))
        dcols = (g2 @ self.filters.T).reshape(batch, out_len, self.kernel_len)
        dx = np.zeros((batch, self._in_len))
        for j in range(self.kernel_len):
            dx[:, j : j + out_len] += dcols[:, :, j]
        return dx

    def update(self, lr):
        df, db = self._grads
        self.filters -= lr * df
        self.bias -= lr * db

    def state_dict(self):
        return {"filters": self.filters, "bias": self.bias}

    def load_state(self, state):
        self.filters = np.asarray(state["filters"], dtype=np.float64)
        self.bias = np.asarray(state["bias"], dtype=np.float64)


class BatchNorm:
    """Per-feature normalization; channels-last 3-D inputs normalize per channel."""

    def __init__(self, num_features, momentum=0.9, eps=1e-5):
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.gamma = np.ones(num_features)
        self.beta = np.zeros(num_features)
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)
        self._cache = None
        self._grads = None

    def _to_2d(self, x):
        if x.ndim == 2:
            return x, None
        if x.ndim == 3:
            if x.shape[2] != self.num_features:
                raise ShapeMismatchError(f"expected {self.num_features} channels last, got {x.shape}")
            # Contiguous channels-last input makes this reshape a view.
            return x.reshape(-1, self.num_features), x.shape
        raise ShapeMismatchError(f"batchnorm expects 2-D or 3-D input, got {x.shape}")

    def _from_2d(self, y, shape):
        if shape is None:
            return y
        return y.reshape(shape)

    def forward(self, x, mode="eval"):
        x2, shape = self._to_2d(x)
        if x2.shape[1] != self.num_features:
            raise ShapeMismatchError(f"expected {self.num_features} features, got {x.shape}")
        if mode == "train":
            if x2.shape[0] < 2:
                raise BatchTooSmallError("train-mode batch norm needs at least 2 samples")
            n = x2.shape[0]
            mu = x2.mean(axis=0)
            xhat = x2 - mu
            var = np.einsum("nf,nf->f", xhat, xhat) / n
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat *= inv_std
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mu
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
            self._cache = (inv_std, xhat, shape)
            out = xhat * self.gamma
            out += self.beta
            return self._from_2d(out, shape)
        # Eval path folds the normalization into one scale-and-shift pass.
        self._cache = None
        scale = self.gamma / np.sqrt(self.running_var + self.eps)
        return self._from_2d(x2 * scale + (self.beta - self.running_mean * scale), shape)

    def backward(self, grad_out):
        if self._cache is None:
            raise NoCachedForwardError("batchnorm backward requires a train-mode forward")
        inv_std, xhat, shape = self._cache
        g2, _ = self._to_2d(grad_out)
        n = g2.shape[0]
        self._grads = (np.einsum("nf,nf->f", g2, xhat), g2.sum(axis=0))
        # dx = inv_std/n * (n*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
        dxhat = g2 * self.gamma
        s1 = dxhat.sum(axis=0)
        s2 = np.einsum("nf,nf->f", dxhat, xhat)
        dxhat *= n
        dxhat -= s1
        dxhat -= xhat * s2
        dxhat *= inv_std / n
        return self._from_2d(dxhat, shape)

    def update(self, lr):
        dgamma, dbeta = self._grads
        self.gamma -= lr * dgamma
        self.beta -= lr * dbeta

    def state_dict(self):
        return {
            "gamma": self.gamma,
            "beta": self.beta,
            "running_mean": self.running_mean,
            "running_var": self.running_var,
        }

    def load_state(self, state):
        self.gamma = np.asarray(state["gamma"], dtype=np.float64)
        self.beta = np.asarray(state["beta"], dtype=np.float64)
        self.running_mean = np.asarray(state["running_mean"], dtype=np.float64)
        self.running_var = np.asarray(state["running_var"], dtype=np.float64)


class MaxPool1D:
    """Non-overlapping max over one axis; ties go to the lowest index.

    Argmax routing is only cached in train mode; eval uses a plain max.
    """

    def __init__(self, pool_len, axis=-1):
        self.pool_len = pool_len
        self.axis = axis
        self._cache = None

    def _windowed_shape(self, shape, axis, out_len):
        return shape[:axis] + (out_len, self.pool_len) + shape[axis + 1 :]

    def forward(self, x, mode="eval"):
        p = self.pool_len
        axis = self.axis % x.ndim
        orig_shape = x.shape
        out_len = orig_shape[axis] // p
        if orig_shape[axis] != out_len * p:
            trim = [slice(None)] * x.ndim
            trim[axis] = slice(0, out_len * p)
            x = x[tuple(trim)]
        xw = x.reshape(self._windowed_shape(orig_shape, axis, out_len))
        if mode != "train":
            self._cache = None
            return xw.max(axis=axis + 1)
        idx = xw.argmax(axis=axis + 1)
        self._cache = (orig_shape, idx)
        return np.take_along_axis(xw, np.expand_dims(idx, axis + 1), axis=axis + 1).squeeze(axis + 1)

    def backward(self, grad_out):
        if self._cache is None:
            raise NoCachedForwardError("maxpool backward requires a train-mode forward")
        shape, idx = self._cache
        p = self.pool_len
        axis = self.axis % len(shape)
        out_len = shape[axis] // p
        dwin = np.zeros(self._windowed_shape(shape, axis, out_len))
        np.put_along_axis(dwin, np.expand_dims(idx, axis + 1), np.expand_dims(grad_out, axis + 1), axis=axis + 1)
        dx = np.zeros(shape)
        trim = [slice(None)] * len(shape)
        trim[axis] = slice(0, out_len * p)
        dx[tuple(trim)] = dwin.reshape(shape[:axis] + (out_len * p,) + shape[axis + 1 :])
        return dx

    def update(self, lr):
        pass

    def state_dict(self):
        return {}

    def load_state(self, state):
        pass


class Dropout:
    """Inverted dropout: scaled mask in train mode, identity in eval mode."""

    def __init__(self, rate, seed=0):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self._mask = None

    def forward(self, x, mode="eval"):
        if mode != "train" or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self._rng.random(x.shape) >= self.rate) / keep
        return x * self._mask

    def backward(self, grad_out):
        if self._mask is None:
            return grad_out
        return grad_out * self._mask

    def update(self, lr):
        pass

    def state_dict(self):
        return {}

    def load_state(self, state):
        self._rng = np.random.default_rng(self.seed)


class Flatten:
    def __init__(self):
        self._shape = None

    def forward(self, x, mode="eval"):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._shape)

    def update(self, lr):
        pass

    def state_dict(self):
        return {}

    def load_state(self, state):
        pass


class ElmanUnit:
    """tanh recurrent cell over fixed-length input chunks; emits the final state."""

    def __init__(self, chunk_len, hidden_dim, rng):
        self.chunk_len = chunk_len
        self.hidden_dim = hidden_dim
        self.w_in = _glorot_uniform(rng, chunk_len, hidden_dim)
        self.w_rec = _glorot_uniform(rng, hidden_dim, hidden_dim)
        self.bias = np.zeros(hidden_dim)
        self._cache = None
        self._grads = None

    def forward(self, x, mode="eval"):
        if x.ndim != 2 or x.shape[1] % self.chunk_len != 0:
            raise ShapeMismatchError(f"input {x.shape} not divisible into {self.chunk_len}-chunks")
        batch = x.shape[0]
        steps = x.shape[1] // self.chunk_len
        xs = x.reshape(batch, steps, self.chunk_len)
        hs = np.zeros((batch, steps + 1, self.hidden_dim))
        for t in range(steps):
            hs[:, t + 1] = np.tanh(xs[:, t] @ self.w_in + hs[:, t] @ self.w_rec + self.bias)
        self._cache = (xs, hs) if mode == "train" else None
        return hs[:, -1]

    def backward(self, grad_out):
        if self._cache is None:
            raise NoCachedForwardError("recurrent backward requires a train-mode forward")
        xs, hs = self._cache
        batch, steps, _ = xs.shape
        dw_in = np.zeros_like(self.w_in)
        dw_rec = np.zeros_like(self.w_rec)
        db = np.zeros_like(self.bias)
        dxs = np.empty_like(xs)
        dh = grad_out
        for t in range(steps - 1, -1, -1):
            delta = dh * (1.0 - hs[:, t + 1] ** 2)
            dw_in += xs[:, t].T @ delta
            dw_rec += hs[:, t].T @ delta
            db += delta.sum(axis=0)
            dxs[:, t] = delta @ self.w_in.T
            dh = delta @ self.w_rec.T
        self._grads = (dw_in, dw_rec, db)
        return dxs.reshape(batch, steps * self.chunk_len)

    def update(self, lr):
        dw_in, dw_rec, db = self._grads
        self.w_in -= lr * dw_in
        self.w_rec -= lr * dw_rec
        self.bias -= lr * db

    def state_dict(self):
        return {"w_in": self.w_in, "w_rec": self.w_rec, "bias": self.bias}

    def load_state(self, state):
        self.w_in = np.asarray(state["w_in"], dtype=np.float64)
        self.w_rec = np.asarray(state["w_rec"], dtype=np.float64)
        self.bias = np.asarray(state["bias"], dtype=np.float64)


# ---------------------------------------------------------------------------
# functional forms of the standalone operations


def conv1d_forward(filters, x):
    """Valid cross-correlation. filters: (kernel,) or (kernel, n_filters);
    x: (length,) or (batch, length)."""
    filters = np.asarray(filters, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    f2 = filters[:, None] if filters.ndim == 1 else filters
    x2 = x[None, :] if x.ndim == 1 else x
    if f2.shape[0] > x2.shape[1]:
        raise ShapeMismatchError("kernel longer than input")
    cols = np.lib.stride_tricks.sliding_window_view(x2, f2.shape[0], axis=1)
    out = cols @ f2  # (batch, out_len, n_filters)
    if filters.ndim == 1:
        out = out[..., 0]
    if x.ndim == 1:
        out = out[0]
    return out


def maxpool1d_forward(x, pool_len):
    """Max over non-overlapping windows of the last axis."""
    x = np.asarray(x, dtype=np.float64)
    out_len = x.shape[-1] // pool_len
    xt = x[..., : out_len * pool_len].reshape(*x.shape[:-1], out_len, pool_len)
    return xt.max(axis=-1)


def dropout_forward(x, rate, mode="eval", seed=0):
    """Inverted dropout as a pure function."""
    x = np.asarray(x, dtype=np.float64)
    if mode != "train" or rate == 0.0:
        return x.copy()
    mask = np.random.default_rng(seed).random(x.shape) >= rate
    return x * mask / (1.0 - rate)


# ---------------------------------------------------------------------------
# network


class Network:
    """Sequential stack ending in per-output sigmoid probabilities."""

    def __init__(self, spec: ModelSpec, units: list):
        self.spec = spec
        self.units = units

    def forward(self, x, mode="eval"):
        for unit in self.units:
            x = unit.forward(x, mode)
        return x

    def backward(self, grad_out):
        """Standard chain through every unit, last activation included."""
        g = grad_out
        for unit in reversed(self.units):
            g = unit.backward(g)
        return g

    def backward_from_output_delta(self, delta):
        """Backward starting from the pre-activation gradient of the output
        layer; used with losses whose sigmoid derivative is folded in."""
        g = self.units[-1].backward_from_delta(delta)
        for unit in reversed(self.units[:-1]):
            g = unit.backward(g)
        return g

    def update(self, lr):
        for unit in self.units:
            unit.update(lr)

    def sparse_layers(self) -> list[SparseLayer]:
        return [u.layer for u in self.units if isinstance(u, SparseUnit)]

    def state_dict(self):
        out = {"spec_json": np.str_(json.dumps(self.spec.to_dict(), sort_keys=True))}
        for i, unit in enumerate(self.units):
            for key, value in unit.state_dict().items():
                out[f"u{i}.{key}"] = value
        return out

    def load_state(self, state):
        for i, unit in enumerate(self.units):
            prefix = f"u{i}."
            sub = {k[len(prefix) :]: v for k, v in state.items() if k.startswith(prefix)}
            unit.load_state(sub)


def _fc_unit(n_in, n_out, activation, spec, rng, sparsify):
    if sparsify:
        layer = erdos_renyi_init(
            n_in,
            n_out,
            epsilon=spec.epsilon,
            seed=int(rng.integers(2**63)),
            activation=activation,
            init_scale=spec.init_scale,
        )
        return SparseUnit(layer)
    return DenseLayer(n_in, n_out, activation, rng)


def build(spec: ModelSpec, seed: int = 0) -> Network:
    """Assemble a network for the spec, deterministically from the seed.

    In sparse variants every fully-connected hidden layer becomes a sparse
    layer; the final output layer stays dense for dnn/cnn (matching the
    usual sparse-evolution setup), while the rnn head, its only
    fully-connected layer, is the one sparsified. Conv filters and recurrent
    kernels always stay dense.
    """
    rng = np.random.default_rng(seed)
    h1, h2 = spec.hidden_sizes
    units: list = []

    if spec.kind == "rnn":
        units.append(ElmanUnit(spec.rnn.chunk_len, spec.rnn.hidden_state_dim, rng))
        units.append(
            _fc_unit(spec.rnn.hidden_state_dim, spec.output_dim, "sigmoid", spec, rng, spec.sparse)
        )
        return Network(spec, units)

    flat_width = spec.input_len
    if spec.kind == "cnn":
        conv_len = spec.input_len - spec.conv.kernel_len + 1
        pooled_len = conv_len // spec.conv.pool_len
        flat_width = pooled_len * spec.conv.num_filters
        units.append(Conv1D(spec.conv.kernel_len, spec.conv.num_filters, rng))
        units.append(BatchNorm(spec.conv.num_filters))
        units.append(MaxPool1D(spec.conv.pool_len, axis=1))  # pool over time, per filter
        units.append(Dropout(spec.dropout_rate, seed=int(rng.integers(2**63))))
        units.append(Flatten())

    units.append(_fc_unit(flat_width, h1, "relu", spec, rng, spec.sparse))
    units.append(_fc_unit(h1, h2, "relu", spec, rng, spec.sparse))
    units.append(DenseLayer(h2, spec.output_dim, "sigmoid", rng))
    return Network(spec, units)


def save_network(network: Network, path, scaler=None) -> None:
    """Checkpoint the spec, every unit's parameters, and the input scaler."""
    state = network.state_dict()
    if scaler is not None:
        state["scaler_mean"], state["scaler_std"] = scaler
    np.savez(path, **state)


def load_network(path):
    """Restore a checkpoint; returns (network, scaler_or_None)."""
    with np.load(path) as data:
        state = dict(data)
    spec = ModelSpec.from_dict(json.loads(str(state.pop("spec_json"))))
    scaler = None
    if "scaler_mean" in state:
        scaler = (state.pop("scaler_mean"), state.pop("scaler_std"))
    network = build(spec, seed=0)
    network.load_state(state)
    return network, scaler
