"""Sparse bipartite layers with prune-and-regrow evolution.

A layer keeps an explicit connection list instead of a dense matrix. Each
training epoch, the connections nearest zero in each sign class are removed
and the same number of fresh random connections appear at vacant positions,
so the connection count is conserved exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateLayerError,
    NoCachedForwardError,
    NoVacantPositionsError,
    ShapeMismatchError,
)

DEFAULT_EPSILON = 11.0
DEFAULT_ZETA = 0.3
DEFAULT_INIT_SCALE = 0.1
_INIT_RETRIES = 16

ACTIVATIONS = ("relu", "sigmoid", "identity")


@dataclass(frozen=True)
class EvolutionPolicy:
    """Per-epoch rewiring parameters."""

    zeta: float = DEFAULT_ZETA
    regrow_init_scale: float = DEFAULT_INIT_SCALE

    def __post_init__(self):
        if not 0.0 < self.zeta < 1.0:
            raise ValueError("zeta must be in (0, 1)")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return _sigmoid(z)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def activation_derivative(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Derivative of the activation, from cached pre- and post-activations."""
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {name!r}")


class SparseLayer:
    """Bipartite connection list with weights, bias, and an activation.

    Connections are stored row-ordered by input index; evolution and
    serialization work on that list. The passes gather the connections into
    a zero-padded dense matrix so they run as single BLAS products, which at
    these layer widths beats segmented reductions by a wide margin; vacant
    cells stay exactly zero so the result equals the connection-wise sum.
    """

    def __init__(self, n_in, n_out, in_idx, out_idx, weights, bias, activation, epsilon):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        in_idx = np.asarray(in_idx, dtype=np.int64)
        out_idx = np.asarray(out_idx, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.float64)
        if not (len(in_idx) == len(out_idx) == len(weights)):
            raise ValueError("connection arrays must have equal length")
        if len(weights) == 0:
            raise ValueError("layer must have at least one connection")
        if in_idx.min() < 0 or in_idx.max() >= n_in or out_idx.min() < 0 or out_idx.max() >= n_out:
            raise ValueError("connection indices out of range")
        if not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite")

        self.n_in = int(n_in)
        self.n_out = int(n_out)
        self.bias = np.asarray(bias, dtype=np.float64).copy()
        self.activation = activation
        self.epsilon = float(epsilon)
        self._set_connections(in_idx, out_idx, weights)
        self._cache = None

    def _set_connections(self, in_idx, out_idx, weights):
        order = np.lexsort((out_idx, in_idx))
        self.in_idx = in_idx[order]
        self.out_idx = out_idx[order]
        linear = self.in_idx * self.n_out + self.out_idx
        if np.any(np.diff(linear) == 0):
            raise ValueError("duplicate connections")
        self._dense = np.zeros((self.n_in, self.n_out), dtype=np.float64)
        self._dense[self.in_idx, self.out_idx] = weights[order]

    @property
    def weights(self) -> np.ndarray:
        """Connection weights in canonical (row-ordered) connection order."""
        return self._dense[self.in_idx, self.out_idx]

    @property
    def connection_count(self) -> int:
        return len(self.in_idx)

    # -- passes ---------------------------------------------------------

    def forward(self, x: np.ndarray, mode: str = "eval") -> np.ndarray:
        """act(x W + b) where W has entries only at the stored connections."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeMismatchError(f"expected input (batch, {self.n_in}), got {x.shape}")
        z = x @ self._dense + self.bias
        a = apply_activation(self.activation, z)
        self._cache = (x, z, a) if mode == "train" else None
        return a

    def backward(self, grad_out: np.ndarray):
        """Gradients for the cached train-mode batch.

        Returns (grad_in, weight_grads, bias_grads); weight_grads align with
        the canonical connection order, and parameter gradients are summed
        over the batch. Gradients exist only for stored connections.
        """
        if self._cache is None:
            raise NoCachedForwardError("backward() requires a train-mode forward()")
        x, z, a = self._cache
        grad_out = np.asarray(grad_out, dtype=np.float64)
        if grad_out.shape != z.shape:
            raise ShapeMismatchError(f"expected gradient {z.shape}, got {grad_out.shape}")
        delta = grad_out * activation_derivative(self.activation, z, a)
        return self._backward_delta(x, delta)

    def backward_from_delta(self, delta: np.ndarray):
        """Backward from a pre-activation gradient (fused loss shortcut)."""
        if self._cache is None:
            raise NoCachedForwardError("backward_from_delta() requires a train-mode forward()")
        x, _, _ = self._cache
        return self._backward_delta(x, np.asarray(delta, dtype=np.float64))

    def _backward_delta(self, x, delta):
        weight_grads = (x.T @ delta)[self.in_idx, self.out_idx]
        bias_grads = delta.sum(axis=0)
        grad_in = delta @ self._dense.T
        return grad_in, weight_grads, bias_grads

    # -- serialization helpers -------------------------------------------

    def to_dense(self) -> tuple[np.ndarray, np.ndarray]:
        return self._dense.copy(), self.bias.copy()

    @classmethod
    def from_dense(cls, w, bias, activation="identity", epsilon=DEFAULT_EPSILON):
        """Fully-connected layer with weights copied from a dense matrix."""
        w = np.asarray(w, dtype=np.float64)
        n_in, n_out = w.shape
        ii, jj = np.meshgrid(np.arange(n_in), np.arange(n_out), indexing="ij")
        return cls(n_in, n_out, ii.ravel(), jj.ravel(), w.ravel(), bias, activation, epsilon)

    def state_dict(self) -> dict:
        return {
            "n_in": np.int64(self.n_in),
            "n_out": np.int64(self.n_out),
            "epsilon": np.float64(self.epsilon),
            "activation": np.str_(self.activation),
            "in_idx": self.in_idx,
            "out_idx": self.out_idx,
            "weights": self.weights,
            "bias": self.bias,
        }

    @classmethod
    def from_state(cls, state: dict) -> "SparseLayer":
        return cls(
            int(state["n_in"]),
            int(state["n_out"]),
            state["in_idx"],
            state["out_idx"],
            state["weights"],
            state["bias"],
            str(state["activation"]),
            float(state["epsilon"]),
        )


def save_layer(layer: SparseLayer, path) -> None:
    """Checkpoint one layer; round-trips bit-exactly."""
    np.savez(path, **layer.state_dict())


def load_layer(path) -> SparseLayer:
    with np.load(path) as data:
        return SparseLayer.from_state(dict(data))


def erdos_renyi_init(
    n_in: int,
    n_out: int,
    epsilon: float = DEFAULT_EPSILON,
    seed: int = 0,
    activation: str = "relu",
    init_scale: float = DEFAULT_INIT_SCALE,
) -> SparseLayer:
    """Random bipartite layer: each edge exists with p = eps*(n_in+n_out)/(n_in*n_out).

    Weights are zero-mean normal with ``init_scale`` standard deviation. A
    draw with zero connections retries with a derived seed a bounded number
    of times before giving up.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError("layer widths must be >= 1")
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    p = min(1.0, epsilon * (n_in + n_out) / (n_in * n_out))
    for attempt in range(_INIT_RETRIES):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), attempt]))
        mask = rng.random(n_in * n_out) < p
        linear = np.flatnonzero(mask)
        if len(linear) > 0:
            weights = rng.normal(0.0, init_scale, size=len(linear))
            return SparseLayer(
                n_in,
                n_out,
                linear // n_out,
                linear % n_out,
                weights,
                np.zeros(n_out),
                activation,
                epsilon,
            )
    raise DegenerateLayerError(
        f"no connections after {_INIT_RETRIES} draws (p={p:.3g}, {n_in}x{n_out})"
    )


def sgd_step(layer: SparseLayer, grads, learning_rate: float) -> SparseLayer:
    """Plain gradient step on connection weights and biases, in place."""
    weight_grads, bias_grads = grads
    if len(weight_grads) != layer.connection_count:
        raise ShapeMismatchError("weight gradients do not align with connections")
    layer._dense[layer.in_idx, layer.out_idx] -= learning_rate * np.asarray(
        weight_grads, dtype=np.float64
    )
    layer.bias -= learning_rate * np.asarray(bias_grads, dtype=np.float64)
    return layer


def evolve(layer: SparseLayer, policy: EvolutionPolicy, seed: int) -> SparseLayer:
    """One prune-and-regrow step, in place; conserves the connection count.

    Removes ceil(zeta * count) connections per sign class, taking the
    smallest positive (zero counts as positive) and the closest-to-zero
    negative weights, then grows the same number of connections at uniformly
    random vacant positions with fresh small random weights.
    """
    if layer.connection_count < 2:
        raise ValueError("evolve needs at least 2 connections")
    w = layer.weights
    pos = np.flatnonzero(w >= 0.0)
    neg = np.flatnonzero(w < 0.0)
    k_pos = int(np.ceil(policy.zeta * len(pos))) if len(pos) else 0
    k_neg = int(np.ceil(policy.zeta * len(neg))) if len(neg) else 0
    removed = k_pos + k_neg

    total_cells = layer.n_in * layer.n_out
    if removed == 0:
        if layer.connection_count == total_cells:
            raise NoVacantPositionsError("fully connected layer with nothing to remove")
        return layer

    drop = np.concatenate(
        [
            pos[np.argsort(w[pos], kind="stable")[:k_pos]],
            neg[np.argsort(-w[neg], kind="stable")[:k_neg]],
        ]
    )
    keep = np.ones(layer.connection_count, dtype=bool)
    keep[drop] = False

    kept_linear = (layer.in_idx * layer.n_out + layer.out_idx)[keep]
    vacant = np.setdiff1d(np.arange(total_cells, dtype=np.int64), kept_linear)

    rng = np.random.default_rng(seed)
    new_linear = rng.choice(vacant, size=removed, replace=False)
    new_weights = rng.normal(0.0, policy.regrow_init_scale, size=removed)

    in_idx = np.concatenate([layer.in_idx[keep], new_linear // layer.n_out])
    out_idx = np.concatenate([layer.out_idx[keep], new_linear % layer.n_out])
    weights = np.concatenate([w[keep], new_weights])

    layer._set_connections(in_idx, out_idx, weights)
    layer._cache = None
    assert layer.connection_count == len(keep)
    return layer
