"""Independent reference implementations used to check the production code.

These stay deliberately naive (dense matrices, explicit loops, central
differences) so they cannot share a bug with the paths they verify.
"""

from __future__ import annotations

import numpy as np


def dense_forward(w, bias, x, activation):
    """Plain dense-matrix forward: act(x @ W + b)."""
    z = x @ w + bias
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if activation == "identity":
        return z
    raise ValueError(activation)


def dense_backward(w, bias, x, activation, grad_out):
    """Dense-matrix backward pass. Returns (grad_in, grad_w, grad_bias)."""
    z = x @ w + bias
    if activation == "relu":
        dact = (z > 0.0).astype(float)
    elif activation == "sigmoid":
        s = 1.0 / (1.0 + np.exp(-z))
        dact = s * (1.0 - s)
    elif activation == "identity":
        dact = np.ones_like(z)
    else:
        raise ValueError(activation)
    delta = grad_out * dact
    return delta @ w.T, x.T @ delta, delta.sum(axis=0)


def central_difference(f, params: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar f at params (flattened)."""
    grad = np.empty_like(params, dtype=np.float64)
    flat = params.ravel()
    gflat = grad.ravel()
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        f_plus = f()
        flat[k] = orig - h
        f_minus = f()
        flat[k] = orig
        gflat[k] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_gradient_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6):
    """Worst per-parameter relative error, with a floor so that parameters
    whose true gradient is ~0 compare absolutely."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def naive_conv1d(x, kernel):
    """Nested-loop valid cross-correlation of a 1-D signal with a 1-D kernel."""
    out_len = len(x) - len(kernel) + 1
    out = np.zeros(out_len)
    for t in range(out_len):
        for k in range(len(kernel)):
            out[t] += x[t + k] * kernel[k]
    return out


def confusion_metrics(probs, labels, threshold=0.5):
    """Loop-based confusion-matrix metrics, one dict per appliance column."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels, dtype=float)
    results = []
    for i in range(labels.shape[1]):
        tp = fp = fn = tn = 0
        abs_err = 0.0
        for r in range(labels.shape[0]):
            predicted = probs[r, i] >= threshold
            actual = labels[r, i] >= 0.5
            if predicted and actual:
                tp += 1
            elif predicted and not actual:
                fp += 1
            elif not predicted and actual:
                fn += 1
            else:
                tn += 1
            abs_err += abs(probs[r, i] - labels[r, i])
        results.append(
            {
                "mae": abs_err / labels.shape[0],
                "precision": tp / (tp + fp) if tp + fp > 0 else 1.0,
                "recall": tp / (tp + fn) if tp + fn > 0 else 1.0,
                "accuracy": (tp + tn) / labels.shape[0],
            }
        )
    return results


def micro_accuracy(probs, labels, threshold=0.5):
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels, dtype=float)
    hits = 0
    for r in range(labels.shape[0]):
        for i in range(labels.shape[1]):
            hits += (probs[r, i] >= threshold) == (labels[r, i] >= 0.5)
    return hits / labels.size
