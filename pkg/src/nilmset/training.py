"""Training loop, evaluation metrics, and the six-model experiment grid.

Features are standardized per column with train-split statistics before they
reach a network. Sparse variants get one prune-and-regrow step per epoch,
after that epoch's metrics are recorded; the topology is left untouched after
the final epoch so the reported model is the trained one.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DivergedLossError
from .models import ModelSpec, Network, build
from .sparse import EvolutionPolicy, evolve
from .synthesis import DatasetView, SyntheticDataset, split

DEFAULT_EPOCHS = 50
DEFAULT_BATCH_SIZE = 64
DEFAULT_LEARNING_RATE = 0.01
PREDICT_BATCH = 256
_EPS = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    learning_rate: float = DEFAULT_LEARNING_RATE
    seed: int = 0
    evolution: EvolutionPolicy | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


@dataclass
class ApplianceMetrics:
    mae: float
    precision: float
    recall: float
    accuracy: float


@dataclass
class EvalMetrics:
    loss: float
    accuracy: float
    exact_match: float
    per_appliance: list[ApplianceMetrics]


@dataclass
class TrainReport:
    model_name: str
    spec: dict
    config: dict
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    test_loss: list[float] = field(default_factory=list)
    test_accuracy: list[float] = field(default_factory=list)
    test_appliance_loss: list[list[float]] = field(default_factory=list)
    test_appliance_accuracy: list[list[float]] = field(default_factory=list)
    connection_counts: dict[str, list[int]] = field(default_factory=dict)
    final: dict = field(default_factory=dict)
    epoch_seconds: list[float] = field(default_factory=list)

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {
            "model_name": self.model_name,
            "spec": self.spec,
            "config": self.config,
            "train_loss": self.train_loss,
            "train_accuracy": self.train_accuracy,
            "test_loss": self.test_loss,
            "test_accuracy": self.test_accuracy,
            "test_appliance_loss": self.test_appliance_loss,
            "test_appliance_accuracy": self.test_appliance_accuracy,
            "connection_counts": self.connection_counts,
            "final": self.final,
        }
        if include_timing:
            out["epoch_seconds"] = self.epoch_seconds
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TrainReport":
        return cls(
            model_name=d["model_name"],
            spec=d["spec"],
            config=d["config"],
            train_loss=d["train_loss"],
            train_accuracy=d["train_accuracy"],
            test_loss=d["test_loss"],
            test_accuracy=d["test_accuracy"],
            test_appliance_loss=d["test_appliance_loss"],
            test_appliance_accuracy=d["test_appliance_accuracy"],
            connection_counts=d["connection_counts"],
            final=d["final"],
            epoch_seconds=d.get("epoch_seconds", []),
        )


def save_report(report: TrainReport, path) -> None:
    """Deterministic report JSON; wall-clock timing is kept out of it."""
    with open(path, "w", encoding="ascii") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_report(path) -> TrainReport:
    with open(path, "r", encoding="ascii") as fh:
        return TrainReport.from_dict(json.load(fh))


def save_curves_csv(report: TrainReport, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("epoch,train_loss,train_acc,test_loss,test_acc\n")
        rows = zip(report.train_loss, report.train_accuracy, report.test_loss, report.test_accuracy)
        for epoch, (tl, ta, vl, va) in enumerate(rows):
            fh.write(f"{epoch},{tl!r},{ta!r},{vl!r},{va!r}\n")


# ---------------------------------------------------------------------------
# loss and metrics


def bce_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Binary cross-entropy summed over outputs, averaged over rows."""
    p = np.clip(probs, _EPS, 1.0 - _EPS)
    per_cell = -(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p))
    return float(per_cell.sum(axis=1).mean())


def bce_output_delta(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of the mean BCE with respect to the output pre-activations
    (sigmoid derivative folded in)."""
    return (probs - labels) / probs.shape[0]


def compute_scaler(view: DatasetView) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and std of the view; zero-variance columns get std 1."""
    mean = view.features.mean(axis=0)
    std = view.features.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return mean, std


def apply_scaler(features: np.ndarray, scaler) -> np.ndarray:
    mean, std = scaler
    return (features - mean) / std


def predict_probs(network: Network, features: np.ndarray, batch_size: int = PREDICT_BATCH) -> np.ndarray:
    out = np.empty((features.shape[0], network.spec.output_dim))
    for start in range(0, features.shape[0], batch_size):
        stop = start + batch_size
        out[start:stop] = network.forward(features[start:stop], mode="eval")
    return out


def metrics_from_probs(probs: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> EvalMetrics:
    """Multi-label metrics; a probability exactly at the threshold counts
    positive. Precision and recall fall back to 1.0 on empty denominators."""
    labels = np.asarray(labels, dtype=np.float64)
    predicted = probs >= threshold
    truth = labels >= 0.5
    per_appliance = []
    for i in range(labels.shape[1]):
        yhat, y = predicted[:, i], truth[:, i]
        tp = int(np.sum(yhat & y))
        fp = int(np.sum(yhat & ~y))
        fn = int(np.sum(~yhat & y))
        per_appliance.append(
            ApplianceMetrics(
                mae=float(np.mean(np.abs(probs[:, i] - labels[:, i]))),
                precision=tp / (tp + fp) if tp + fp > 0 else 1.0,
                recall=tp / (tp + fn) if tp + fn > 0 else 1.0,
                accuracy=float(np.mean(yhat == y)),
            )
        )
    return EvalMetrics(
        loss=bce_loss(probs, labels),
        accuracy=float(np.mean(predicted == truth)),
        exact_match=float(np.mean(np.all(predicted == truth, axis=1))),
        per_appliance=per_appliance,
    )


def evaluate(network: Network, view: DatasetView, threshold: float = 0.5, scaler=None) -> EvalMetrics:
    """Score a network on a dataset view (standardizing when a scaler is given)."""
    features = apply_scaler(view.features, scaler) if scaler is not None else view.features
    return metrics_from_probs(predict_probs(network, features), view.labels, threshold)


def _appliance_losses(probs: np.ndarray, labels: np.ndarray) -> list[float]:
    p = np.clip(probs, _EPS, 1.0 - _EPS)
    per_cell = -(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p))
    return [float(v) for v in per_cell.mean(axis=0)]


def _final_metrics(metrics: EvalMetrics) -> dict:
    return {
        "accuracy": metrics.accuracy,
        "exact_match": metrics.exact_match,
        "loss": metrics.loss,
        "per_appliance": [vars(m).copy() for m in metrics.per_appliance],
    }


# ---------------------------------------------------------------------------
# training


def train(
    network: Network,
    train_view: DatasetView,
    test_view: DatasetView,
    config: TrainConfig,
) -> TrainReport:
    """Minibatch SGD with per-epoch metric curves.

    Deterministic given the build seed and config.seed. Raises
    DivergedLossError with the partial report if a loss goes non-finite.
    Single-sample tail batches are skipped (batch statistics need >= 2 rows).
    """
    scaler = compute_scaler(train_view)
    x_train = apply_scaler(train_view.features, scaler)
    x_test = apply_scaler(test_view.features, scaler)
    y_train = train_view.labels.astype(np.float64)
    y_test = test_view.labels.astype(np.float64)

    ss = np.random.SeedSequence(config.seed)
    shuffle_ss, evolve_ss = ss.spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    evolve_rng = np.random.default_rng(evolve_ss)

    report = TrainReport(
        model_name=network.spec.name,
        spec=network.spec.to_dict(),
        config=_config_echo(config),
    )
    sparse_layers = network.sparse_layers()
    for idx, layer in enumerate(sparse_layers):
        report.connection_counts[str(idx)] = [layer.connection_count]

    n = len(train_view)
    for epoch in range(config.epochs):
        started = time.perf_counter()
        perm = shuffle_rng.permutation(n)
        seen = 0
        loss_sum = 0.0
        hit_sum = 0.0
        for start in range(0, n, config.batch_size):
            rows = perm[start : start + config.batch_size]
            if len(rows) < 2:
                continue
            xb, yb = x_train[rows], y_train[rows]
            probs = network.forward(xb, mode="train")
            batch_loss = bce_loss(probs, yb)
            if not np.isfinite(batch_loss):
                raise DivergedLossError(
                    f"{network.spec.name}: non-finite loss in epoch {epoch}", report
                )
            loss_sum += batch_loss * len(rows)
            hit_sum += np.sum((probs >= 0.5) == (yb >= 0.5))
            seen += len(rows)
            network.backward_from_output_delta(bce_output_delta(probs, yb))
            network.update(config.learning_rate)
        if seen == 0:
            raise ValueError("train view too small for the batch size")

        test_probs = predict_probs(network, x_test)
        test_metrics = metrics_from_probs(test_probs, y_test)
        # Train-side curves are the running minibatch averages of the epoch.
        report.train_loss.append(loss_sum / seen)
        report.train_accuracy.append(hit_sum / (seen * y_train.shape[1]))
        report.test_loss.append(test_metrics.loss)
        report.test_accuracy.append(test_metrics.accuracy)
        report.test_appliance_loss.append(_appliance_losses(test_probs, y_test))
        report.test_appliance_accuracy.append([m.accuracy for m in test_metrics.per_appliance])
        if not np.isfinite(test_metrics.loss):
            raise DivergedLossError(f"{network.spec.name}: diverged at epoch {epoch}", report)

        # Rewire after recording, and never after the last epoch: the final
        # model must be the trained one, not a freshly perturbed topology.
        if config.evolution is not None and epoch < config.epochs - 1:
            for layer in sparse_layers:
                evolve(layer, config.evolution, seed=int(evolve_rng.integers(2**63)))
        for idx, layer in enumerate(sparse_layers):
            report.connection_counts[str(idx)].append(layer.connection_count)
        report.epoch_seconds.append(time.perf_counter() - started)

    report.final = _final_metrics(metrics_from_probs(predict_probs(network, x_test), y_test))
    return report


def _config_echo(config: TrainConfig) -> dict:
    echo = {
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "learning_rate": config.learning_rate,
        "seed": config.seed,
    }
    if config.evolution is not None:
        echo["evolution"] = {
            "zeta": config.evolution.zeta,
            "regrow_init_scale": config.evolution.regrow_init_scale,
        }
    return echo


def run_experiment_grid(
    dataset: SyntheticDataset,
    specs: list[ModelSpec],
    config: TrainConfig,
    train_fraction: float = 0.8,
) -> list[TrainReport]:
    """Train every spec on one shared split with shared seeds.

    The specs must cover {dnn, cnn, rnn} x {dense, sparse}. Dense and sparse
    variants of the same kind see identical data order because every cell
    derives its streams from config.seed.
    """
    combos = {(s.kind, s.sparse) for s in specs}
    expected = {(k, f) for k in ("dnn", "cnn", "rnn") for f in (False, True)}
    if combos != expected:
        missing = sorted(expected - combos)
        raise ValueError(f"grid specs missing combinations: {missing}")

    train_view, test_view = split(dataset, train_fraction, seed=config.seed)
    policy = config.evolution or EvolutionPolicy()
    reports = []
    for spec in specs:
        cell_config = replace(config, evolution=policy if spec.sparse else None)
        network = build(spec, seed=config.seed)
        reports.append(train(network, train_view, test_view, cell_config))
    return reports
