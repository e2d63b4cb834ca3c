"""Comparison plots and tables built from training reports.

Rendering is a pure function of the reports: figures go to SVG with a fixed
hash salt and no embedded date, so identical inputs produce byte-identical
files. Every number in the outputs comes straight from a report field.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib
from matplotlib.figure import Figure

from .appliances import APPLIANCE_NAMES
from .errors import IncompleteGridError, InconsistentReportsError
from .training import TrainReport

GRID_KEYS = [(kind, sparse) for kind in ("dnn", "cnn", "rnn") for sparse in (False, True)]
_SVG_SALT = "nilmset"


def _display(model_name: str) -> str:
    if model_name.startswith("set_"):
        return "SET-" + model_name[4:].upper()
    return model_name.upper()


def _model_key(report: TrainReport) -> tuple[str, bool]:
    kind = report.spec["kind"]
    return kind, bool(report.spec["sparse"])


def _ordered(reports: list[TrainReport]) -> list[TrainReport]:
    kinds = ("dnn", "cnn", "rnn")
    return sorted(reports, key=lambda r: (kinds.index(_model_key(r)[0]), _model_key(r)[1]))


@dataclass
class ComparisonTable:
    """Final metrics for every (model kind, sparse flag, appliance) cell."""

    rows: dict[tuple[str, bool, int], dict]

    def ordered_keys(self) -> list[tuple[str, bool, int]]:
        kinds = ("dnn", "cnn", "rnn")
        return sorted(self.rows, key=lambda k: (kinds.index(k[0]), k[1], k[2]))


def build_comparison_table(
    reports: list[TrainReport],
    appliance_names: tuple[str, ...] = APPLIANCE_NAMES,
) -> ComparisonTable:
    """Assemble the full 6-model x 4-appliance grid or fail listing the holes."""
    by_key = {_model_key(r): r for r in reports}
    missing = [f"{_display(('set_' if s else '') + k)}" for k, s in GRID_KEYS if (k, s) not in by_key]
    if missing:
        raise IncompleteGridError(missing)
    rows = {}
    for kind, sparse in GRID_KEYS:
        report = by_key[(kind, sparse)]
        per_appliance = report.final["per_appliance"]
        if len(per_appliance) != len(appliance_names):
            raise IncompleteGridError(
                [f"{_display(report.model_name)}/{name}" for name in appliance_names]
            )
        for i in range(len(appliance_names)):
            rows[(kind, sparse, i)] = {
                "mae": per_appliance[i]["mae"],
                "precision": per_appliance[i]["precision"],
                "recall": per_appliance[i]["recall"],
                "accuracy": per_appliance[i]["accuracy"],
            }
    return ComparisonTable(rows=rows)


def render_table(
    reports: list[TrainReport],
    out_dir,
    appliance_names: tuple[str, ...] = APPLIANCE_NAMES,
) -> ComparisonTable:
    """Write comparison.csv and comparison.txt; returns the table."""
    table = build_comparison_table(reports, appliance_names)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    with open(out_dir / "comparison.csv", "w", encoding="ascii") as fh:
        fh.write("model,appliance,mae,precision,recall,accuracy\n")
        for kind, sparse, i in table.ordered_keys():
            cell = table.rows[(kind, sparse, i)]
            model = _display(("set_" if sparse else "") + kind)
            fh.write(
                f"{model},{appliance_names[i]},{cell['mae']!r},{cell['precision']!r},"
                f"{cell['recall']!r},{cell['accuracy']!r}\n"
            )

    header = ["model", "appliance", "mae", "precision", "recall", "accuracy"]
    lines = [header]
    for kind, sparse, i in table.ordered_keys():
        cell = table.rows[(kind, sparse, i)]
        lines.append(
            [
                _display(("set_" if sparse else "") + kind),
                appliance_names[i],
                f"{cell['mae']:.4f}",
                f"{cell['precision']:.4f}",
                f"{cell['recall']:.4f}",
                f"{cell['accuracy']:.4f}",
            ]
        )
    widths = [max(len(row[c]) for row in lines) for c in range(len(header))]
    with open(out_dir / "comparison.txt", "w", encoding="ascii") as fh:
        for r, row in enumerate(lines):
            fh.write("  ".join(cell.ljust(widths[c]) for c, cell in enumerate(row)).rstrip())
            fh.write("\n")
            if r == 0:
                fh.write("  ".join("-" * widths[c] for c in range(len(header))))
                fh.write("\n")
    return table


def _check_consistent(reports: list[TrainReport]) -> int:
    if not reports:
        raise InconsistentReportsError("no reports to render")
    epochs = {r.epochs_run for r in reports}
    if len(epochs) != 1 or 0 in epochs:
        raise InconsistentReportsError(f"reports disagree on epoch counts: {sorted(epochs)}")
    return epochs.pop()


def curves_figure(
    reports: list[TrainReport],
    appliance_index: int,
    appliance_name: str,
) -> Figure:
    """Loss and accuracy panels for one appliance, one series per model."""
    epochs = _check_consistent(reports)
    x = range(1, epochs + 1)
    fig = Figure(figsize=(9.0, 3.6))
    ax_loss, ax_acc = fig.subplots(1, 2)
    for report in _ordered(reports):
        label = _display(report.model_name)
        ax_loss.plot(x, [row[appliance_index] for row in report.test_appliance_loss],
                     label=label, linewidth=1.2, marker=".", markersize=3)
        ax_acc.plot(x, [row[appliance_index] for row in report.test_appliance_accuracy],
                    label=label, linewidth=1.2, marker=".", markersize=3)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("test loss")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("test accuracy")
    ax_loss.legend(fontsize=7)
    ax_acc.legend(fontsize=7)
    ax_loss.margins(x=0.05, y=0.05)
    ax_acc.margins(x=0.05, y=0.05)
    fig.suptitle(appliance_name)
    fig.tight_layout()
    return fig


def render_curves(
    reports: list[TrainReport],
    out_dir,
    appliance_names: tuple[str, ...] = APPLIANCE_NAMES,
) -> dict:
    """Write curves_<appliance>.svg per appliance plus the underlying curves.csv."""
    _check_consistent(reports)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    svg_paths = []
    with matplotlib.rc_context({"svg.hashsalt": _SVG_SALT}):
        for i, name in enumerate(appliance_names):
            fig = curves_figure(reports, i, name)
            path = out_dir / f"curves_{name}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            svg_paths.append(path)

    csv_path = out_dir / "curves.csv"
    with open(csv_path, "w", encoding="ascii") as fh:
        fh.write("model,appliance,epoch,test_loss,test_accuracy\n")
        for report in _ordered(reports):
            for i, name in enumerate(appliance_names):
                for epoch in range(report.epochs_run):
                    fh.write(
                        f"{report.model_name},{name},{epoch + 1},"
                        f"{report.test_appliance_loss[epoch][i]!r},"
                        f"{report.test_appliance_accuracy[epoch][i]!r}\n"
                    )
    return {"svg": svg_paths, "csv": csv_path}
