"""
SVG line charts of metric trajectories.

One figure per metric, one series per method (or run tag), the mean over
seeds drawn as a line with a shaded ±1 standard deviation band. Output bytes
depend only on the input CSVs.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib as mpl  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from .errors import DataError  # noqa: E402
from .metrics import MetricsRecord, read_metrics_csv  # noqa: E402

logger = logging.getLogger(__name__)

PANELS = {
    "bleu_tgt": "Task BLEU (target)",
    "bleu_pvt": "Grounding BLEU (pivot)",
    "nll": "LM NLL of generated pivots",
    "real_nll": "RealNLL of gold pivots",
    "grad_cos_ma100": "Gradient cosine (moving average)",
}

STYLE = {
    "svg.hashsalt": "driftlab",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
}


def series_stats(runs: Sequence[Sequence[MetricsRecord]], metric: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Mean and population standard deviation across seeds at every logged step.

    Steps where no seed logged a value are dropped.
    """
    by_step: dict[int, list[float]] = {}
    for records in runs:
        for record in records:
            value = getattr(record, metric)
            if value is not None:
                by_step.setdefault(record.step, []).append(float(value))
    steps = np.array(sorted(by_step), dtype=np.float64)
    means = np.array([np.mean(by_step[int(s)]) for s in steps])
    stds = np.array([np.std(by_step[int(s)]) for s in steps])
    return steps, means, stds


def _group(csv_paths: Sequence[Path], labels: Optional[Mapping[Path, str]]) -> dict[str, list[list[MetricsRecord]]]:
    groups: dict[str, list[list[MetricsRecord]]] = {}
    for path in csv_paths:
        records = read_metrics_csv(path)
        if not records:
            raise DataError(f"{path}: no metric rows")
        label = labels[path] if labels and path in labels else records[0].method
        groups.setdefault(label, []).append(records)
    return groups


def plot_svg(
    csv_paths: Sequence[str | Path],
    out_dir: str | Path,
    metrics: Sequence[str] = tuple(PANELS),
    labels: Optional[Mapping[str | Path, str]] = None,
    title: Optional[str] = None,
) -> list[Path]:
    """
    Write one ``<metric>.svg`` per metric into ``out_dir``.

    Args:
        csv_paths: metrics.csv files sharing the metrics schema
        metrics: metric columns to draw
        labels: optional series label per CSV path (default: the method column)
        title: optional prefix for the figure titles

    Raises:
        DataError: a CSV does not follow the schema or a metric is unknown
    """
    if not csv_paths:
        raise DataError("no metrics files to plot")
    unknown = [m for m in metrics if m not in PANELS and m != "grad_cos_raw"]
    if unknown:
        raise DataError(f"unknown metrics {unknown}")
    paths = [Path(p) for p in csv_paths]
    labels = {Path(k): v for k, v in labels.items()} if labels else None
    groups = _group(paths, labels)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    written = []
    with mpl.rc_context(STYLE):
        for metric in metrics:
            fig = Figure(figsize=(5.0, 3.2))
            ax = fig.add_subplot()
            for color_index, (label, runs) in enumerate(sorted(groups.items())):
                steps, means, stds = series_stats(runs, metric)
                if steps.size == 0:
                    continue
                color = f"C{color_index % 10}"
                ax.plot(steps, means, color=color, label=f"{label} (n={len(runs)})")
                ax.fill_between(steps, means - stds, means + stds, color=color, alpha=0.2, linewidth=0)
            heading = PANELS.get(metric, metric)
            ax.set_title(f"{title}: {heading}" if title else heading)
            ax.set_xlabel("interactive steps")
            ax.set_ylabel(metric)
            if ax.lines:
                ax.legend(loc="best", frameon=False)
            path = out_dir / f"{metric}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            written.append(path)
            logger.debug(f"wrote {path}")
    return written
