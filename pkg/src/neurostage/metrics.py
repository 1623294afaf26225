"""Classification metrics, confusion matrices, and heatmap emission."""

from __future__ import annotations

import csv
import io
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .imaging import GrayImage, save_gray


@dataclass(frozen=True)
class ClassScores:
    label: object
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    per_class: tuple
    weighted_f1: float
    n_samples: int

    def lines(self):
        out = [f"samples {self.n_samples}", f"accuracy {self.accuracy:.6f}"]
        for s in self.per_class:
            out.append(
                f"class {s.label}: precision {s.precision:.6f} recall {s.recall:.6f} "
                f"f1 {s.f1:.6f} support {s.support}"
            )
        out.append(f"weighted_f1 {self.weighted_f1:.6f}")
        return out


@dataclass(frozen=True)
class ConfusionMatrix:
    classes: tuple
    cells: np.ndarray  # rows = truth, columns = prediction

    @property
    def total(self):
        return int(self.cells.sum())

    @property
    def accuracy(self):
        return float(np.trace(self.cells)) / self.total if self.total else 0.0


def compute_metrics(truths, predictions, classes):
    """Standard accuracy / per-class precision, recall, F1 / weighted F1.

    Zero-denominator precision or recall is defined as 0; classes absent
    from the truth contribute zero weight to the weighted F1.
    """
    if len(truths) != len(predictions):
        raise ValueError(f"{len(truths)} truths vs {len(predictions)} predictions")
    classes = list(classes)
    index = {c: i for i, c in enumerate(classes)}
    cells = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(truths, predictions):
        if t not in index:
            raise ValueError(f"unknown truth label {t!r}")
        if p not in index:
            raise ValueError(f"unknown predicted label {p!r}")
        cells[index[t], index[p]] += 1

    total = int(cells.sum())
    accuracy = float(np.trace(cells)) / total if total else 0.0
    per_class = []
    weighted = 0.0
    for i, label in enumerate(classes):
        tp = float(cells[i, i])
        support = int(cells[i].sum())
        pred_count = float(cells[:, i].sum())
        precision = tp / pred_count if pred_count else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class.append(ClassScores(label, precision, recall, f1, support))
        weighted += support * f1
    weighted_f1 = weighted / total if total else 0.0
    report = MetricsReport(
        accuracy=accuracy,
        per_class=tuple(per_class),
        weighted_f1=weighted_f1,
        n_samples=total,
    )
    return report, ConfusionMatrix(classes=tuple(classes), cells=cells)


def emit_heatmap(matrix: ConfusionMatrix, path, cell_px=32) -> None:
    """Write the confusion matrix as a PGM heatmap plus a raw-count CSV.

    Cell intensity scales linearly with count (max cell -> 255; an
    all-zero matrix renders black).  The CSV sidecar sits next to the
    image with extension ``.csv``; bytes are deterministic for identical
    input.
    """
    cells = matrix.cells
    if cells.size == 0:
        raise ValueError("empty confusion matrix")
    peak = max(1, int(cells.max()))
    levels = np.floor(cells * (255.0 / peak) + 0.5).astype(np.uint8)
    raster = np.repeat(np.repeat(levels, cell_px, axis=0), cell_px, axis=1)
    _atomic(path, lambda tmp: save_gray(GrayImage(raster), tmp))

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["truth"] + [str(c) for c in matrix.classes])
    for label, row in zip(matrix.classes, cells):
        writer.writerow([str(label)] + [int(v) for v in row])
    base = str(path)
    sidecar = base[: base.rfind(".")] + ".csv" if "." in os.path.basename(base) else base + ".csv"
    _atomic(sidecar, lambda tmp: open(tmp, "w", newline="", encoding="utf-8").write(buf.getvalue()))


def _atomic(path, write_fn):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    os.close(fd)
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_heatmap_counts(csv_path):
    """Read back the sidecar CSV written by :func:`emit_heatmap`."""
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        classes = tuple(header[1:])
        rows = []
        for row in reader:
            rows.append([int(v) for v in row[1:]])
    return ConfusionMatrix(classes=classes, cells=np.asarray(rows, dtype=np.int64))
