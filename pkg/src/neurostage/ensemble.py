"""Stacked per-scan model: network slice votes feeding a forest head.

Each scan is summarized as the vector of per-class slice-prediction
counts; a Random Forest trained on those vectors makes the scan-level
call.  The head never sees per-slice data, only the count vectors, so
its feature dimension equals the class count.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import forest
from .cnn import INPUT_SIZE, LayerStack, classes_for_head, predict_slice
from .imaging import load_gray, resize_bilinear
from .labels import ClassLabel, detection_token
from .metrics import compute_metrics

log = logging.getLogger(__name__)

STACK_HEADER_CLASSIFICATION = ["patient", "session", "count_non", "count_verymild", "count_mild", "label"]
STACK_HEADER_DETECTION = ["patient", "session", "count_non", "count_dem", "label"]


@dataclass(frozen=True)
class ScanCountVector:
    """Per-scan tally of slice predictions plus the ground truth."""

    patient_id: str
    session_id: str
    counts: tuple
    n_slices: int
    truth: ClassLabel

    def __post_init__(self):
        if sum(self.counts) != self.n_slices:
            raise ValueError(f"counts {self.counts} do not sum to n_slices={self.n_slices}")
        if any(c < 0 for c in self.counts):
            raise ValueError("negative count")


def aggregate_scan(net: LayerStack, slices, loader=load_gray) -> ScanCountVector:
    """Tally eval-mode slice predictions for one scan.

    All refs must share (patient, session); slices are aggregated exactly
    as stored (no filtering), resized to the network input.  ``n_slices``
    records how many were actually present.
    """
    if not slices:
        raise ValueError("empty slice list")
    scan_id = slices[0].scan_id
    truth = slices[0].label
    n_classes = net.n_classes
    counts = [0] * n_classes
    for ref in slices:
        if ref.scan_id != scan_id:
            raise ValueError(f"mixed scan identities {scan_id} vs {ref.scan_id}")
        if ref.label is not truth:
            raise ValueError(f"mixed labels within scan {scan_id}")
        img = loader(ref.path)
        if img.height != INPUT_SIZE or img.width != INPUT_SIZE:
            img = resize_bilinear(img, INPUT_SIZE, INPUT_SIZE)
        idx, _ = predict_slice(net, img)
        counts[idx] += 1
    return ScanCountVector(
        patient_id=scan_id[0],
        session_id=scan_id[1],
        counts=tuple(counts),
        n_slices=len(slices),
        truth=truth,
    )


def aggregate_corpus(net: LayerStack, refs, loader=load_gray):
    """Group refs by scan and aggregate each, in scan-identity order."""
    groups = {}
    for ref in refs:
        groups.setdefault(ref.scan_id, []).append(ref)
    return [aggregate_scan(net, groups[sid], loader=loader) for sid in sorted(groups)]


def _stack_label(scan: ScanCountVector, task):
    if task == "detection":
        return detection_token(scan.truth)
    return scan.truth.token


def build_stack_dataset(scans, task):
    """Rows for the stack head: count vectors plus truth labels.

    Detection merges every demented stage into ``dem``; classification
    keeps three classes and excludes moderate-stage scans with a logged
    count.  Rows come out in scan-identity order.
    """
    if task not in ("detection", "classification"):
        raise ValueError(f"task must be 'detection' or 'classification', got {task!r}")
    want = 2 if task == "detection" else 3
    rows = []
    excluded = 0
    for scan in sorted(scans, key=lambda s: (s.patient_id, s.session_id)):
        if len(scan.counts) != want:
            raise ValueError(
                f"scan {scan.patient_id}/{scan.session_id} has {len(scan.counts)} counts; "
                f"{task} needs {want}"
            )
        if task == "classification" and scan.truth is ClassLabel.MODERATE:
            excluded += 1
            continue
        rows.append(
            [scan.patient_id, scan.session_id, *scan.counts, _stack_label(scan, task)]
        )
    if excluded:
        log.info("stack dataset: excluded %d moderate-stage scans", excluded)
    return rows


def write_stack_csv(path, scans, task) -> None:
    header = STACK_HEADER_DETECTION if task == "detection" else STACK_HEADER_CLASSIFICATION
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(build_stack_dataset(scans, task))


def read_stack_csv(path):
    """Returns (scan_ids, count matrix, labels, task)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header == STACK_HEADER_DETECTION:
            task = "detection"
        elif header == STACK_HEADER_CLASSIFICATION:
            task = "classification"
        else:
            raise ValueError(f"{path}: unexpected stack CSV header {header}")
        n_counts = len(header) - 3
        ids, x, y = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}: row {lineno} has {len(row)} columns")
            ids.append((row[0], row[1]))
            x.append([int(v) for v in row[2 : 2 + n_counts]])
            y.append(row[-1])
    return ids, np.asarray(x, dtype=np.float64), y, task


def train_stack(stack_csv, cfg: forest.ForestConfig, split_seed=0, train_fraction=0.7):
    """Split scans 70/30 (train/test), fit the forest head, report metrics.

    Returns (model, report, confusion, n_train, n_test).
    """
    ids, x, y, task = read_stack_csv(stack_csv)
    classes = ("non", "dem") if task == "detection" else ("non", "verymild", "mild")
    present = [c for c in classes if c in y]
    if len(present) < 2:
        raise ValueError(f"stack dataset has fewer than 2 classes: {sorted(set(y))}")
    n = len(ids)
    rng = np.random.default_rng(split_seed)
    order = rng.permutation(n)
    n_train = int(round(train_fraction * n))
    train_idx, test_idx = order[:n_train], order[n_train:]
    if len(test_idx) == 0 or len(train_idx) == 0:
        raise ValueError(f"degenerate stack split with {n} scans")
    for part_name, part in (("train", train_idx), ("test", test_idx)):
        got = {y[i] for i in part}
        missing = [c for c in present if c not in got]
        if missing:
            raise ValueError(f"stack {part_name} split lost class(es) {missing}")
    model = forest.fit(x[train_idx], [y[i] for i in train_idx], cfg, classes=list(classes))
    preds = [forest.predict(model, x[i]) for i in test_idx]
    truths = [y[i] for i in test_idx]
    report, confusion = compute_metrics(truths, preds, list(classes))
    return model, report, confusion, len(train_idx), len(test_idx)
