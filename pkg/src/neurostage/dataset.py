"""Corpus ingestion, class balancing, patient-level splits and feature CSVs.

A *scan* is one acquisition identified by (patient_id, session_id) and
owns all of its slices; a patient may have several scans.  Every split
here partitions patients, never scans or slices, so no subject leaks
across partitions.
"""

from __future__ import annotations

import csv
import logging
import os
import re
from dataclasses import dataclass

import numpy as np

from .imaging import load_gray
from .labels import ClassLabel
from .segmentation import FeatureRecord, SegmentationConfig, brain_loss_fraction

log = logging.getLogger(__name__)

# Matches `<patient>_<session>_<layer>.pgm` (the canonical naming used by
# the preprocessing stage and the phantom generator).  Corpora with other
# conventions supply their own pattern with the same named groups, e.g.
# r"^(?P<patient>OAS\d+_\d+)_(?P<session>MR\d+)_mpr-\d+_(?P<layer>\d+)\.pgm$"
# for OASIS-style exports.
DEFAULT_FILENAME_PATTERN = r"^(?P<patient>[A-Za-z0-9-]+)_(?P<session>[A-Za-z0-9-]+)_(?P<layer>\d+)\.pgm$"

DEFAULT_WINDOW = (100, 160)


@dataclass(frozen=True)
class SliceRef:
    """One slice file plus its parsed identity and label."""

    path: str
    patient_id: str
    session_id: str
    layer_index: int
    label: ClassLabel

    @property
    def scan_id(self) -> tuple[str, str]:
        return (self.patient_id, self.session_id)


@dataclass(frozen=True)
class SplitSpec:
    """Partition fractions (by patient) plus the shuffle seed."""

    fractions: tuple[float, ...]
    seed: int = 0

    def __post_init__(self):
        if any(f < 0 for f in self.fractions):
            raise ValueError("fractions must be non-negative")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got {sum(self.fractions)}")


def ingest(root, pattern=DEFAULT_FILENAME_PATTERN, window=DEFAULT_WINDOW, strict=False):
    """Walk a labelled corpus and return in-window slice refs, path-sorted.

    ``root`` holds one subdirectory per class token; filenames encode
    patient, session and layer per ``pattern`` (named groups).  Files
    outside the layer window are skipped with a logged count; unparsable
    names are reported (fatal only in strict mode).
    """
    if not os.path.isdir(root):
        raise FileNotFoundError(f"dataset root {root!r} is not a directory")
    rx = re.compile(pattern)
    lo, hi = window
    refs = []
    skipped_window = 0
    bad_names = 0
    for entry in sorted(os.listdir(root)):
        class_dir = os.path.join(root, entry)
        if not os.path.isdir(class_dir):
            continue
        label = ClassLabel.from_token(entry)  # unknown class directory -> ValueError
        for name in sorted(os.listdir(class_dir)):
            m = rx.match(name)
            if m is None:
                bad_names += 1
                if strict:
                    raise ValueError(f"unparsable filename {name!r} under {class_dir}")
                log.warning("skipping unparsable filename %s", os.path.join(entry, name))
                continue
            layer = int(m.group("layer"))
            if not lo <= layer <= hi:
                skipped_window += 1
                continue
            refs.append(
                SliceRef(
                    path=os.path.join(class_dir, name),
                    patient_id=m.group("patient"),
                    session_id=m.group("session"),
                    layer_index=layer,
                    label=label,
                )
            )
    if skipped_window:
        log.info("ingest: skipped %d slices outside layers %d-%d", skipped_window, lo, hi)
    if bad_names:
        log.info("ingest: skipped %d files with unparsable names", bad_names)
    refs.sort(key=lambda r: r.path)
    return refs


def _scan_groups(refs):
    groups: dict[tuple[str, str], list[SliceRef]] = {}
    for ref in refs:
        groups.setdefault(ref.scan_id, []).append(ref)
    return groups


# Published scan-count targets the balancing rule reproduces when the
# corpus is large enough: 311 demented vs 308 non-demented for detection,
# 308:225:82 across non/verymild/mild for classification.
DETECTION_TARGET = {"dem": 311, "non": 308}
CLASSIFICATION_TARGET = {
    ClassLabel.NON_DEMENTED: 308,
    ClassLabel.VERY_MILD: 225,
    ClassLabel.MILD: 82,
}


def balance(refs, task, seed=0):
    """Subsample non-demented *scans* to the task's target ratio.

    Only the non-demented class is ever reduced; demented scans are all
    kept.  On corpora smaller than the published counts the target scales
    proportionally to the limiting demented class.  Classification mode
    also drops moderate-stage scans (excluded from that task).
    """
    if task not in ("detection", "classification"):
        raise ValueError(f"task must be 'detection' or 'classification', got {task!r}")
    if task == "classification":
        dropped = [r for r in refs if r.label is ClassLabel.MODERATE]
        if dropped:
            log.info("balance: dropped %d moderate-stage slices (classification)", len(dropped))
        refs = [r for r in refs if r.label is not ClassLabel.MODERATE]

    groups = _scan_groups(refs)
    non_scans = sorted(sid for sid, g in groups.items() if not g[0].label.is_demented)
    if task == "detection":
        demented = sum(1 for sid, g in groups.items() if g[0].label.is_demented)
        scale = demented / DETECTION_TARGET["dem"]
        target = int(round(DETECTION_TARGET["non"] * scale))
    else:
        counts = {lbl: 0 for lbl in CLASSIFICATION_TARGET}
        for sid, g in groups.items():
            counts[g[0].label] += 1
        scale = min(
            counts[ClassLabel.VERY_MILD] / CLASSIFICATION_TARGET[ClassLabel.VERY_MILD],
            counts[ClassLabel.MILD] / CLASSIFICATION_TARGET[ClassLabel.MILD],
        )
        target = int(round(CLASSIFICATION_TARGET[ClassLabel.NON_DEMENTED] * scale))
    keep_n = min(len(non_scans), target)
    if keep_n == len(non_scans):
        return list(refs)
    rng = np.random.default_rng(seed)
    kept = set(tuple(non_scans[i]) for i in rng.permutation(len(non_scans))[:keep_n])
    out = [r for r in refs if r.label.is_demented or r.scan_id in kept]
    log.info("balance(%s): kept %d of %d non-demented scans", task, keep_n, len(non_scans))
    return out


def split_by_patient(refs, spec: SplitSpec):
    """Partition patients per ``spec`` and carry their slices along.

    Patient counts per partition come from largest-remainder rounding of
    the fractions; assignment is a seeded shuffle of the sorted patient
    list, so results are deterministic per seed.  A partition that would
    receive zero patients is an error.
    """
    patients = sorted({r.patient_id for r in refs})
    n = len(patients)
    quotas = [f * n for f in spec.fractions]
    counts = [int(q) for q in quotas]
    remainders = sorted(
        range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i)
    )
    for i in remainders[: n - sum(counts)]:
        counts[i] += 1
    if any(c == 0 for c in counts):
        raise ValueError(
            f"partition would receive zero patients ({n} patients, fractions {spec.fractions})"
        )
    rng = np.random.default_rng(spec.seed)
    order = [patients[i] for i in rng.permutation(n)]
    parts = []
    start = 0
    for c in counts:
        chosen = set(order[start : start + c])
        parts.append([r for r in refs if r.patient_id in chosen])
        start += c
    return parts


def filter_training_slices(refs, min_loss, config: SegmentationConfig):
    """Drop demented-labelled slices whose brain-loss fraction is below
    ``min_loss``.

    Non-demented slices always pass through, and callers never apply this
    to test partitions (test scans stay untouched so every layer gets a
    prediction).
    """
    if min_loss <= 0:
        return list(refs)
    kept = []
    removed = 0
    for ref in refs:
        if not ref.label.is_demented:
            kept.append(ref)
            continue
        loss = brain_loss_fraction(load_gray(ref.path), config)
        if loss >= min_loss:
            kept.append(ref)
        else:
            removed += 1
    if removed:
        log.info("slice filter: removed %d demented slices below loss %.3f", removed, min_loss)
    return kept


FEATURE_HEADER = [
    "id",
    "patient",
    "session",
    "layer",
    "label",
    "area_total",
    "area_csf",
    "area_segmented",
    "crop_w",
    "crop_h",
]


def write_features(path, records) -> None:
    """Write feature records as CSV (schema ``FEATURE_HEADER``), floats
    with 9 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(FEATURE_HEADER)
        for i, rec in enumerate(records):
            writer.writerow(
                [
                    i,
                    rec.patient_id,
                    rec.session_id,
                    rec.layer_index,
                    rec.label.token,
                    f"{rec.area_total:.9g}",
                    f"{rec.area_csf:.9g}",
                    f"{rec.area_segmented:.9g}",
                    rec.crop_w,
                    rec.crop_h,
                ]
            )


def read_features(path):
    """Read a feature CSV back into records; malformed rows name the line."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != FEATURE_HEADER:
            raise ValueError(f"{path}: unexpected feature CSV header {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(FEATURE_HEADER):
                raise ValueError(
                    f"{path}: row {lineno} has {len(row)} columns, expected {len(FEATURE_HEADER)}"
                )
            try:
                records.append(
                    FeatureRecord(
                        patient_id=row[1],
                        session_id=row[2],
                        layer_index=int(row[3]),
                        label=ClassLabel.from_token(row[4]),
                        area_total=float(row[5]),
                        area_csf=float(row[6]),
                        area_segmented=float(row[7]),
                        crop_w=int(row[8]),
                        crop_h=int(row[9]),
                    )
                )
            except ValueError as exc:
                raise ValueError(f"{path}: row {lineno}: {exc}") from None
    return records
