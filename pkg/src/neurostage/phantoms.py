"""Synthetic ring-and-disk test phantoms.

A phantom mimics a mid-stack slice: a bright ring (the skull) around a
bright disk (tissue), with the annulus between them acting as the fluid
gap.  ``hole_frac`` sets that gap as a fraction of the ring-enclosed
area, which ties the generated classes directly to the measured fluid
fraction.  Used by the test suite, the demo corpus generator, and the
out-of-distribution experiments (tumour variant).
"""

from __future__ import annotations

import math
import os

import numpy as np

from .imaging import GrayImage, save_gray
from .labels import ClassLabel

# hole_frac sampling ranges per stage; disjoint with clear gaps so the
# generated classes are separable by construction.
CLASS_HOLE_RANGES = {
    ClassLabel.NON_DEMENTED: (0.00, 0.05),
    ClassLabel.VERY_MILD: (0.10, 0.20),
    ClassLabel.MILD: (0.30, 0.45),
}


def ring_disk_phantom(
    hole_frac,
    size=200,
    ring_outer=90.0,
    ring_inner=80.0,
    ring_intensity=255,
    disk_intensity=255,
    center=None,
):
    """Render one phantom. ``hole_frac`` in [0, 1) shrinks the inner disk so
    the dark annulus takes that fraction of the ring-enclosed area."""
    if not 0.0 <= hole_frac < 1.0:
        raise ValueError(f"hole_frac must be in [0, 1), got {hole_frac}")
    cy, cx = center if center is not None else ((size - 1) / 2.0, (size - 1) / 2.0)
    disk_r = ring_inner * math.sqrt(1.0 - hole_frac)
    yy, xx = np.mgrid[0:size, 0:size]
    d2 = (yy - cy) ** 2 + (xx - cx) ** 2
    img = np.zeros((size, size), dtype=np.uint8)
    img[(d2 >= ring_inner**2) & (d2 <= ring_outer**2)] = ring_intensity
    img[d2 <= disk_r**2] = disk_intensity
    return GrayImage(img)


def noisy_phantom(rng, hole_frac, size=200):
    """Phantom with jittered geometry, intensity variation and background
    noise, for training-data realism."""
    cy = (size - 1) / 2.0 + rng.uniform(-3, 3)
    cx = (size - 1) / 2.0 + rng.uniform(-3, 3)
    ring_outer = rng.uniform(84, 92)
    ring_inner = ring_outer - rng.uniform(7, 11)
    ring_int = int(rng.integers(200, 256))
    disk_int = int(rng.integers(160, 230))
    base = ring_disk_phantom(
        hole_frac,
        size=size,
        ring_outer=ring_outer,
        ring_inner=ring_inner,
        ring_intensity=ring_int,
        disk_intensity=disk_int,
        center=(cy, cx),
    )
    noise = rng.integers(0, 20, size=(size, size), dtype=np.int16)
    px = np.clip(base.pixels.astype(np.int16) + noise, 0, 255).astype(np.uint8)
    return GrayImage(px)


def tumor_phantom(
    rng,
    hole_frac=None,
    size=200,
    square_side=100,
    square_intensity=230,
    offset=(0, 55),
):
    """Structurally novel variant: a bright square mass stamped over one
    side of the fluid gap, so the slice carries conflicting stage evidence
    while remaining unlike anything in the generated training classes.

    ``hole_frac`` defaults to the mild-stage range (a tumour in an
    atrophied brain); ``offset`` displaces the square centre from the
    image centre in (row, col) pixels.
    """
    if hole_frac is None:
        hole_frac = rng.uniform(*CLASS_HOLE_RANGES[ClassLabel.MILD])
    base = noisy_phantom(rng, hole_frac, size=size)
    r0 = max(0, min(size - square_side, size // 2 + offset[0] - square_side // 2))
    c0 = max(0, min(size - square_side, size // 2 + offset[1] - square_side // 2))
    px = base.pixels.copy()
    px[r0 : r0 + square_side, c0 : c0 + square_side] = square_intensity
    return GrayImage(px)


def generate_corpus(
    root,
    patients_per_class=10,
    scans_per_patient=1,
    slices_per_scan=20,
    seed=0,
    size=200,
    first_layer=100,
):
    """Write a labelled phantom corpus under ``root``.

    Layout matches ingestion expectations: one directory per class token,
    files named ``<patient>_<session>_<layer>.pgm``.  Returns the number
    of slices written.
    """
    rng = np.random.default_rng(seed)
    written = 0
    patient_no = 0
    for label in (ClassLabel.NON_DEMENTED, ClassLabel.VERY_MILD, ClassLabel.MILD):
        lo, hi = CLASS_HOLE_RANGES[label]
        class_dir = os.path.join(root, label.token)
        os.makedirs(class_dir, exist_ok=True)
        for _ in range(patients_per_class):
            patient_no += 1
            pid = f"PT{patient_no:04d}"
            for scan_no in range(1, scans_per_patient + 1):
                sid = f"S{scan_no}"
                for k in range(slices_per_scan):
                    layer = first_layer + k
                    img = noisy_phantom(rng, rng.uniform(lo, hi), size=size)
                    save_gray(img, os.path.join(class_dir, f"{pid}_{sid}_{layer}.pgm"))
                    written += 1
    return written
