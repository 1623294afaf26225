"""Volumetric feature extraction from single slices.

The measurement pipeline: blur, edge-crop to the content box, threshold
into a foreground mask, remove the outside background with a border-seeded
flood fill (which exposes the fluid-filled interior), then isolate the
central tissue region with a second, centre-seeded fill.  Three area
fractions plus the crop dimensions make up the five per-slice features.

Also home to the brain-loss measure used to drop normal-looking slices
from demented training data.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .imaging import (
    BinaryMask,
    GrayImage,
    flood_fill,
    gaussian_blur,
    multiply_contrast,
    threshold,
)
from .labels import ClassLabel


class EmptySliceError(ValueError):
    """No pixel exceeds the background threshold; the slice has no content."""


class SegmentationFailedError(RuntimeError):
    """The centre seed landed on background, so no tissue region was found."""


@dataclass(frozen=True)
class SegmentationConfig:
    """Tunables for the per-slice measurement pipeline.

    ``csf_source`` selects whether the fluid measurement thresholds the
    blurred or the raw crop.  ``min_brain_loss`` is the slice-filter
    cutoff used by the dataset stage (calibrated on synthetic phantoms;
    fractions below it mark a demented-labelled slice as normal-looking).
    """

    threshold: int = 50
    blur_kernel: int = 5
    blur_sigma: float = 1.0
    contrast_factor: float = 8.0
    seed_mode: str = "corners+midpoints"
    csf_source: str = "blurred"
    min_brain_loss: float = 0.10

    def __post_init__(self):
        if not 0 <= self.threshold <= 255:
            raise ValueError(f"threshold must be in [0, 255], got {self.threshold}")
        if self.seed_mode not in ("corners", "corners+midpoints"):
            raise ValueError(f"unknown seed_mode {self.seed_mode!r}")
        if self.csf_source not in ("blurred", "raw"):
            raise ValueError(f"unknown csf_source {self.csf_source!r}")


@dataclass(frozen=True)
class SliceFeatures:
    """The five measured features, area fractions relative to the crop."""

    area_total: float
    area_csf: float
    area_segmented: float
    crop_w: int
    crop_h: int


@dataclass(frozen=True)
class FeatureRecord:
    """Per-slice features plus identity and stage label."""

    patient_id: str
    session_id: str
    layer_index: int
    label: ClassLabel
    area_total: float
    area_csf: float
    area_segmented: float
    crop_w: int
    crop_h: int

    def __post_init__(self):
        for name in ("area_total", "area_csf", "area_segmented"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")
        if self.area_segmented > self.area_total:
            raise ValueError(
                f"area_segmented={self.area_segmented} exceeds area_total={self.area_total}"
            )
        if self.area_csf + self.area_segmented > 1.0 + 1e-9:
            raise ValueError("area_csf + area_segmented exceeds 1")
        if self.crop_w < 1 or self.crop_h < 1:
            raise ValueError("crop dimensions must be positive")

    @classmethod
    def from_features(cls, patient_id, session_id, layer_index, label, features: SliceFeatures):
        return cls(
            patient_id=patient_id,
            session_id=session_id,
            layer_index=layer_index,
            label=label,
            area_total=features.area_total,
            area_csf=features.area_csf,
            area_segmented=features.area_segmented,
            crop_w=features.crop_w,
            crop_h=features.crop_h,
        )


def _sig9(x: float) -> float:
    # Quantize to 9 significant digits so CSV round trips are exact.
    return float(f"{x:.9g}")


def _content_box(pixels, t):
    rows = (pixels > t).any(axis=1)
    cols = (pixels > t).any(axis=0)
    if not rows.any():
        return None
    r_idx = rows.nonzero()[0]
    c_idx = cols.nonzero()[0]
    return int(r_idx[0]), int(r_idx[-1]) + 1, int(c_idx[0]), int(c_idx[-1]) + 1


def edge_crop(image: GrayImage, t) -> tuple[GrayImage, int, int]:
    """Trim border rows/columns whose every pixel is at most ``t``.

    Returns the cropped image with its width and height (features four
    and five).  Raises :class:`EmptySliceError` when nothing exceeds
    ``t``.
    """
    box = _content_box(image.pixels, t)
    if box is None:
        raise EmptySliceError(f"no pixel above threshold {t}; empty slice")
    r0, r1, c0, c1 = box
    cropped = GrayImage(image.pixels[r0:r1, c0:c1])
    return cropped, cropped.width, cropped.height


def _border_seeds(h, w, mode):
    """Border seed pixels: the four corners, plus (for the default mode)
    both floor and ceil midpoints of each border so the seed set is exactly
    symmetric under horizontal/vertical flips."""
    seeds = {(0, 0), (0, w - 1), (h - 1, 0), (h - 1, w - 1)}
    if mode == "corners+midpoints":
        for c in {(w - 1) // 2, w // 2}:
            seeds.add((0, c))
            seeds.add((h - 1, c))
        for r in {(h - 1) // 2, h // 2}:
            seeds.add((r, 0))
            seeds.add((r, w - 1))
    return sorted(seeds)


def _remove_background(mask: BinaryMask, seed_mode) -> BinaryMask:
    """Fill the border-connected background with foreground so that the
    only unset pixels left are interior (inside the skull)."""
    seeds = _border_seeds(mask.height, mask.width, seed_mode)
    return flood_fill(mask, seeds, True)


def preprocess_slice(image: GrayImage, config: SegmentationConfig):
    """Run the measurement pipeline on one slice.

    Returns ``(processed, features)`` where ``processed`` is the cropped
    blurred raster the measurements were taken from (what the preprocess
    stage writes to the processed-image directory).

    Raises :class:`EmptySliceError` for all-background input and
    :class:`SegmentationFailedError` when the crop centre is background
    (no central tissue region to segment).
    """
    blurred = gaussian_blur(image, config.blur_kernel, config.blur_sigma)
    box = _content_box(blurred.pixels, config.threshold)
    if box is None:
        raise EmptySliceError(f"no pixel above threshold {config.threshold}; empty slice")
    r0, r1, c0, c1 = box
    crop = GrayImage(blurred.pixels[r0:r1, c0:c1])
    crop_h, crop_w = crop.height, crop.width
    area = crop_w * crop_h

    fg = threshold(crop, config.threshold)
    area_total = fg.count() / area

    if config.csf_source == "raw":
        csf_mask_src = threshold(GrayImage(image.pixels[r0:r1, c0:c1]), config.threshold)
    else:
        csf_mask_src = fg
    without_background = _remove_background(csf_mask_src, config.seed_mode)
    area_csf = (area - without_background.count()) / area

    centre = (crop_h // 2, crop_w // 2)
    if not fg.bits[centre]:
        raise SegmentationFailedError(
            f"segmentation failed: crop centre {centre} of {crop_w}x{crop_h} crop is "
            f"background (intensity {crop.pixels[centre]} <= {config.threshold})"
        )
    remainder = flood_fill(fg, [centre], False)
    area_segmented = (fg.count() - remainder.count()) / area

    features = SliceFeatures(
        area_total=_sig9(area_total),
        area_csf=_sig9(area_csf),
        area_segmented=_sig9(area_segmented),
        crop_w=crop_w,
        crop_h=crop_h,
    )
    return crop, features


def extract_features(image: GrayImage, config: SegmentationConfig) -> SliceFeatures:
    """The five volumetric features of one slice (see
    :func:`preprocess_slice`)."""
    return preprocess_slice(image, config)[1]


def brain_loss_fraction(image: GrayImage, config: SegmentationConfig) -> float:
    """Fraction of the skull-enclosed area that reads as lost tissue.

    Crops off the surrounding background, boosts contrast, thresholds,
    and measures dark pixels inside the skull against everything the
    skull encloses.  Deterministic for a fixed config, and invariant
    under horizontal/vertical flips (the measure is purely area based).
    """
    cropped, crop_w, crop_h = edge_crop(image, config.threshold)
    boosted = multiply_contrast(cropped, config.contrast_factor)
    mask = threshold(boosted, config.threshold)
    if mask.count() == 0:
        raise EmptySliceError("contrast boost left no foreground; empty slice")
    filled = _remove_background(mask, config.seed_mode)
    dark_inside = crop_w * crop_h - filled.count()
    enclosed = dark_inside + mask.count()
    return dark_inside / enclosed


def with_overrides(config: SegmentationConfig, **kwargs) -> SegmentationConfig:
    """Copy ``config`` with the given fields replaced."""
    return replace(config, **kwargs)
