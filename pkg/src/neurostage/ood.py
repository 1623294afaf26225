"""Confidence gating: refuse to label slices the network is unsure about.

The gate uses the maximum softmax probability as the familiarity score.
Slices scoring below the cutoff come back as ``unsure`` instead of a
diagnosis; the cutoff is calibrated by comparing mean confidence on
familiar versus out-of-distribution data.  Gating applies to the network
only: second-stage forest probabilities do not track the network's own
confidence, so attaching the gate there is refused at the CLI.
"""

from __future__ import annotations

from dataclasses import dataclass

from .cnn import INPUT_SIZE, LayerStack, classes_for_head, predict_slice
from .imaging import GrayImage, resize_bilinear
from .labels import UNSURE_TOKEN

# Operating point the stock cutoff was derived from: familiar scans
# average about 0.67 confidence, out-of-distribution ones about 0.56,
# and 0.60 separates them well.  Dataset-dependent; recalibrate for new
# out-of-distribution sources.
REFERENCE_MEAN_ID_CONFIDENCE = 0.67
REFERENCE_MEAN_OOD_CONFIDENCE = 0.56
DEFAULT_CUTOFF = 0.60


@dataclass(frozen=True)
class OodConfig:
    cutoff: float = DEFAULT_CUTOFF
    scan_unsure_fraction: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.cutoff <= 1.0:
            raise ValueError(f"cutoff must be in (0, 1], got {self.cutoff}")
        if not 0.0 <= self.scan_unsure_fraction <= 1.0:
            raise ValueError("scan_unsure_fraction must be in [0, 1]")


@dataclass(frozen=True)
class GatedPrediction:
    """Either a label token or ``unsure``, plus the confidence that drove
    the decision."""

    outcome: str
    confidence: float

    @property
    def is_unsure(self):
        return self.outcome == UNSURE_TOKEN


@dataclass(frozen=True)
class CalibrationReport:
    mean_id_confidence: float
    mean_ood_confidence: float
    suggested_cutoff: float

    def lines(self):
        return [
            f"mean_id_confidence {self.mean_id_confidence:.6f}",
            f"mean_ood_confidence {self.mean_ood_confidence:.6f}",
            f"suggested_cutoff {self.suggested_cutoff:.6f}",
            f"reference_id_confidence {REFERENCE_MEAN_ID_CONFIDENCE:.2f}",
            f"reference_ood_confidence {REFERENCE_MEAN_OOD_CONFIDENCE:.2f}",
        ]


def _fit_input(image: GrayImage) -> GrayImage:
    if image.height == INPUT_SIZE and image.width == INPUT_SIZE:
        return image
    return resize_bilinear(image, INPUT_SIZE, INPUT_SIZE)


def slice_confidence(net: LayerStack, image: GrayImage):
    """(class_index, max softmax probability) for one slice."""
    return predict_slice(net, _fit_input(image))


def gate(net: LayerStack, image: GrayImage, cfg: OodConfig) -> GatedPrediction:
    """Label the slice, or return ``unsure`` when confidence < cutoff.

    The underlying label is never altered: whenever the outcome is a
    label it equals the ungated prediction.
    """
    idx, conf = slice_confidence(net, image)
    if conf < cfg.cutoff:
        return GatedPrediction(outcome=UNSURE_TOKEN, confidence=conf)
    return GatedPrediction(outcome=classes_for_head(net.n_classes)[idx], confidence=conf)


def calibrate(net: LayerStack, id_images, ood_images) -> CalibrationReport:
    """Mean max-softmax confidence on each set, and the midpoint cutoff.

    Purely advisory; nothing is applied automatically.
    """
    if not id_images or not ood_images:
        raise ValueError("both image sets must be non-empty")
    id_mean = sum(slice_confidence(net, img)[1] for img in id_images) / len(id_images)
    ood_mean = sum(slice_confidence(net, img)[1] for img in ood_images) / len(ood_images)
    return CalibrationReport(
        mean_id_confidence=id_mean,
        mean_ood_confidence=ood_mean,
        suggested_cutoff=(id_mean + ood_mean) / 2.0,
    )


def gate_scan(net: LayerStack, images, cfg: OodConfig) -> GatedPrediction:
    """Scan-level gate over one scan's slices.

    If the unsure fraction exceeds ``scan_unsure_fraction`` the whole
    scan is unsure; otherwise the majority label over the confident
    slices wins (ties to the lowest class index).  Confidence reported
    is the mean over all slices.
    """
    if not images:
        raise ValueError("empty slice list")
    classes = classes_for_head(net.n_classes)
    votes = [0] * len(classes)
    unsure = 0
    total_conf = 0.0
    for img in images:
        idx, conf = slice_confidence(net, img)
        total_conf += conf
        if conf < cfg.cutoff:
            unsure += 1
        else:
            votes[idx] += 1
    mean_conf = total_conf / len(images)
    if unsure / len(images) > cfg.scan_unsure_fraction or sum(votes) == 0:
        return GatedPrediction(outcome=UNSURE_TOKEN, confidence=mean_conf)
    best = max(range(len(classes)), key=lambda i: (votes[i], -i))
    return GatedPrediction(outcome=classes[best], confidence=mean_conf)
