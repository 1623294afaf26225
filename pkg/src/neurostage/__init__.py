"""Low-compute dementia staging from 2D brain-scan slices.

Pipeline stages: PGM imaging and filters (:mod:`neurostage.imaging`),
flood-fill volumetry (:mod:`neurostage.segmentation`), corpus handling
(:mod:`neurostage.dataset`), a from-scratch random forest
(:mod:`neurostage.forest`) and slice network (:mod:`neurostage.cnn`),
per-scan stacking (:mod:`neurostage.ensemble`), confidence gating
(:mod:`neurostage.ood`), and metrics plus the CLI
(:mod:`neurostage.metrics`, :mod:`neurostage.cli`).
"""

__version__ = "0.1.0"
