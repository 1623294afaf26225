"""Flat key=value config files.

One ``key=value`` pair per line, ``#`` comments, no sections.  Every
tunable default in the package maps to a namespaced key here, so a fully
resolved config doubles as a rerun manifest.
"""

from __future__ import annotations

from .cnn import TrainConfig
from .dataset import DEFAULT_FILENAME_PATTERN, DEFAULT_WINDOW, SplitSpec
from .forest import ForestConfig
from .ood import OodConfig
from .segmentation import SegmentationConfig


def parse_config_text(text):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def dump_config(mapping):
    return "".join(f"{k}={mapping[k]}\n" for k in sorted(mapping))


def _as_bool(value):
    if value.lower() in ("1", "true", "yes", "on"):
        return True
    if value.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


class Config:
    """Typed access over a flat mapping, recording every resolved value.

    ``resolved()`` returns all keys that were looked up together with the
    values used (defaults included), which is exactly what the manifest
    needs for byte-identical reruns.
    """

    def __init__(self, mapping=None):
        self.mapping = dict(mapping or {})
        self._resolved = {}

    def _get(self, key, default, conv):
        raw = self.mapping.get(key)
        value = default if raw is None else conv(raw)
        self._resolved[key] = value
        return value

    def get_str(self, key, default):
        return self._get(key, default, str)

    def get_int(self, key, default):
        return self._get(key, default, int)

    def get_float(self, key, default):
        return self._get(key, default, float)

    def get_bool(self, key, default):
        return self._get(key, default, _as_bool)

    def resolved(self):
        out = {}
        for key, value in self._resolved.items():
            out[key] = str(value)
        return out

    def unknown_keys(self):
        return sorted(set(self.mapping) - set(self._resolved))

    # config builders -----------------------------------------------------

    def segmentation(self) -> SegmentationConfig:
        return SegmentationConfig(
            threshold=self.get_int("segmentation.threshold", 50),
            blur_kernel=self.get_int("segmentation.blur_kernel", 5),
            blur_sigma=self.get_float("segmentation.blur_sigma", 1.0),
            contrast_factor=self.get_float("segmentation.contrast_factor", 8.0),
            seed_mode=self.get_str("segmentation.seed_mode", "corners+midpoints"),
            csf_source=self.get_str("segmentation.csf_source", "blurred"),
            min_brain_loss=self.get_float("segmentation.min_brain_loss", 0.10),
        )

    def dataset_pattern(self):
        return self.get_str("dataset.pattern", DEFAULT_FILENAME_PATTERN)

    def dataset_window(self):
        return (
            self.get_int("dataset.window_lo", DEFAULT_WINDOW[0]),
            self.get_int("dataset.window_hi", DEFAULT_WINDOW[1]),
        )

    def forest(self, seed) -> ForestConfig:
        raw_depth = self.get_str("forest.max_depth", "none")
        raw_fps = self.get_str("forest.features_per_split", "sqrt")
        return ForestConfig(
            n_trees=self.get_int("forest.n_trees", 100),
            max_depth=None if raw_depth.lower() == "none" else int(raw_depth),
            min_samples_split=self.get_int("forest.min_samples_split", 2),
            features_per_split=raw_fps if raw_fps == "sqrt" else int(raw_fps),
            bootstrap=self.get_bool("forest.bootstrap", True),
            seed=seed,
        )

    def train(self, seed) -> TrainConfig:
        return TrainConfig(
            epochs=self.get_int("cnn.epochs", 6),
            batch_size=self.get_int("cnn.batch_size", 32),
            learning_rate=self.get_float("cnn.learning_rate", 1e-3),
            momentum=self.get_float("cnn.momentum", 0.9),
            seed=seed,
            augment=self.get_bool("cnn.augment", True),
        )

    def ood(self) -> OodConfig:
        return OodConfig(
            cutoff=self.get_float("ood.cutoff", 0.60),
            scan_unsure_fraction=self.get_float("ood.scan_unsure_fraction", 0.5),
        )

    def split_spec(self, fractions_key, default_fractions, seed) -> SplitSpec:
        raw = self.get_str(fractions_key, "/".join(str(f) for f in default_fractions))
        fractions = tuple(float(f) for f in raw.split("/"))
        return SplitSpec(fractions=fractions, seed=seed)
