"""Dementia stage labels and the derived two-class (detection) mapping."""

from __future__ import annotations

import enum


class ClassLabel(enum.Enum):
    NON_DEMENTED = "non"
    VERY_MILD = "verymild"
    MILD = "mild"
    MODERATE = "moderate"

    @property
    def token(self) -> str:
        """Serialized form used in CSV files and directory names."""
        return self.value

    @property
    def is_demented(self) -> bool:
        return self is not ClassLabel.NON_DEMENTED

    @classmethod
    def from_token(cls, token: str) -> "ClassLabel":
        try:
            return _TOKEN_ALIASES[token.strip().lower()]
        except KeyError:
            raise ValueError(f"unknown class label {token!r}") from None


_TOKEN_ALIASES = {
    "non": ClassLabel.NON_DEMENTED,
    "nondemented": ClassLabel.NON_DEMENTED,
    "non_demented": ClassLabel.NON_DEMENTED,
    "verymild": ClassLabel.VERY_MILD,
    "verymilddemented": ClassLabel.VERY_MILD,
    "very_mild_demented": ClassLabel.VERY_MILD,
    "mild": ClassLabel.MILD,
    "milddemented": ClassLabel.MILD,
    "mild_demented": ClassLabel.MILD,
    "moderate": ClassLabel.MODERATE,
    "moderatedemented": ClassLabel.MODERATE,
    "moderate_demented": ClassLabel.MODERATE,
}

# Ordered label universes per task.  Classification drops MODERATE (too few
# subjects to form a class); detection folds every demented stage together.
CLASSIFICATION_CLASSES = (ClassLabel.NON_DEMENTED, ClassLabel.VERY_MILD, ClassLabel.MILD)
DETECTION_TOKENS = ("non", "dem")
UNSURE_TOKEN = "unsure"


def detection_token(label: ClassLabel) -> str:
    """Collapse a stage label onto the two-class detection axis."""
    return "dem" if label.is_demented else "non"
