"""Label-value pairing for form pages.

Pairs pre-printed label text with input (handwritten or typed) value text
using line-of-sight candidates, spatial scorers, and an exact binary
quadratic selection step.
"""

from formpair.errors import InvalidInputError, SchemaError, SizeError, VersionError
from formpair.geometry import BoxClass, TextBox, iou, nms

__version__ = "0.1.0"

__all__ = [
    "BoxClass",
    "TextBox",
    "iou",
    "nms",
    "InvalidInputError",
    "SchemaError",
    "SizeError",
    "VersionError",
]
