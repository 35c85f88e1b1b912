"""Ordinal severity grading on synthetic band-gap images.

The package covers the full loop: synthetic data generation, a small
autodiff core, attention/MLP encoders, threshold-based ordinal heads with
optional prompt-embedding alignment, stratified k-fold training, and
calibrated ensemble inference with delimited + figure reports.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DataFormatError,
    DegenerateInputError,
    DivergenceError,
    DomainError,
    NumericError,
    OrdiformerError,
    ShapeError,
)
from .tensor import Parameter, Tape, Tensor

__all__ = [
    "ConfigError",
    "DataFormatError",
    "DegenerateInputError",
    "DivergenceError",
    "DomainError",
    "NumericError",
    "OrdiformerError",
    "ShapeError",
    "Parameter",
    "Tape",
    "Tensor",
]
