"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

import numbers

import numpy as np

from .data import Dataset
from .exceptions import IndexOutOfVocab
from .sampling import PreferenceVector


def check_dataset(X, name="X") -> Dataset:
    if not isinstance(X, Dataset):
        raise TypeError(f"{name} must be a Dataset, got {type(X).__name__}")
    return X


def check_preference(pi) -> PreferenceVector:
    """Accept a PreferenceVector, a ``(pi_c, pi_o)`` pair, or a scalar ``pi_o``."""
    if isinstance(pi, PreferenceVector):
        return pi
    if isinstance(pi, numbers.Real):
        return PreferenceVector.from_pi_o(float(pi))
    values = np.asarray(pi, dtype=np.float64).ravel()
    if values.size != 2:
        raise ValueError(f"preference must have two components, got {values.size}")
    return PreferenceVector(float(values[0]), float(values[1]))


def check_prefixes(X, vocab_size: int, max_len: int) -> list[np.ndarray]:
    """Item-index prefixes, each truncated to its most recent ``max_len`` clicks."""
    if isinstance(X, np.ndarray) and X.ndim == 1 and X.dtype != object:
        X = [X]
    out = []
    for prefix in X:
        arr = np.asarray(prefix, dtype=np.int64).ravel()
        if arr.size == 0:
            raise ValueError("prefixes must contain at least one item")
        if arr.min() < 0 or arr.max() >= vocab_size:
            raise IndexOutOfVocab(f"item index outside [0, {vocab_size})")
        out.append(arr[-max_len:])
    return out
