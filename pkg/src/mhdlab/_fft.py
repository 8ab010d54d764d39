"""Thin wrapper around scipy.fft that carries the process-wide worker count."""

from __future__ import annotations

import os

import numpy as np
import scipy.fft

_AXES = (-3, -2, -1)
_workers = 1


def set_threads(n: int | None) -> int:
    """Set the FFT worker count. ``None`` falls back to MHDLAB_THREADS, then 1."""
    global _workers
    if n is None:
        n = int(os.environ.get("MHDLAB_THREADS", "1") or 1)
    if n < 1:
        raise ValueError(f"thread count must be positive, got {n}")
    _workers = int(n)
    return _workers


def get_threads() -> int:
    return _workers


def rfft3(a: np.ndarray) -> np.ndarray:
    return scipy.fft.rfftn(a, axes=_AXES, workers=_workers)


def irfft3(a: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    return scipy.fft.irfftn(a, s=shape, axes=_AXES, workers=_workers)
