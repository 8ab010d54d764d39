"""Named one-dimensional profiles: cut-off ramps and mollifier bumps.

A ramp ``g`` maps [0, 1] onto [0, 1] with g(0) = 0, g(1) = 1, and is clamped to
exactly 0 / 1 outside. A bump ``w`` is a non-negative function of s = |y| / width,
supported in s < 1; normalization to unit mass happens on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import erfc

from .errors import ParameterError


def _quintic(s: np.ndarray) -> np.ndarray:
    return s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


def _smooth_exp(s: np.ndarray) -> np.ndarray:
    inner = (s > 0) & (s < 1)
    sc = np.where(inner, s, 0.5)
    a = np.exp(-1.0 / sc)
    b = np.exp(-1.0 / (1.0 - sc))
    return np.where(inner, a / (a + b), np.where(s >= 1, 1.0, 0.0))


def _erf_jets(s: float, z: float) -> tuple[float, float, float]:
    e0 = 0.5 * float(erfc(-z * (2 * s - 1)))
    e1 = 2 * z / np.sqrt(np.pi) * np.exp(-(z * (2 * s - 1)) ** 2)
    e2 = e1 * (-4 * z * z * (2 * s - 1))
    return e0, e1, e2


def _hermite5(s: np.ndarray, left: tuple, right: tuple) -> np.ndarray:
    """Quintic with value, first and second derivative ``left`` at 0 and ``right`` at 1."""
    s2, s3, s4, s5 = s * s, s ** 3, s ** 4, s ** 5
    h0 = 1 - 10 * s3 + 15 * s4 - 6 * s5
    h1 = s - 6 * s3 + 8 * s4 - 3 * s5
    h2 = 0.5 * (s2 - 3 * s3 + 3 * s4 - s5)
    g0 = 10 * s3 - 15 * s4 + 6 * s5
    g1 = -4 * s3 + 7 * s4 - 3 * s5
    g2 = 0.5 * (s3 - 2 * s4 + s5)
    return (left[0] * h0 + left[1] * h1 + left[2] * h2
            + right[0] * g0 + right[1] * g1 + right[2] * g2)


def _erf_ramp(s: np.ndarray, z: float) -> np.ndarray:
    """Gaussian-error ramp with its end defects removed by a quintic, hence exactly C^2."""
    left = _erf_jets(0.0, z)
    r = _erf_jets(1.0, z)
    right = (r[0] - 1.0, r[1], r[2])
    e = 0.5 * erfc(-z * (2 * s - 1))
    return e - _hermite5(s, left, right)


@dataclass(frozen=True)
class RampProfile:
    """Monotone transition from 0 to 1 on [0, 1].

    ``smoothness`` is the number of continuous derivatives at the junctions
    (-1 would mean discontinuous; ``None`` means C-infinity).
    """

    name: str
    steepness: float | None = None

    def __post_init__(self) -> None:
        if self.name not in RAMPS:
            raise ParameterError(f"unknown cut-off profile {self.name!r}; choose from {sorted(RAMPS)}")
        if self.name == "erf" and self.steepness is None:
            object.__setattr__(self, "steepness", DEFAULT_ERF_STEEPNESS)
        if self.steepness is not None and not self.steepness > 0:
            raise ParameterError("ramp steepness must be positive")

    @property
    def smoothness(self) -> int | None:
        return RAMPS[self.name][1]

    def __call__(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        sc = np.clip(s, 0.0, 1.0)
        fn = RAMPS[self.name][0]
        val = fn(sc, self.steepness) if self.name == "erf" else fn(sc)
        return np.where(s <= 0, 0.0, np.where(s >= 1, 1.0, val))

    def to_dict(self) -> dict:
        return {"name": self.name, "steepness": self.steepness, "smoothness": self.smoothness}


DEFAULT_ERF_STEEPNESS = 4.0
RAMPS: dict[str, tuple[Callable, int | None]] = {
    "quintic": (_quintic, 2),
    "smooth-exp": (_smooth_exp, None),
    "erf": (_erf_ramp, 2),
}


def _exp_bump(s: np.ndarray) -> np.ndarray:
    inner = np.abs(s) < 1
    sc = np.where(inner, s, 0.0)
    return np.where(inner, np.exp(-1.0 / (1.0 - sc * sc)), 0.0)


def _poly_bump(s: np.ndarray) -> np.ndarray:
    return np.where(np.abs(s) < 1, (1.0 - s * s) ** 4, 0.0)


def _c2_bump(s: np.ndarray) -> np.ndarray:
    return np.where(np.abs(s) < 1, (1.0 - s * s) ** 3, 0.0)


BUMPS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "exp": _exp_bump,
    "poly": _poly_bump,
    "c2": _c2_bump,
}


def bump(name: str) -> Callable[[np.ndarray], np.ndarray]:
    try:
        return BUMPS[name]
    except KeyError:
        raise ParameterError(f"unknown bump {name!r}; choose from {sorted(BUMPS)}") from None
