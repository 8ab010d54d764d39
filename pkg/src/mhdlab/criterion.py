"""Small-gradient criterion, candidate singular sets and the Serrin-type hypothesis check.

For a point (t0, x0) and radius r,

    G(r) = (1/r) \\iint_{Q_r(t0, x0)} |grad u|^2 + |grad b|^2,

by midpoint quadrature over cell centers with spectral gradients. The limsup as
r -> 0 is read off the smallest resolvable rungs: the surrogate is the maximum of
G over that window and the log-log slope over the same rungs is reported with it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._fft import irfft3, rfft3
from .errors import DomainError, ParameterError
from .grid import (FieldSnapshot, Grid, ParabolicCylinder, check_cylinder_inside, interior_slices,
                   periodic_distance, periodic_offsets, require_same_grid, require_vector, workspace)
from .norms import (MorreyParams, lebesgue_cylinder_norm, morrey_norm, morrey_radii_for,
                    serrin_exponents_ok)

DEFAULT_EPSILON_STAR = 0.01
VERDICTS = ("regular-candidate", "irregular-candidate", "inconclusive")


@dataclass(frozen=True)
class CriterionParams:
    """Threshold epsilon*, a strictly decreasing radii ladder and the limsup window size.

    ``trend_tolerance`` bounds the log-log slope that still counts as flat when
    classifying: a surrogate above epsilon* whose G decays faster than
    r^trend_tolerance, or one below epsilon* whose G grows faster than
    r^-trend_tolerance as r -> 0, is reported as inconclusive.
    """

    epsilon_star: float = DEFAULT_EPSILON_STAR
    radii: tuple[float, ...] = ()
    window: int = 3
    trend_tolerance: float = 0.5

    def __post_init__(self) -> None:
        if not self.epsilon_star > 0:
            raise ParameterError(f"epsilon_star must be positive, got {self.epsilon_star}")
        radii = tuple(float(r) for r in self.radii)
        if not radii:
            raise ParameterError("criterion needs a radii ladder")
        if any(r <= 0 for r in radii) or any(a <= b for a, b in zip(radii, radii[1:])):
            raise ParameterError("criterion radii must be positive and strictly decreasing")
        if not 1 <= self.window <= len(radii):
            raise ParameterError("window must be between 1 and the number of radii")
        object.__setattr__(self, "radii", radii)

    @classmethod
    def for_grid(cls, grid: Grid, rungs: int = 3, ratio: float = math.sqrt(2.0), r_min: float | None = None,
                 **kw) -> "CriterionParams":
        """Geometric ladder ending at two grid cells (or ``r_min``)."""
        r0 = 2.0 * max(grid.spacing) if r_min is None else r_min
        return cls(radii=tuple(r0 * ratio ** (rungs - 1 - i) for i in range(rungs)), **kw)

    def validate(self, grid: Grid) -> None:
        if self.radii[-1] < 2.0 * max(grid.spacing) * (1 - 1e-9):
            raise ParameterError(f"smallest radius {self.radii[-1]:g} is below two grid cells")

    @property
    def window_radii(self) -> tuple[float, ...]:
        return self.radii[-self.window:]

    def to_dict(self) -> dict:
        return {"epsilon_star": self.epsilon_star, "radii": list(self.radii), "window": self.window,
                "trend_tolerance": self.trend_tolerance}


@dataclass(frozen=True)
class PointVerdict:
    point: tuple[float, tuple[float, float, float]]
    radii: tuple[float, ...]
    G: tuple[float, ...]
    surrogate: float
    slope: float
    verdict: str
    epsilon_star: float

    def to_dict(self) -> dict:
        t0, x0 = self.point
        return {"t0": t0, "x0": list(x0), "radii": list(self.radii), "G": list(self.G),
                "limsup_surrogate": self.surrogate, "slope": None if math.isnan(self.slope) else self.slope,
                "verdict": self.verdict, "epsilon_star": self.epsilon_star}

    def csv_rows(self) -> list[tuple]:
        t0, x0 = self.point
        return [(t0, *x0, r, g) for r, g in zip(self.radii, self.G)]


def loglog_slope(radii: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of log G against log r; NaN when some value is not positive."""
    r = np.asarray(radii, float)
    v = np.asarray(values, float)
    if r.size < 2 or np.any(v <= 0):
        return float("nan")
    return float(np.polyfit(np.log(r), np.log(v), 1)[0])


def classify(surrogate: float, slope: float, params: CriterionParams) -> str:
    """Verdict from the surrogate and its trend (monotone in epsilon*)."""
    tol = params.trend_tolerance
    if surrogate < params.epsilon_star:
        return "inconclusive" if (not math.isnan(slope) and slope < -tol) else "regular-candidate"
    return "inconclusive" if (not math.isnan(slope) and slope > tol) else "irregular-candidate"


def gradient_density(u: FieldSnapshot, b: FieldSnapshot, physical: bool = False) -> np.ndarray:
    """|grad u|^2 + |grad b|^2 per cell, shape (nt, nz, ny, nx).

    With ``physical`` the inputs are (U, B) and the Elsasser pair (U + B, U - B) is formed first.
    """
    grid = require_same_grid(u, b)
    require_vector(u, "u")
    require_vector(b, "b")
    ws = workspace(grid)
    out = np.empty((grid.nt,) + grid.shape3)
    for n in range(grid.nt):
        x, y = u.data[n], b.data[n]
        if physical:
            x, y = x + y, x - y
        out[n] = np.sum(ws.grad_vec(x) ** 2, axis=(0, 1)) + np.sum(ws.grad_vec(y) ** 2, axis=(0, 1))
    return out


def _time_half_width(grid: Grid, r: float) -> int:
    return max(0, math.ceil(r * r / grid.dt - 1e-9) - 1) if grid.nt > 1 else 0


def _point_G(dens: np.ndarray, grid: Grid, t0: float, x0, r: float) -> float:
    Q = ParabolicCylinder(t0, x0, r)
    try:
        check_cylinder_inside(grid, Q, check_time=grid.nt > 1)
    except DomainError as exc:
        raise DomainError(f"point (t0={t0:g}, x0={tuple(x0)}) is too near the boundary: {exc}") from None
    idx = interior_slices(grid.nt)
    if grid.nt > 1:
        idx = idx[np.abs(grid.times[idx] - t0) < r * r - 1e-12]
    ball = periodic_distance(grid, x0) < r
    dtq = grid.dt if grid.nt > 1 else 1.0
    total = float(np.sum(dens[idx][:, ball])) if idx.size else 0.0
    return total * dtq * grid.cell_volume / r


def gradient_density_scan(u: FieldSnapshot, b: FieldSnapshot, points: Sequence, params: CriterionParams,
                          physical: bool = False) -> list[PointVerdict]:
    """G(r) on the ladder at each point (t0, (x, y, z)) and the resulting verdicts."""
    grid = require_same_grid(u, b)
    params.validate(grid)
    dens = gradient_density(u, b, physical)
    out = []
    win = params.window_radii
    for t0, x0 in points:
        x0 = tuple(float(v) for v in x0)
        G = tuple(_point_G(dens, grid, float(t0), x0, r) for r in params.radii)
        Gw = G[-params.window:]
        surrogate = max(Gw)
        slope = loglog_slope(win, Gw)
        out.append(PointVerdict((float(t0), x0), params.radii, G, surrogate, slope,
                                classify(surrogate, slope, params), params.epsilon_star))
    return out


def _G_field(dens_hat: list, grid: Grid, r: float) -> tuple[np.ndarray, np.ndarray]:
    """G(r) at every grid node of the slices whose cylinder fits; returns (slices, values)."""
    khat = rfft3((periodic_distance(grid, (0.0, 0.0, 0.0)) < r).astype(float))
    balls = np.stack([np.maximum(irfft3(dh * khat, grid.shape3), 0.0) for dh in dens_hat])
    w = _time_half_width(grid, r)
    lo, hi = (1, grid.nt - 2) if grid.nt >= 3 else (0, grid.nt - 1)
    centers = np.arange(lo + w, hi - w + 1)
    csum = np.concatenate([np.zeros((1,) + balls.shape[1:]), np.cumsum(balls, axis=0)])
    dtq = grid.dt if grid.nt > 1 else 1.0
    vals = (csum[centers + w + 1] - csum[centers - w]) * dtq * grid.cell_volume / r
    return centers, vals


@dataclass
class SingularSetReport:
    candidates: np.ndarray  # (n, 4) integer rows (slice, iz, iy, ix)
    points: list[tuple[float, tuple[float, float, float]]]
    scales: list[float]
    counts: list[int]
    slope: float
    params: CriterionParams
    scanned_slices: tuple[int, int] = field(default=(0, 0))

    @property
    def empty(self) -> bool:
        return self.candidates.shape[0] == 0

    def to_dict(self) -> dict:
        return {"empty": self.empty, "n_candidates": int(self.candidates.shape[0]),
                "candidates": [{"t": t, "x": list(x)} for t, x in self.points],
                "box_counts": [{"scale": s, "count": c} for s, c in zip(self.scales, self.counts)],
                "box_count_slope": None if math.isnan(self.slope) else self.slope,
                "scanned_slices": list(self.scanned_slices), "params": self.params.to_dict()}


def _greedy_cover(coords: np.ndarray, times: np.ndarray, s: float, lengths) -> int:
    """Number of parabolic boxes |x - c|_inf <= s, |t - tc| <= s^2 picked greedily to cover the set."""
    remaining = np.ones(coords.shape[0], bool)
    L = np.asarray(lengths)
    count = 0
    while remaining.any():
        i = int(np.flatnonzero(remaining)[0])
        d = np.abs(coords - coords[i])
        d = np.minimum(d, L - d)
        near = (d.max(axis=1) <= s + 1e-12) & (np.abs(times - times[i]) <= s * s + 1e-12)
        remaining &= ~near
        count += 1
    return count


def singular_set_boxcount(u: FieldSnapshot, b: FieldSnapshot, params: CriterionParams,
                          physical: bool = False, n_scales: int | None = None) -> SingularSetReport:
    """Grid points classified irregular-candidate and a greedy parabolic box count.

    Box scales start at twice the largest window radius (the resolution of the
    criterion) and double up to half the box.
    """
    grid = require_same_grid(u, b)
    params.validate(grid)
    dens = gradient_density(u, b, physical)
    dens_hat = [rfft3(dens[n]) for n in range(grid.nt)]
    win = params.window_radii
    fields = [_G_field(dens_hat, grid, r) for r in win]
    common = fields[0][0]  # largest radius has the narrowest slice range
    if common.size == 0:
        raise DomainError("no time slice admits the largest window cylinder")
    stack = []
    for centers, vals in fields:
        stack.append(vals[np.searchsorted(centers, common)])
    stack = np.stack(stack)  # (window, n, nz, ny, nx)
    surrogate = stack.max(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        logr = np.log(np.asarray(win))
        logG = np.log(np.where(stack > 0, stack, np.nan))
        xm = logr - logr.mean()
        slope = np.tensordot(xm, logG - logG.mean(axis=0), axes=(0, 0)) / np.sum(xm * xm)
    tol = params.trend_tolerance
    irregular = (surrogate >= params.epsilon_star) & ~(np.nan_to_num(slope, nan=-np.inf) > tol)
    where = np.argwhere(irregular)
    rows = np.column_stack([common[where[:, 0]], where[:, 1:]]) if where.size else np.zeros((0, 4), int)
    h = grid.spacing
    coords = np.column_stack([rows[:, 3] * h[0], rows[:, 2] * h[1], rows[:, 1] * h[2]]) if rows.size else \
        np.zeros((0, 3))
    times = grid.times[rows[:, 0]] if rows.size else np.zeros(0)
    s0 = 2.0 * win[0]
    scales = []
    s = s0
    while s <= 0.5 * min(grid.box_length) + 1e-12 and (n_scales is None or len(scales) < n_scales):
        scales.append(s)
        s *= 2.0
    counts = [_greedy_cover(coords, times, sc, grid.box_length) if rows.size else 0 for sc in scales]
    slope_bc = loglog_slope(scales, counts) if len(scales) >= 2 and all(c > 0 for c in counts) else float("nan")
    if not math.isnan(slope_bc):
        slope_bc = -slope_bc
    points = [(float(t), tuple(float(v) for v in x)) for t, x in zip(times, coords)]
    return SingularSetReport(rows.astype(int), points, scales, counts, slope_bc, params,
                             (int(common[0]), int(common[-1])))


# ---------------------------------------------------------------------------
# synthetic concentration field

@dataclass(frozen=True)
class Concentration:
    """u = c (x - x0) rotated about the z axis, scaled by F = chi(rho)/(rho^2 + |t - t0| + core^2),
    with chi(rho) = exp(-(rho/support)^4). Divergence-free; |grad u|^2 is parabolically
    homogeneous of degree -4 away from the core, so G(r) is nearly constant for core << r."""

    t0: float
    x0: tuple[float, float, float]
    amplitude: float
    core: float
    support: float

    def _F(self, rho, t):
        chi = np.exp(-(rho / self.support) ** 4)
        den = rho * rho + np.abs(t - self.t0) + self.core ** 2
        F = chi / den
        dchi = -4.0 * rho ** 3 / self.support ** 4 * chi
        dF = dchi / den - 2.0 * rho * chi / den ** 2
        return F, dF

    def field(self, grid: Grid) -> FieldSnapshot:
        dx, dy, _ = periodic_offsets(grid, self.x0)
        rho = periodic_distance(grid, self.x0)
        data = np.empty((grid.nt, 3) + grid.shape3)
        for n, t in enumerate(grid.times):
            F, _ = self._F(rho, t)
            data[n, 0] = -self.amplitude * dy * F
            data[n, 1] = self.amplitude * dx * F
            data[n, 2] = 0.0
        return FieldSnapshot(grid, data, "u")

    def density(self, rho, sin2, t):
        """|grad u|^2 in spherical coordinates about x0 (sin2 = sin^2 of the polar angle)."""
        F, dF = self._F(rho, t)
        c2 = self.amplitude ** 2
        return c2 * (2 * F * F + 2 * F * dF * rho * sin2 + dF * dF * rho * rho * sin2)

    def oracle_G(self, r: float, nodes: int = 400) -> float:
        """G(r) at (t0, x0) by composite Gauss quadrature in (rho, theta, t).

        The angular integral is exact (int sin = 2, int sin^3 = 4/3 over [0, pi]).
        """
        xg, wg = np.polynomial.legendre.leggauss(16)
        panels = max(nodes // 16, 1)

        def nodes_on(a, b, geometric):
            edges = (np.geomspace(max(a, 1e-6 * b), b, panels + 1) if geometric else
                     np.linspace(a, b, panels + 1))
            if geometric:
                edges[0] = a
            lo, hi = edges[:-1, None], edges[1:, None]
            return ((0.5 * (hi - lo) * xg + 0.5 * (hi + lo)).ravel(), (0.5 * (hi - lo) * wg).ravel())

        rho, wr = nodes_on(0.0, r, True)
        tau, wt = nodes_on(0.0, r * r, True)
        total = 0.0
        for sgn in (1.0, -1.0):
            t = self.t0 + sgn * tau
            F, dF = self._F(rho[:, None], t[None, :])
            c2 = self.amplitude ** 2
            iso = 2 * F * F * 2.0
            ani = (2 * F * dF * rho[:, None] + dF * dF * rho[:, None] ** 2) * (4.0 / 3.0)
            integrand = c2 * (iso + ani) * 2 * math.pi * rho[:, None] ** 2
            total += float(wr @ integrand @ wt)
        return total / r


def concentration_field(grid: Grid, t0: float, x0, amplitude: float = 1.0, core: float | None = None,
                        support: float | None = None) -> tuple[FieldSnapshot, Concentration]:
    """Synthetic concentration at (t0, x0) and its analytic description for oracles."""
    core = 2.0 * max(grid.spacing) if core is None else core
    support = min(grid.box_length) / 6.0 if support is None else support
    c = Concentration(float(t0), tuple(float(v) for v in x0), float(amplitude), float(core), float(support))
    return c.field(grid), c


# ---------------------------------------------------------------------------
# Serrin-type hypothesis check

def serrin_hypothesis_check(U: FieldSnapshot, B: FieldSnapshot, region: ParabolicCylinder,
                            exponents: tuple[tuple[float, float], tuple[float, float]] = ((3.0, 6.0), (3.0, 6.0)),
                            radii: Sequence[float] | None = None, stride: int = 1,
                            shrink: float = 0.5) -> dict:
    """Local Morrey norms of 1_region U, 1_region B and the Lebesgue conclusion norms.

    Exponent constraints 2 < p <= q, 5 < q < inf, p1 <= p0, q1 <= q0 are validated
    first. The conclusion norms are ||U||_{L^q0} and ||B||_{L^q1} on the cylinder
    shrunk by ``shrink``.
    """
    (p0, q0), (p1, q1) = exponents
    errs = serrin_exponents_ok(p0, q0, p1, q1)
    if errs:
        raise ParameterError("invalid exponents: " + "; ".join(errs))
    grid = require_same_grid(U, B)
    check_cylinder_inside(grid, region, check_time=False)
    if radii is None:
        radii = morrey_radii_for(grid, region.r, 4)
    mU = morrey_norm(U, MorreyParams(p0, q0, tuple(radii), stride), mask=region)
    mB = morrey_norm(B, MorreyParams(p1, q1, tuple(radii), stride), mask=region)
    inner = region.shrink(shrink)
    lU = lebesgue_cylinder_norm(U, inner, (q0, q0), clip_time=True)
    lB = lebesgue_cylinder_norm(B, inner, (q1, q1), clip_time=True)
    finite = all(math.isfinite(v) for v in (mU.value, mB.value, lU, lB))
    return {"exponents": {"p0": p0, "q0": q0, "p1": p1, "q1": q1}, "exponents_valid": True,
            "region": region.to_dict(), "morrey_U": mU.to_dict(), "morrey_B": mB.to_dict(),
            "hypothesis_satisfied": finite, "conclusion": {"cylinder": inner.to_dict(), "U_Lq0": lU, "B_Lq1": lB,
                                                           "finite": finite}}
