"""Parabolic Morrey norms, parabolic Hölder seminorms and mixed Lebesgue norms on cylinders.

The Morrey norm is approximated by scanning cylinders Q_r(t0, x0) over a radii
ladder and a strided set of centers:

    ||X||_{M^{p,q}} ~ max_{t0, x0, r} ( r^{-d(1 - p/q)} \\iint_{Q_r} |X|^p )^{1/p},

with d = 5 for space-time data and d = 3 for a single time slice. Spatial ball
sums come from one FFT convolution per slice and radius; time windows from a
cumulative sum.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._fft import irfft3, rfft3
from .errors import DomainError, ParameterError
from .grid import (CylinderMask, FieldSnapshot, Grid, ParabolicCylinder, interior_slices,
                   periodic_distance, restrict_cylinder, workspace)

DEFAULT_TAU0 = 6.0


@dataclass(frozen=True)
class MorreyParams:
    """Exponents 1 < p <= q < inf, a decreasing radii ladder and a center stride."""

    p: float
    q: float
    scan_radii: tuple[float, ...]
    center_stride: int = 1

    def __post_init__(self) -> None:
        if not (1 < self.p <= self.q < math.inf):
            raise ParameterError(f"Morrey exponents need 1 < p <= q < inf, got p={self.p}, q={self.q}")
        radii = tuple(float(r) for r in self.scan_radii)
        if not radii:
            raise ParameterError("Morrey scan needs at least one radius")
        if any(r <= 0 for r in radii) or any(a <= b for a, b in zip(radii, radii[1:])):
            raise ParameterError("scan radii must be positive and strictly decreasing")
        if self.center_stride < 1:
            raise ParameterError("center_stride must be a positive integer")
        object.__setattr__(self, "scan_radii", radii)

    @classmethod
    def geometric(cls, p: float, q: float, r_max: float, r_min: float, n: int, stride: int = 1) -> "MorreyParams":
        radii = np.geomspace(r_max, r_min, n) if n > 1 else np.array([r_max])
        return cls(p, q, tuple(float(r) for r in radii), stride)

    def to_dict(self) -> dict:
        return {"p": self.p, "q": self.q, "radii": list(self.scan_radii), "stride": self.center_stride}


@dataclass(frozen=True)
class HolderParams:
    """Exponent 0 < alpha < 1, long-range pair budget and near-pair radius in cells."""

    alpha: float
    pair_budget: int = 100_000
    near_cells: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0 < self.alpha < 1):
            raise ParameterError(f"Hölder exponent must lie in ]0,1[, got {self.alpha}")
        if self.pair_budget < 0 or self.near_cells < 1:
            raise ParameterError("pair_budget must be >= 0 and near_cells >= 1")


@dataclass(frozen=True)
class MorreyResult:
    value: float
    argmax: ParabolicCylinder | None
    params: MorreyParams
    scanned: int = 0
    per_radius: tuple[float, ...] = field(default=())

    def to_dict(self) -> dict:
        return {"norm": self.value, "p": self.params.p, "q": self.params.q,
                "argmax": self.argmax.to_dict() if self.argmax is not None else None,
                "scan": {"radii": list(self.params.scan_radii), "stride": self.params.center_stride,
                         "cylinders": self.scanned},
                "per_radius": list(self.per_radius)}


def magnitude(X: FieldSnapshot | np.ndarray) -> np.ndarray:
    """Pointwise Euclidean magnitude, shape (nt, nz, ny, nx)."""
    data = X.data if isinstance(X, FieldSnapshot) else X
    if data.shape[1] == 1:
        return np.abs(data[:, 0])
    return np.sqrt(np.sum(data * data, axis=1))


def _ball_kernel_hat(grid: Grid, r: float) -> np.ndarray:
    ball = (periodic_distance(grid, (0.0, 0.0, 0.0)) < r).astype(float)
    return rfft3(ball)


def _time_half_width(grid: Grid, r: float) -> int:
    """Largest integer w with w*dt < r^2."""
    if grid.nt == 1:
        return 0
    return max(0, math.ceil(r * r / grid.dt) - 1)


def _spatial_ok(grid: Grid, r: float) -> bool:
    return all(2 * r <= grid.box_length[i] - 2 * grid.spacing[i] + 1e-12 for i in range(3))


def morrey_norm(X: FieldSnapshot, params: MorreyParams, mask: ParabolicCylinder | None = None) -> MorreyResult:
    """Scan estimate of the parabolic Morrey norm of X (or of 1_mask X).

    Without a mask every scanned cylinder must lie inside the sampled window
    (interior slices only); with a mask the integrand vanishes outside it, so
    cylinders may overhang the window in time and centers range over all slices
    whose cylinder meets the mask.
    """
    grid = X.grid
    d = 5 if grid.nt > 1 else 3
    p, q = params.p, params.q
    dens = magnitude(X) ** p
    interior = interior_slices(grid.nt)
    if mask is not None:
        m = restrict_cylinder(grid, mask, clip_time=True)
        keep = np.zeros(grid.nt, bool)
        keep[m.time_index] = True
        dens = dens * keep[:, None, None, None] * m.spatial[None]
    else:
        keep = np.zeros(grid.nt, bool)
        keep[interior] = True
        dens = dens * keep[:, None, None, None]
    h3 = grid.cell_volume
    dtq = grid.dt if grid.nt > 1 else 1.0
    s = params.center_stride
    best, arg, scanned, per_r = -1.0, None, 0, []
    dens_hat = [rfft3(dens[n]) for n in range(grid.nt)]
    for r in params.scan_radii:
        if not _spatial_ok(grid, r):
            per_r.append(float("nan"))
            continue
        if min(grid.spacing) * 2 > r:
            raise ParameterError(f"scan radius {r} is below 2 grid cells")
        khat = _ball_kernel_hat(grid, r)
        balls = np.stack([np.maximum(irfft3(dh * khat, grid.shape3), 0.0)[::s, ::s, ::s] for dh in dens_hat])
        w = _time_half_width(grid, r)
        csum = np.concatenate([np.zeros((1,) + balls.shape[1:]), np.cumsum(balls, axis=0)])
        centers = np.arange(grid.nt)
        if mask is None and grid.nt > 1:
            lo, hi = (1, grid.nt - 2) if grid.nt >= 3 else (0, grid.nt - 1)
            centers = centers[(centers - w >= lo) & (centers + w <= hi)]
        if centers.size == 0:
            per_r.append(float("nan"))
            continue
        a = np.clip(centers - w, 0, grid.nt)
        b = np.clip(centers + w + 1, 0, grid.nt)
        sums = (csum[b] - csum[a]) * (dtq * h3)
        vals = (r ** (-d * (1 - p / q)) * sums) ** (1.0 / p)
        scanned += vals.size
        i = int(np.argmax(vals))
        vmax = float(vals.flat[i])
        per_r.append(vmax)
        if vmax > best:
            best = vmax
            it, iz, iy, ix = np.unravel_index(i, vals.shape)
            x0 = (ix * s * grid.spacing[0], iy * s * grid.spacing[1], iz * s * grid.spacing[2])
            arg = ParabolicCylinder(float(grid.times[centers[it]]), x0, r)
    if scanned == 0:
        raise DomainError("Morrey scan set is empty: no radius fits the sampled domain")
    return MorreyResult(max(best, 0.0), arg, params, scanned, tuple(per_r))


def holder_seminorm(X: FieldSnapshot, params: HolderParams) -> dict:
    """Parabolic Hölder seminorm sup |X(t,x) - X(s,y)| / (|t-s|^{1/2} + |x-y|)^alpha.

    All pairs within parabolic distance near_cells*h (without periodic wrap) plus a
    seeded uniform sample of ``pair_budget`` long-range pairs. When the total pair
    count fits in the budget, every pair is enumerated instead.
    """
    grid = X.grid
    a = params.alpha
    data = X.data
    shape = (grid.nt,) + grid.shape3
    npts = int(np.prod(shape))
    hx, hy, hz = grid.spacing
    dtv = grid.dt if grid.nt > 1 else 0.0
    best = {"value": 0.0, "pair": None}

    def consider(idx_a: np.ndarray, idx_b: np.ndarray) -> None:
        ca = np.array(np.unravel_index(idx_a, shape))
        cb = np.array(np.unravel_index(idx_b, shape))
        diff = data[ca[0], :, ca[1], ca[2], ca[3]] - data[cb[0], :, cb[1], cb[2], cb[3]]
        num = np.sqrt(np.sum(diff * diff, axis=1))
        dist = (np.sqrt(np.abs(ca[0] - cb[0]) * dtv)
                + np.sqrt(((ca[3] - cb[3]) * hx) ** 2 + ((ca[2] - cb[2]) * hy) ** 2 + ((ca[1] - cb[1]) * hz) ** 2))
        ok = dist > 0
        if not ok.any():
            return
        quot = num[ok] / dist[ok] ** a
        i = int(np.argmax(quot))
        if quot[i] > best["value"]:
            best["value"] = float(quot[i])
            best["pair"] = (tuple(int(v) for v in ca[:, ok][:, i]), tuple(int(v) for v in cb[:, ok][:, i]))

    total_pairs = npts * (npts - 1) // 2
    if total_pairs <= params.pair_budget:
        iu, ju = np.triu_indices(npts, k=1)
        for c in range(0, iu.size, 1_000_000):
            consider(iu[c:c + 1_000_000], ju[c:c + 1_000_000])
        mode = "exhaustive"
    else:
        hmin = min(hx, hy, hz)
        reach = params.near_cells * hmin
        nz_, ny_, nx_ = (int(reach // hh) for hh in (hz, hy, hx))
        nt_ = int((reach ** 2) // dtv) if dtv > 0 else 0
        for dn, dz, dy, dx in itertools.product(range(0, min(nt_, grid.nt - 1) + 1), range(-nz_, nz_ + 1),
                                                range(-ny_, ny_ + 1), range(-nx_, nx_ + 1)):
            if (dn, dz, dy, dx) <= (0, 0, 0, 0):
                continue
            dist = math.sqrt(dn * dtv) + math.sqrt((dx * hx) ** 2 + (dy * hy) ** 2 + (dz * hz) ** 2)
            if dist > reach + 1e-12:
                continue
            sl_a, sl_b = [], []
            for off, n in zip((dn, dz, dy, dx), shape):
                if abs(off) >= n:
                    break
                sl_a.append(slice(max(0, -off), n - max(0, off)))
                sl_b.append(slice(max(0, off), n - max(0, -off)))
            else:
                A = data[(sl_a[0], slice(None)) + tuple(sl_a[1:])]
                B = data[(sl_b[0], slice(None)) + tuple(sl_b[1:])]
                num = np.sqrt(np.sum((A - B) ** 2, axis=1))
                val = float(num.max()) / dist ** a
                if val > best["value"]:
                    i = np.unravel_index(int(np.argmax(num)), num.shape)
                    pa = tuple(int(s.start + k) for s, k in zip(sl_a, i))
                    pb = tuple(int(s.start + k) for s, k in zip(sl_b, i))
                    best["value"], best["pair"] = val, (pa, pb)
        if params.pair_budget > 0:
            rng = np.random.default_rng(params.seed)
            ia = rng.integers(0, npts, params.pair_budget)
            ib = rng.integers(0, npts, params.pair_budget)
            for c in range(0, ia.size, 1_000_000):
                consider(ia[c:c + 1_000_000], ib[c:c + 1_000_000])
        mode = "near+sampled"
    return {"seminorm": best["value"], "alpha": a, "pair": best["pair"], "mode": mode,
            "near_cells": params.near_cells, "pair_budget": params.pair_budget, "seed": params.seed}


def mixed_norm(mag: np.ndarray, space_weight: float, time_weight: float, pt: float, px: float) -> float:
    """L^pt_t L^px_x of a non-negative array shaped (n_t, n_cells)."""
    if mag.size == 0:
        return 0.0
    if px == math.inf:
        inner = mag.max(axis=1)
    else:
        inner = (np.sum(mag ** px, axis=1) * space_weight) ** (1.0 / px)
    if pt == math.inf:
        return float(inner.max())
    return float((np.sum(inner ** pt) * time_weight) ** (1.0 / pt))


def _check_exponent(p: float) -> None:
    if not (p == math.inf or p >= 1):
        raise ParameterError(f"Lebesgue exponent must be >= 1 or inf, got {p}")


def lebesgue_cylinder_norm_mask(X: FieldSnapshot, mask: CylinderMask, pt: float, px: float) -> float:
    """Mixed norm of |X| over the cells of a precomputed cylinder mask."""
    _check_exponent(pt)
    _check_exponent(px)
    grid = X.grid
    mag = np.sqrt(np.sum(mask.values(X) ** 2, axis=1))
    dtq = grid.dt if grid.nt > 1 else 1.0
    return mixed_norm(mag, grid.cell_volume, dtq, pt, px)


def lebesgue_cylinder_norm(X: FieldSnapshot, Q: ParabolicCylinder, exponents: tuple[float, float],
                           clip_time: bool = False) -> float:
    """||X||_{L^pt_t L^px_x(Q)} by midpoint quadrature on cell centers in Q."""
    mask = restrict_cylinder(X, Q, clip_time=clip_time)
    return lebesgue_cylinder_norm_mask(X, mask, exponents[0], exponents[1])


def space_time_norms(u: FieldSnapshot, b: FieldSnapshot) -> dict:
    """Global L^inf_t L^2_x and L^2_t H^1_x (homogeneous) norms over interior slices."""
    grid = u.grid
    ws = workspace(grid)
    idx = interior_slices(grid.nt)
    dtq = grid.dt if grid.nt > 1 else 1.0
    out = {}
    for name, X in (("u", u), ("b", b)):
        l2 = [math.sqrt(sum(ws.spectral_l2_sq(X.data[n, c]) for c in range(3))) for n in idx]
        h1 = [float(np.sum(ws.grad_vec(X.data[n]) ** 2)) * grid.cell_volume for n in idx]
        out[f"{name}_linf_l2"] = max(l2)
        out[f"{name}_l2_h1"] = math.sqrt(sum(h1) * dtq)
    return out


def serrin_exponents_ok(p0: float, q0: float, p1: float, q1: float) -> list[str]:
    """Violations of 2 < p <= q, 5 < q < inf, p1 <= p0, q1 <= q0 (empty when valid)."""
    errs = []
    for name, p, q in (("(p0,q0)", p0, q0), ("(p1,q1)", p1, q1)):
        if not 2 < p:
            errs.append(f"{name}: p must exceed 2")
        if not p <= q:
            errs.append(f"{name}: p must not exceed q")
        if not 5 < q < math.inf:
            errs.append(f"{name}: q must satisfy 5 < q < inf")
    if not p1 <= p0:
        errs.append("p1 must not exceed p0")
    if not q1 <= q0:
        errs.append("q1 must not exceed q0")
    return errs


def morrey_radii_for(grid: Grid, r_max: float, n: int = 6) -> tuple[float, ...]:
    """Geometric ladder from r_max down to 2 cells."""
    r_min = 2.0 * max(grid.spacing)
    if r_max <= r_min:
        raise ParameterError("r_max must exceed two grid cells")
    return tuple(float(r) for r in np.geomspace(r_max, r_min, n))


def local_morrey_bound(X: FieldSnapshot, Q: ParabolicCylinder, p: float, q: float,
                       radii: Sequence[float], stride: int = 1) -> dict:
    """Compare ||1_Q X||_{M^{p,q}} with ||X||_{L^q(Q)} and report the ratio."""
    m = morrey_norm(X, MorreyParams(p, q, tuple(radii), stride), mask=Q)
    lq = lebesgue_cylinder_norm(X, Q, (q, q), clip_time=True)
    return {"morrey": m.value, "lq": lq, "ratio": (m.value / lq) if lq > 0 else 0.0}
