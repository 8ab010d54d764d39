"""Periodic space-time grids, sampled fields and spectral operators.

Fields are stored as arrays of shape ``(nt, components, nz, ny, nx)``; component 0
is the x-component. Spatial operators act slice by slice in time through
``SpectralWorkspace``, whose array methods take the three spatial axes last and a
vector-component axis at position ``-4``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _fft
from .errors import ContractError, DomainError, GridMismatchError, ParameterError


@dataclass(frozen=True)
class Grid:
    """Uniform periodic box sampled at ``nt`` equispaced times."""

    nx: int
    ny: int
    nz: int
    box_length: tuple[float, float, float] = (2 * math.pi, 2 * math.pi, 2 * math.pi)
    nt: int = 1
    dt: float = 1.0
    t_start: float = 0.0

    def __post_init__(self) -> None:
        for name in ("nx", "ny", "nz"):
            n = getattr(self, name)
            if int(n) != n or n < 4 or n % 2:
                raise ParameterError(f"{name} must be an even integer >= 4, got {n}")
        lengths = tuple(float(v) for v in self.box_length)
        if len(lengths) != 3 or min(lengths) <= 0:
            raise ParameterError(f"box_length must be three positive reals, got {self.box_length}")
        object.__setattr__(self, "box_length", lengths)
        if int(self.nt) != self.nt or self.nt < 1:
            raise ParameterError(f"nt must be a positive integer, got {self.nt}")
        if not self.dt > 0:
            raise ParameterError(f"dt must be positive, got {self.dt}")

    @classmethod
    def cube(cls, n: int, length: float = 2 * math.pi, **kw) -> "Grid":
        return cls(n, n, n, (length, length, length), **kw)

    @property
    def counts(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def shape3(self) -> tuple[int, int, int]:
        """Array shape of one spatial slice, (nz, ny, nx)."""
        return (self.nz, self.ny, self.nx)

    @property
    def spacing(self) -> tuple[float, float, float]:
        return tuple(L / n for L, n in zip(self.box_length, self.counts))

    @property
    def cell_volume(self) -> float:
        hx, hy, hz = self.spacing
        return hx * hy * hz

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.nt)

    def axis(self, i: int) -> np.ndarray:
        """Node coordinates along spatial direction ``i`` (0 = x)."""
        return self.spacing[i] * np.arange(self.counts[i])

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Coordinate arrays (X, Y, Z), each of shape (nz, ny, nx)."""
        z, y, x = np.meshgrid(self.axis(2), self.axis(1), self.axis(0), indexing="ij")
        return x, y, z

    def with_time(self, nt: int, dt: float | None = None, t_start: float | None = None) -> "Grid":
        return Grid(self.nx, self.ny, self.nz, self.box_length, nt,
                    self.dt if dt is None else dt,
                    self.t_start if t_start is None else t_start)

    def same_space(self, other: "Grid") -> bool:
        return self.counts == other.counts and np.allclose(self.box_length, other.box_length, rtol=0, atol=1e-14)

    def to_dict(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "nz": self.nz, "box_length": list(self.box_length),
                "nt": self.nt, "dt": self.dt, "t_start": self.t_start}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        return cls(int(d["nx"]), int(d["ny"]), int(d["nz"]), tuple(d.get("box_length", [2 * math.pi] * 3)),
                   int(d.get("nt", 1)), float(d.get("dt", 1.0)), float(d.get("t_start", 0.0)))


@dataclass(frozen=True, eq=False)
class FieldSnapshot:
    """Scalar (1 component) or vector (3 components) field sampled on a ``Grid``.

    The array is frozen (read-only) after construction.
    """

    grid: Grid
    data: np.ndarray
    name: str = ""

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 4:
            data = data[:, None]
        g = self.grid
        if data.ndim != 5 or data.shape[1] not in (1, 3):
            raise ContractError(f"field data must have shape (nt, 1|3, nz, ny, nx), got {data.shape}")
        if data.shape[0] != g.nt or data.shape[2:] != g.shape3:
            raise ContractError(f"field shape {data.shape} inconsistent with grid (nt={g.nt}, {g.shape3})")
        if not np.isfinite(data).all():
            raise ContractError(f"field {self.name!r} contains NaN or Inf")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def components(self) -> int:
        return self.data.shape[1]

    @property
    def is_scalar(self) -> bool:
        return self.components == 1

    @classmethod
    def zeros(cls, grid: Grid, components: int = 3, name: str = "") -> "FieldSnapshot":
        return cls(grid, np.zeros((grid.nt, components) + grid.shape3), name)

    def renamed(self, name: str) -> "FieldSnapshot":
        return FieldSnapshot(self.grid, self.data, name)

    def __add__(self, other: "FieldSnapshot") -> "FieldSnapshot":
        require_same_grid(self, other)
        return FieldSnapshot(self.grid, self.data + other.data)

    def __sub__(self, other: "FieldSnapshot") -> "FieldSnapshot":
        require_same_grid(self, other)
        return FieldSnapshot(self.grid, self.data - other.data)

    def __mul__(self, c: float) -> "FieldSnapshot":
        return FieldSnapshot(self.grid, self.data * float(c), self.name)

    __rmul__ = __mul__

    def time_window(self, start: int, stop: int) -> "FieldSnapshot":
        """Sub-snapshot with time slices ``start:stop``."""
        if not 0 <= start < stop <= self.grid.nt:
            raise ParameterError(f"invalid time window [{start}, {stop}) for nt={self.grid.nt}")
        g = self.grid.with_time(stop - start, t_start=float(self.grid.times[start]))
        return FieldSnapshot(g, self.data[start:stop], self.name)


def require_same_grid(*fields: FieldSnapshot) -> Grid:
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise GridMismatchError(f"grid mismatch: {f.grid} vs {g}")
    return g


def require_vector(X: FieldSnapshot, what: str = "field") -> None:
    if X.components != 3:
        raise ContractError(f"{what} must have 3 components, got {X.components}")


def require_scalar(X: FieldSnapshot, what: str = "field") -> None:
    if X.components != 1:
        raise ContractError(f"{what} must be scalar, got {X.components} components")


class SpectralWorkspace:
    """Wavenumbers, dealias mask and spectral operators for one spatial grid.

    Derivatives use wavenumbers with the Nyquist mode zeroed; the Laplacian and
    its inverse use the full |k|^2. The inverse Laplacian maps the mean to zero.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        self.shape = grid.shape3
        nz, ny, nx = self.shape
        Lx, Ly, Lz = grid.box_length
        kx = 2 * np.pi * np.fft.rfftfreq(nx, d=Lx / nx)
        ky = 2 * np.pi * np.fft.fftfreq(ny, d=Ly / ny)
        kz = 2 * np.pi * np.fft.fftfreq(nz, d=Lz / nz)
        full = [kx[None, None, :], ky[None, :, None], kz[:, None, None]]
        self.k = full
        deriv = []
        for kk, n in ((kx, nx), (ky, ny), (kz, nz)):
            kd = kk.copy()
            kd[n // 2] = 0.0  # Nyquist mode carries no odd derivative
            deriv.append(kd)
        self.kd = [deriv[0][None, None, :], deriv[1][None, :, None], deriv[2][:, None, None]]
        self.k2 = full[0] ** 2 + full[1] ** 2 + full[2] ** 2
        with np.errstate(divide="ignore"):
            inv = np.where(self.k2 > 0, 1.0 / np.where(self.k2 > 0, self.k2, 1.0), 0.0)
        self.inv_k2 = inv
        kd2 = self.kd[0] ** 2 + self.kd[1] ** 2 + self.kd[2] ** 2
        self.inv_kd2 = np.where(kd2 > 0, 1.0 / np.where(kd2 > 0, kd2, 1.0), 0.0)
        mx = np.abs(np.fft.rfftfreq(nx, 1.0 / nx)) < nx / 3.0
        my = np.abs(np.fft.fftfreq(ny, 1.0 / ny)) < ny / 3.0
        mz = np.abs(np.fft.fftfreq(nz, 1.0 / nz)) < nz / 3.0
        self.mask = (mz[:, None, None] & my[None, :, None] & mx[None, None, :]).astype(np.float64)

    # transforms
    def fwd(self, a: np.ndarray) -> np.ndarray:
        return _fft.rfft3(a)

    def inv(self, ah: np.ndarray) -> np.ndarray:
        return _fft.irfft3(ah, self.shape)

    # scalar/vector operators on physical arrays
    def deriv(self, a: np.ndarray, i: int) -> np.ndarray:
        return self.inv(1j * self.kd[i] * self.fwd(a))

    def grad(self, f: np.ndarray) -> np.ndarray:
        fh = self.fwd(f)
        return np.stack([self.inv(1j * self.kd[i] * fh) for i in range(3)], axis=-4)

    def grad_vec(self, X: np.ndarray) -> np.ndarray:
        """Jacobian J[..., i, j, :, :, :] = d_j X_i."""
        Xh = self.fwd(X)
        return np.stack([self.inv(1j * self.kd[j] * Xh) for j in range(3)], axis=-4)

    def div(self, X: np.ndarray) -> np.ndarray:
        Xh = self.fwd(X)
        return self.inv(sum(1j * self.kd[i] * Xh[..., i, :, :, :] for i in range(3)))

    def curl_hat(self, Xh: np.ndarray) -> np.ndarray:
        k = self.kd
        c0 = 1j * (k[1] * Xh[..., 2, :, :, :] - k[2] * Xh[..., 1, :, :, :])
        c1 = 1j * (k[2] * Xh[..., 0, :, :, :] - k[0] * Xh[..., 2, :, :, :])
        c2 = 1j * (k[0] * Xh[..., 1, :, :, :] - k[1] * Xh[..., 0, :, :, :])
        return np.stack([c0, c1, c2], axis=-4)

    def curl(self, X: np.ndarray) -> np.ndarray:
        return self.inv(self.curl_hat(self.fwd(X)))

    def lap(self, a: np.ndarray) -> np.ndarray:
        return self.inv(-self.k2 * self.fwd(a))

    def ilap(self, a: np.ndarray) -> np.ndarray:
        return self.inv(-self.inv_k2 * self.fwd(a))

    def leray_hat(self, Xh: np.ndarray) -> np.ndarray:
        k = self.kd
        kdotx = sum(k[i] * Xh[..., i, :, :, :] for i in range(3)) * self.inv_kd2
        return np.stack([Xh[..., i, :, :, :] - k[i] * kdotx for i in range(3)], axis=-4)

    def leray(self, X: np.ndarray) -> np.ndarray:
        return self.inv(self.leray_hat(self.fwd(X)))

    def dealias(self, a: np.ndarray) -> np.ndarray:
        return self.inv(self.mask * self.fwd(a))

    def advect(self, B: np.ndarray, X: np.ndarray) -> np.ndarray:
        """(B . grad) X with the product dealiased."""
        J = self.grad_vec(X)
        return self.dealias(np.einsum("...jzyx,...ijzyx->...izyx", B, J))

    def ilap_curl(self, X: np.ndarray) -> np.ndarray:
        """(1/Delta) curl X, in one transform pair."""
        return self.inv(-self.inv_k2 * self.curl_hat(self.fwd(X)))

    def grad_ilap_div(self, X: np.ndarray) -> np.ndarray:
        """grad (1/Delta) div X, the gradient part of the Leray split."""
        Xh = self.fwd(X)
        s = -self.inv_kd2 * sum(1j * self.kd[i] * Xh[..., i, :, :, :] for i in range(3))
        return np.stack([self.inv(1j * self.kd[i] * s) for i in range(3)], axis=-4)

    def ilap_div(self, X: np.ndarray) -> np.ndarray:
        """(1/Delta) div X.

        Uses the derivative symbol for 1/Delta so that grad of the result is exactly
        the gradient part of the Leray split (matters only on Nyquist modes).
        """
        Xh = self.fwd(X)
        return self.inv(-self.inv_kd2 * sum(1j * self.kd[i] * Xh[..., i, :, :, :] for i in range(3)))

    def spectral_l2_sq(self, a: np.ndarray) -> float:
        """Squared L2 norm of a slice computed from its rfft coefficients (Parseval)."""
        ah = self.fwd(a)
        nx = self.shape[2]
        w = np.full(ah.shape[-1], 2.0)
        w[0] = 1.0
        if nx % 2 == 0:
            w[-1] = 1.0
        n = float(np.prod(self.shape))
        return float(np.sum(w * np.abs(ah) ** 2) / n * self.grid.cell_volume)


@functools.lru_cache(maxsize=16)
def _workspace(counts: tuple[int, int, int], lengths: tuple[float, float, float]) -> SpectralWorkspace:
    return SpectralWorkspace(Grid(counts[0], counts[1], counts[2], lengths))


def workspace(grid: Grid) -> SpectralWorkspace:
    return _workspace(grid.counts, grid.box_length)


def map_slices(X: FieldSnapshot, fn: Callable[[np.ndarray], np.ndarray], components: int,
               name: str = "") -> FieldSnapshot:
    """Apply ``fn`` to each time slice (shape (c, nz, ny, nx)) of ``X``."""
    g = X.grid
    out = np.empty((g.nt, components) + g.shape3)
    for n in range(g.nt):
        out[n] = np.reshape(fn(X.data[n]), (components,) + g.shape3)
    return FieldSnapshot(g, out, name)


def gradient(f: FieldSnapshot) -> FieldSnapshot:
    """Spectral gradient of a scalar field."""
    require_scalar(f, "gradient input")
    ws = workspace(f.grid)
    return map_slices(f, lambda a: ws.grad(a[0]), 3)


def curl(X: FieldSnapshot) -> FieldSnapshot:
    require_vector(X, "curl input")
    ws = workspace(X.grid)
    return map_slices(X, ws.curl, 3)


def divergence(X: FieldSnapshot) -> FieldSnapshot:
    require_vector(X, "divergence input")
    ws = workspace(X.grid)
    return map_slices(X, ws.div, 1)


def laplacian(X: FieldSnapshot) -> FieldSnapshot:
    ws = workspace(X.grid)
    return map_slices(X, ws.lap, X.components)


def inverse_laplacian(f: FieldSnapshot) -> FieldSnapshot:
    """Spectral 1/Delta with the zero mode of the output set to 0."""
    ws = workspace(f.grid)
    return map_slices(f, ws.ilap, f.components)


def leray_project(X: FieldSnapshot) -> FieldSnapshot:
    require_vector(X, "leray_project input")
    ws = workspace(X.grid)
    return map_slices(X, ws.leray, 3)


def dealias(X: FieldSnapshot) -> FieldSnapshot:
    ws = workspace(X.grid)
    return map_slices(X, ws.dealias, X.components)


def interior_slices(nt: int) -> np.ndarray:
    """Time indices used by space-time integrals: boundary slices dropped when nt >= 3."""
    return np.arange(1, nt - 1) if nt >= 3 else np.arange(nt)


def periodic_offsets(grid: Grid, x0: Sequence[float]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Minimum-image offsets (dx, dy, dz) of every node from ``x0``, each shaped for broadcasting."""
    out = []
    for i in range(3):
        L = grid.box_length[i]
        d = (grid.axis(i) - x0[i] + 0.5 * L) % L - 0.5 * L
        out.append(d)
    return out[0][None, None, :], out[1][None, :, None], out[2][:, None, None]


def periodic_distance(grid: Grid, x0: Sequence[float]) -> np.ndarray:
    dx, dy, dz = periodic_offsets(grid, x0)
    return np.sqrt(dx * dx + dy * dy + dz * dz)


@dataclass(frozen=True)
class ParabolicCylinder:
    """Q_r(t0, x0) = ]t0 - r^2, t0 + r^2[ x B(x0, r)."""

    t0: float
    x0: tuple[float, float, float]
    r: float

    def __post_init__(self) -> None:
        if not self.r > 0:
            raise ParameterError(f"cylinder radius must be positive, got {self.r}")
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))

    def shrink(self, factor: float) -> "ParabolicCylinder":
        return ParabolicCylinder(self.t0, self.x0, self.r * factor)

    def with_radius(self, r: float) -> "ParabolicCylinder":
        return ParabolicCylinder(self.t0, self.x0, r)

    def to_dict(self) -> dict:
        return {"t0": self.t0, "x0": list(self.x0), "r": self.r}


@dataclass(frozen=True, eq=False)
class CylinderMask:
    """Cells of a grid whose centers lie in a cylinder, with the quadrature weight dt*h^3."""

    time_index: np.ndarray
    spatial: np.ndarray
    cell_measure: float
    cylinder: ParabolicCylinder
    flat_index: np.ndarray = field(repr=False, default=None)

    @property
    def n_cells(self) -> int:
        return int(self.time_index.size * np.count_nonzero(self.spatial))

    @property
    def measure(self) -> float:
        return self.n_cells * self.cell_measure

    def values(self, X: FieldSnapshot | np.ndarray) -> np.ndarray:
        """Array of shape (n_times, components, n_ball_cells)."""
        data = X.data if isinstance(X, FieldSnapshot) else X
        sub = data[self.time_index]
        return sub.reshape(sub.shape[:2] + (-1,))[..., self.flat_index]

    def integrate(self, density: np.ndarray) -> float:
        """Midpoint integral of a per-cell density shaped like ``values(...)[:, 0]``."""
        return float(np.sum(density) * self.cell_measure)


def check_cylinder_inside(grid: Grid, Q: ParabolicCylinder, check_time: bool = True) -> None:
    """Raise DomainError naming the violated face when Q leaves the sampled domain."""
    for i, ax in enumerate("xyz"):
        L, h = grid.box_length[i], grid.spacing[i]
        if 2 * Q.r > L - 2 * h + 1e-12:
            raise DomainError(f"cylinder of radius {Q.r} exits the periodic box along {ax} "
                              f"(needs 2r <= L - 2h = {L - 2 * h:.6g})")
    if check_time:
        times = grid.times
        lo, hi = (times[0] + grid.dt, times[-1] - grid.dt) if grid.nt >= 3 else (times[0], times[-1])
        if Q.t0 - Q.r ** 2 < lo - 1e-12:
            raise DomainError(f"cylinder exits the sampled window at the lower time face "
                              f"(t0 - r^2 = {Q.t0 - Q.r ** 2:.6g} < {lo:.6g})")
        if Q.t0 + Q.r ** 2 > hi + 1e-12:
            raise DomainError(f"cylinder exits the sampled window at the upper time face "
                              f"(t0 + r^2 = {Q.t0 + Q.r ** 2:.6g} > {hi:.6g})")


def restrict_cylinder(X: FieldSnapshot | Grid, Q: ParabolicCylinder, clip_time: bool = False) -> CylinderMask:
    """Index set of grid cells whose centers lie in ``Q`` plus the cell measure.

    Boundary time slices are never included (when nt >= 3). With ``clip_time`` the
    cylinder may extend past the sampled window in time and is intersected with it.
    A cylinder containing no cell center raises ``DomainError``.
    """
    grid = X.grid if isinstance(X, FieldSnapshot) else X
    check_cylinder_inside(grid, Q, check_time=not clip_time)
    times = grid.times
    idx = interior_slices(grid.nt)
    if grid.nt == 1:
        tsel = idx
    else:
        tsel = idx[np.abs(times[idx] - Q.t0) < Q.r ** 2]
    spatial = periodic_distance(grid, Q.x0) < Q.r
    if tsel.size == 0 or not spatial.any():
        raise DomainError(f"cylinder {Q} contains no cell center")
    dt = grid.dt if grid.nt > 1 else 1.0
    return CylinderMask(tsel, spatial, dt * grid.cell_volume, Q, np.flatnonzero(spatial.ravel()))
