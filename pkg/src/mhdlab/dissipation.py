"""Mollifier ladders, regularized energy balances and the dissipation distribution.

Space-time mollification uses phi_{alpha,eps}(t, x) = theta_alpha(t) phi_eps(x) with
theta, phi normalized bumps. Time convolution is a discrete sum over slices with
renormalized weights. Space convolution multiplies Fourier coefficients by the
kernel symbol, either the DFT of the renormalized sampled kernel ("sampled") or the
exact continuous radial symbol ("continuous").

All pointwise terms are formed spectrally on whole slices and then cropped to the
bounding box of the test-function bank, so memory scales with the bank, not the grid.

lambda is assembled two ways:

  (i)  -d_t E + Delta E - 2(|grad u|^2 + |grad b|^2) - div(|u|^2 b + |b|^2 u)
       - 2 <div(P(u+b))> + 2(f.u + g.b),         E = |u|^2 + |b|^2,
  (ii) the same expression for the companion pair (v, h) with pressures (q, r)
       and forces (k, l), where the pressure term is pointwise.

The pressure term of (i) is the iterated limit lim_eps lim_alpha of
div(P_{alpha,eps}(u_{alpha,eps} + b_{alpha,eps})), extrapolated along the ladders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from . import _fft
from .errors import DomainError, ParameterError, ToleranceError, ValidationError
from .grid import (FieldSnapshot, Grid, ParabolicCylinder, SpectralWorkspace, check_cylinder_inside,
                   periodic_distance, require_same_grid, require_vector, workspace)
from .profiles import bump

SPACE_KERNELS = ("sampled", "continuous")
_QUAD_NODES = 800
ABS_FLOOR = 1e-12  # round-off floor for tolerances and error bars


# ---------------------------------------------------------------------------
# kernels

def time_weights(profile: str, alpha: float, dt: float) -> np.ndarray:
    """Renormalized weights theta_alpha(m dt) dt for m = -M..M, support inside (-alpha, alpha)."""
    M = math.ceil(alpha / dt - 1e-9) - 1
    if alpha < 2.0 * dt * (1 - 1e-9):
        raise ParameterError(f"time width alpha={alpha:g} is below 2*dt={2 * dt:g}")
    m = np.arange(-M, M + 1)
    w = bump(profile)(m * dt / alpha)
    return w / w.sum()


def time_moment(profile: str, alpha: float, dt: float) -> float:
    """Discrete second moment sum_m w_m (m dt)^2 of the time kernel."""
    w = time_weights(profile, alpha, dt)
    M = (w.size - 1) // 2
    return float(np.sum(w * (np.arange(-M, M + 1) * dt) ** 2))


@lru_cache(maxsize=64)
def _space_kernel(counts: tuple, lengths: tuple, profile: str, eps: float, kind: str):
    grid = Grid(*counts, box_length=lengths)
    ws = workspace(grid)
    if kind == "sampled":
        d = periodic_distance(grid, (0.0, 0.0, 0.0))
        w = bump(profile)(d / eps)
        if w.sum() <= 0:
            raise ParameterError(f"space width eps={eps:g} contains no grid node")
        w = w / w.sum()
        symbol = _fft.rfft3(w).real
        dx = (grid.axis(0) + 0.5 * lengths[0]) % lengths[0] - 0.5 * lengths[0]
        m2 = float(np.sum(w * dx[None, None, :] ** 2))
    elif kind == "continuous":
        r, wq = np.polynomial.legendre.leggauss(_QUAD_NODES)
        r, wq = 0.5 * (r + 1.0), 0.5 * wq
        radial = bump(profile)(r) * r * r * wq
        mass = radial.sum()
        k2u, inverse = np.unique(ws.k2, return_inverse=True)
        s = np.sqrt(k2u)[:, None] * eps * r[None, :]
        table = (np.sinc(s / np.pi) * radial[None, :]).sum(axis=1) / mass
        symbol = table[inverse].reshape(ws.k2.shape)
        m2 = float(eps * eps * np.sum(radial * r * r) / (3.0 * mass))
    else:
        raise ParameterError(f"unknown space kernel {kind!r}; choose from {SPACE_KERNELS}")
    symbol.setflags(write=False)
    return symbol, m2


def space_symbol(grid: Grid, profile: str, eps: float, kind: str = "continuous") -> tuple[np.ndarray, float]:
    """(Fourier symbol on the rfft grid, second moment per axis) of phi_eps."""
    bump(profile)
    return _space_kernel(grid.counts, tuple(grid.box_length), profile, float(eps), kind)


@dataclass(frozen=True)
class MollifierLadder:
    """Decreasing time widths ``alphas`` and space widths ``epsilons`` with their profiles."""

    alphas: tuple[float, ...]
    epsilons: tuple[float, ...]
    theta_profile: str = "exp"
    phi_profile: str = "exp"
    space_kernel: str = "continuous"

    def __post_init__(self) -> None:
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        bump(self.theta_profile)
        bump(self.phi_profile)
        if self.space_kernel not in SPACE_KERNELS:
            raise ParameterError(f"unknown space kernel {self.space_kernel!r}; choose from {SPACE_KERNELS}")
        for name, seq in (("alphas", self.alphas), ("epsilons", self.epsilons)):
            if not seq:
                raise ParameterError(f"{name} must not be empty")
            if any(not x > 0 for x in seq):
                raise ParameterError(f"{name} must be positive, got {seq}")
            if any(a <= b for a, b in zip(seq, seq[1:])):
                raise ParameterError(f"{name} must be strictly decreasing, got {seq}")

    @classmethod
    def geometric(cls, grid: Grid, rungs: int = 4, ratio: float = 2.0, alpha_min: float | None = None,
                  eps_min: float | None = None, **kw) -> "MollifierLadder":
        """Ratio-``ratio`` ladders ending at the resolvability limits 2*dt and 2*h by default."""
        if rungs < 1 or ratio <= 1:
            raise ParameterError("need rungs >= 1 and ratio > 1")
        a0 = 2.0 * grid.dt if alpha_min is None else alpha_min
        e0 = 2.0 * max(grid.spacing) if eps_min is None else eps_min
        scale = [ratio ** (rungs - 1 - i) for i in range(rungs)]
        return cls(tuple(a0 * s for s in scale), tuple(e0 * s for s in scale), **kw)

    def validate(self, grid: Grid, time: bool = True) -> None:
        h = max(grid.spacing)
        if min(self.epsilons) < 2.0 * h * (1 - 1e-9):
            raise ParameterError(f"space width {min(self.epsilons):g} is below 2*h = {2 * h:g}")
        if time and min(self.alphas) < 2.0 * grid.dt * (1 - 1e-9):
            raise ParameterError(f"time width {min(self.alphas):g} is below 2*dt = {2 * grid.dt:g}")

    def half_windows(self, dt: float) -> list[int]:
        return [(time_weights(self.theta_profile, a, dt).size - 1) // 2 for a in self.alphas]

    def alpha_moments(self, dt: float) -> np.ndarray:
        return np.array([time_moment(self.theta_profile, a, dt) for a in self.alphas])

    def eps_moments(self, grid: Grid) -> np.ndarray:
        return np.array([space_symbol(grid, self.phi_profile, e, self.space_kernel)[1] for e in self.epsilons])

    def to_dict(self) -> dict:
        return {"alphas": list(self.alphas), "epsilons": list(self.epsilons),
                "theta_profile": self.theta_profile, "phi_profile": self.phi_profile,
                "space_kernel": self.space_kernel}

    @classmethod
    def from_dict(cls, d: dict) -> "MollifierLadder":
        return cls(tuple(d["alphas"]), tuple(d["epsilons"]), d.get("theta_profile", "exp"),
                   d.get("phi_profile", "exp"), d.get("space_kernel", "continuous"))


def _time_convolve(A: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Valid-mode convolution along axis 0 with a symmetric weight vector."""
    M = (w.size - 1) // 2
    n = A.shape[0] - 2 * M
    if n <= 0:
        raise DomainError("time window shorter than the mollifier support")
    out = w[0] * A[0:n]
    for m in range(1, w.size):
        out = out + w[m] * A[m:m + n]
    return out


def mollify(X: FieldSnapshot, alpha: float | None, epsilon: float | None, theta_profile: str = "exp",
            phi_profile: str = "exp", space_kernel: str = "continuous") -> FieldSnapshot:
    """X_{alpha,eps} on the slices whose time neighbourhood lies inside the window.

    ``alpha=None`` skips time mollification and ``epsilon=None`` skips space mollification.
    """
    grid = X.grid
    data = X.data
    if epsilon is not None:
        if epsilon < 2.0 * max(grid.spacing) * (1 - 1e-9):
            raise ParameterError(f"space width {epsilon:g} is below 2*h = {2 * max(grid.spacing):g}")
        ws = workspace(grid)
        sym, _ = space_symbol(grid, phi_profile, epsilon, space_kernel)
        data = np.stack([ws.inv(sym * ws.fwd(data[n])) for n in range(grid.nt)])
    if alpha is None:
        return FieldSnapshot(grid, data, X.name)
    w = time_weights(theta_profile, alpha, grid.dt)
    M = (w.size - 1) // 2
    if grid.nt <= 2 * M:
        raise DomainError(f"alpha={alpha:g} needs more than {2 * M} slices, have {grid.nt}")
    sub = grid.with_time(grid.nt - 2 * M, t_start=float(grid.times[M]))
    return FieldSnapshot(sub, _time_convolve(data, w), X.name)


# ---------------------------------------------------------------------------
# extrapolation

@dataclass(frozen=True)
class Extrapolation:
    value: np.ndarray
    error: np.ndarray
    converged: np.ndarray

    def to_dict(self) -> dict:
        return {"value": np.asarray(self.value).tolist(), "error": np.asarray(self.error).tolist(),
                "converged": np.asarray(self.converged).tolist()}


def _neville_zero(values: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Polynomial through (xs, values[..., i]) evaluated at 0."""
    P = [values[..., i] for i in range(xs.size)]
    for d in range(1, xs.size):
        P = [(xs[i + d] * P[i] - xs[i] * P[i + 1]) / (xs[i + d] - xs[i]) for i in range(len(P) - 1)]
    return P[0]


def richardson(values: np.ndarray, xs: Sequence[float]) -> Extrapolation:
    """Extrapolate ``values[..., i]`` sampled at ``xs`` (coarse to fine) to x = 0.

    The estimate uses every rung; the error bar is its distance to the estimate
    from the finer rungs only, floored at the rounding level of the data.
    A ladder is flagged non-convergent when that increment does not shrink.
    """
    v = np.asarray(values, dtype=float)
    x = np.asarray(xs, dtype=float)
    n = x.size
    if v.shape[-1] != n or n == 0:
        raise ParameterError("values and abscissae disagree in length")
    floor = 64 * np.finfo(float).eps * np.max(np.abs(v), axis=-1)
    if n == 1:
        return Extrapolation(v[..., 0], np.full(v.shape[:-1], np.inf), np.zeros(v.shape[:-1], bool))
    est = _neville_zero(v, x)
    fine = _neville_zero(v[..., 1:], x[1:])
    err = np.maximum(np.abs(est - fine), floor)
    if n >= 3:
        prev = np.abs(fine - _neville_zero(v[..., 2:], x[2:]))
        converged = err <= np.maximum(prev, floor)
    else:
        converged = np.ones(err.shape, bool)
    return Extrapolation(est, err, converged)


# ---------------------------------------------------------------------------
# test-function bank

@dataclass(frozen=True, eq=False)
class TestBank:
    """Non-negative C^2 bumps S_i(x) T_j(t) inside a cylinder, evaluated on a crop.

    The crop is the periodic index box covering the cylinder ball; pairings are
    dt*h^3 sums over it in a fixed order.
    """

    grid: Grid
    cylinder: ParabolicCylinder
    space_centers: np.ndarray
    space_radii: np.ndarray
    time_centers: np.ndarray
    time_halfwidths: np.ndarray
    crop_index: tuple[np.ndarray, np.ndarray, np.ndarray] = field(repr=False)
    space_profiles: np.ndarray = field(repr=False)
    time_profiles: np.ndarray = field(repr=False)

    __test__ = False  # not a pytest class

    @classmethod
    def lattice(cls, grid: Grid, Q: ParabolicCylinder) -> "TestBank":
        """Centre bump of radius R = Q.r plus six axis translates of radius R/2 at offset R/2,
        times three time bumps: half-width R^2 at t0 and R^2/2 at t0 -+ R^2/2."""
        check_cylinder_inside(grid, Q, check_time=grid.nt > 1)
        R = Q.r
        x0 = np.array(Q.x0)
        offs = [np.zeros(3)] + [s * 0.5 * R * np.eye(3)[i] for i in range(3) for s in (1, -1)]
        centers = np.array([x0 + o for o in offs])
        radii = np.array([R] + [0.5 * R] * 6)
        tc = np.array([Q.t0, Q.t0 - 0.5 * R * R, Q.t0 + 0.5 * R * R])
        tw = np.array([R * R, 0.5 * R * R, 0.5 * R * R])
        return cls.build(grid, Q, centers, radii, tc, tw)

    @classmethod
    def build(cls, grid: Grid, Q: ParabolicCylinder, centers, radii, tc, tw) -> "TestBank":
        centers, radii = np.asarray(centers, float), np.asarray(radii, float)
        tc, tw = np.asarray(tc, float), np.asarray(tw, float)
        if centers.size == 0 or tc.size == 0:
            raise ValidationError("empty test bank")
        axes, offsets = [], []
        for i in range(3):  # x, y, z
            L = grid.box_length[i]
            d = (grid.axis(i) - Q.x0[i] + 0.5 * L) % L - 0.5 * L
            sel = np.flatnonzero(np.abs(d) <= Q.r + 1e-12)
            sel = sel[np.argsort(d[sel])]
            axes.append(sel)
            offsets.append(d[sel])
        crop = (axes[2], axes[1], axes[0])
        c = centers - np.array(Q.x0)
        dist = np.sqrt((offsets[0][None, None, None, :] - c[:, 0, None, None, None]) ** 2
                       + (offsets[1][None, None, :, None] - c[:, 1, None, None, None]) ** 2
                       + (offsets[2][None, :, None, None] - c[:, 2, None, None, None]) ** 2)
        S = bump("c2")(dist / radii[:, None, None, None])
        if grid.nt > 1:
            T = bump("c2")((grid.times[None, :] - tc[:, None]) / tw[:, None])
        else:
            T = np.ones((tc.size, 1))
        if not S.any() or not T.any():
            raise ValidationError("test bank has no support on the grid")
        bank = cls(grid, Q, centers, radii, tc, tw, crop, S, T)
        lo, hi = bank.slice_range
        if grid.nt >= 3 and (lo < 1 or hi > grid.nt - 2):
            raise DomainError("test bank touches a boundary time slice")
        return bank

    @property
    def n_functions(self) -> int:
        return self.time_centers.size * self.space_centers.shape[0]

    @property
    def names(self) -> list[str]:
        return [f"t{j}s{i}" for j in range(self.time_centers.size) for i in range(self.space_centers.shape[0])]

    @property
    def slice_range(self) -> tuple[int, int]:
        """First and last slice where some time profile is positive."""
        nz = np.flatnonzero(self.time_profiles.any(axis=0))
        return int(nz[0]), int(nz[-1])

    @property
    def crop_shape(self) -> tuple[int, int, int]:
        return tuple(a.size for a in self.crop_index)

    def crop(self, a: np.ndarray) -> np.ndarray:
        iz, iy, ix = self.crop_index
        return a[..., iz[:, None, None], iy[None, :, None], ix[None, None, :]]

    def _crop_dft(self):
        if not hasattr(self, "_dft"):
            nz, ny, nx = self.grid.shape3
            iz, iy, ix = self.crop_index
            kz, ky = np.fft.fftfreq(nz, 1.0 / nz), np.fft.fftfreq(ny, 1.0 / ny)
            kx = np.arange(nx // 2 + 1)
            Ez = np.exp(2j * np.pi * np.outer(iz, kz) / nz) / nz
            Ey = np.exp(2j * np.pi * np.outer(iy, ky) / ny) / ny
            wx = np.full(kx.size, 2.0)
            wx[0] = 1.0
            if nx % 2 == 0:
                wx[-1] = 1.0
            Ex = wx * np.exp(2j * np.pi * np.outer(ix, kx) / nx) / nx
            object.__setattr__(self, "_dft", (Ez, Ey, Ex))
        return self._dft

    def crop_inverse(self, ah: np.ndarray) -> np.ndarray:
        """Real field on the crop from rfft coefficients, without a full inverse transform."""
        Ez, Ey, Ex = self._crop_dft()
        a = np.moveaxis(np.tensordot(Ez, ah, axes=(1, -3)), 0, -3)
        a = np.moveaxis(np.tensordot(Ey, a, axes=(1, -2)), 0, -2)
        return np.tensordot(a, Ex, axes=(-1, 1)).real

    def pair(self, density: np.ndarray, start: int) -> np.ndarray:
        """Pair a cropped scalar density over slices start.. with every function.

        Slices outside the density's range must carry zero time weight.
        """
        n = density.shape[0]
        T = self.time_profiles[:, start:start + n]
        lo, hi = self.slice_range
        if start > lo or start + n - 1 < hi:
            raise DomainError("density does not cover the test bank time support")
        spatial = density.reshape(n, -1) @ self.space_profiles.reshape(self.space_profiles.shape[0], -1).T
        dt = self.grid.dt if self.grid.nt > 1 else 1.0
        return (T @ spatial).ravel() * dt * self.grid.cell_volume

    def to_dict(self) -> dict:
        return {"cylinder": self.cylinder.to_dict(), "space_centers": self.space_centers.tolist(),
                "space_radii": self.space_radii.tolist(), "time_centers": self.time_centers.tolist(),
                "time_halfwidths": self.time_halfwidths.tolist(), "names": self.names}


# ---------------------------------------------------------------------------
# N, R, S, T

def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("i...,i...->...", a, b)


class _Moll:
    """Space mollification with one symbol plus spectral derivatives on one slice."""

    def __init__(self, ws: SpectralWorkspace, sym: np.ndarray, dealias: bool):
        self.ws, self.sym, self.dealias = ws, sym, dealias

    def hat(self, a):
        ah = self.ws.fwd(a)
        return ah * self.ws.mask if self.dealias else ah

    def m(self, a):
        """a_eps."""
        return self.ws.inv(self.sym * self.ws.fwd(a))

    def div_m(self, T):
        """div((T)_eps) for T[j, ...] (contracted over the first index)."""
        Th = self.hat(T)
        return self.ws.inv(self.sym * sum(1j * self.ws.kd[j] * Th[j] for j in range(3)))

    def adv_m(self, X, Q):
        """(X . grad) Q_eps."""
        Qh = self.sym * self.ws.fwd(Q)
        return sum(X[j] * self.ws.inv(1j * self.ws.kd[j] * Qh) for j in range(3))

    def comm(self, X, Q):
        """div((X Q)_eps) - (X . grad) Q_eps for scalar or vector Q."""
        XQ = np.einsum("j...,...->j...", X, Q) if Q.ndim == 3 else X[:, None] * Q[None]
        return self.div_m(XQ) - self.adv_m(X, Q)

    def advect(self, X, Z):
        """(X . grad) Z, dealiased if requested."""
        J = self.ws.grad_vec(Z)
        p = np.einsum("j...,ij...->i...", X, J)
        return self.ws.inv(self.hat(p)) if self.dealias else p

    def div(self, F):
        Fh = self.hat(F)
        return self.ws.inv(sum(1j * self.ws.kd[j] * Fh[j] for j in range(3)))


def n_slice(M: _Moll, X, Y, Z) -> np.ndarray:
    """N_eps(X, Y, Z) on one slice."""
    return (_dot(M.m(Y), M.m(M.advect(X, Z))) + _dot(M.m(Z), M.m(M.advect(X, Y)))
            - M.div(_dot(Y, Z)[None] * X))


def nrst_slice(M: _Moll, X, Y, Z) -> dict[str, np.ndarray]:
    """N, R, S, T and the key cancellation field on one slice.

    With g = grad theta_eps and d_y X = X(x-y) - X(x), the y-integrals reduce to

        int (g . d_y X) Q(x-y) dy = div((X Q)_eps) - (X . grad) Q_eps,
        int (g . d_y X) dy        = (div X)_eps,

    which give R, S, T in closed form; the second line is the cancellation used
    throughout the proofs and vanishes for divergence-free X.
    """
    divX = M.m(M.ws.div(X))
    cY, cZ = M.comm(X, Y), M.comm(X, Z)
    Ye, Ze = M.m(Y), M.m(Z)
    S = _dot(cY - Y * divX[None], Ze - Y)
    T = _dot(cZ - Z * divX[None], Ye - Z)
    YZ = _dot(Y, Z)
    R = M.comm(X, YZ) - _dot(Y, cY) - _dot(Z, cZ) + YZ * divX
    return {"N": n_slice(M, X, Y, Z), "R": R, "S": S, "T": T, "cancellation": divX}


def _check_triple(X, Y, Z, epsilon):
    grid = require_same_grid(X, Y, Z)
    for name, A in (("X", X), ("Y", Y), ("Z", Z)):
        require_vector(A, name)
    if epsilon < 2.0 * max(grid.spacing) * (1 - 1e-9):
        raise ParameterError(f"space width {epsilon:g} is below 2*h = {2 * max(grid.spacing):g}")
    if 2 * epsilon >= 0.5 * min(grid.box_length):
        raise DomainError("quadrature support B(0, eps) wraps around the periodic box")
    return grid


def nrst(X: FieldSnapshot, Y: FieldSnapshot, Z: FieldSnapshot, epsilon: float, profile: str = "exp",
         kernel: str = "continuous", dealias: bool = True) -> dict[str, FieldSnapshot]:
    """The four fields N, R, S, T (and the cancellation field) on every slice."""
    grid = _check_triple(X, Y, Z, epsilon)
    ws = workspace(grid)
    M = _Moll(ws, space_symbol(grid, profile, epsilon, kernel)[0], dealias)
    out = {k: np.empty((grid.nt, 1) + grid.shape3) for k in ("N", "R", "S", "T", "cancellation")}
    for n in range(grid.nt):
        for k, a in nrst_slice(M, X.data[n], Y.data[n], Z.data[n]).items():
            out[k][n, 0] = a
    return {k: FieldSnapshot(grid, a, k) for k, a in out.items()}


def nrst_quadrature(X: np.ndarray, Y: np.ndarray, Z: np.ndarray, grid: Grid, epsilon: float,
                    profile: str = "exp", kernel: str = "continuous") -> dict[str, np.ndarray]:
    """Direct y-sums of R, S, T on one slice (oracle; cost grows like N^6).

    The kernel gradient is the spectral derivative of the discrete kernel, so the
    sum runs over every periodic offset.
    """
    ws = workspace(grid)
    sym, _ = space_symbol(grid, profile, epsilon, kernel)
    g = np.stack([ws.inv(1j * ws.kd[j] * sym) for j in range(3)])
    Ze, Ye = ws.inv(sym * ws.fwd(Z)), ws.inv(sym * ws.fwd(Y))
    R = np.zeros(grid.shape3)
    S = np.zeros(grid.shape3)
    T = np.zeros(grid.shape3)
    K = np.zeros(grid.shape3)
    nz, ny, nx = grid.shape3
    for a in range(nz):
        for b_ in range(ny):
            for c in range(nx):
                gy = g[:, a, b_, c]
                sh = lambda F: np.roll(F, (a, b_, c), axis=(-3, -2, -1))  # noqa: E731  F(x - y)
                Xs, Ys, Zs = sh(X), sh(Y), sh(Z)
                gx = _dot(gy[:, None, None, None], Xs - X)
                K += gx
                R += gx * _dot(Ys - Z, Zs - Y)
                S += gx * _dot(Ys - Y, Ze - Y)
                T += gx * _dot(Zs - Z, Ye - Z)
    return {"R": R, "S": S, "T": T, "cancellation": K}


def mu_eta(u: FieldSnapshot, b: FieldSnapshot, v: FieldSnapshot, h: FieldSnapshot, epsilon: float,
           profile: str = "exp", kernel: str = "continuous") -> tuple[FieldSnapshot, FieldSnapshot]:
    """mu_eps = N(u,b,b) + N(b,u,u) and eta_eps = N(v,h,h) + N(h,v,v)."""
    grid = _check_triple(u, b, v, epsilon)
    require_same_grid(u, h)
    ws = workspace(grid)
    M = _Moll(ws, space_symbol(grid, profile, epsilon, kernel)[0], True)
    mu = np.empty((grid.nt, 1) + grid.shape3)
    eta = np.empty_like(mu)
    for n in range(grid.nt):
        un, bn, vn, hn = u.data[n], b.data[n], v.data[n], h.data[n]
        mu[n, 0] = n_slice(M, un, bn, bn) + n_slice(M, bn, un, un)
        eta[n, 0] = n_slice(M, vn, hn, hn) + n_slice(M, hn, vn, vn)
    return FieldSnapshot(grid, mu, "mu"), FieldSnapshot(grid, eta, "eta")


# ---------------------------------------------------------------------------
# streaming evaluation on the bank crop

def _pointwise_terms(ws: SpectralWorkspace, bank: TestBank, u, b, Pu, Pb, f, g) -> dict[str, np.ndarray]:
    """Unmollified balance terms of one slice for the pair (u, b) with pressures (Pu, Pb)
    and forces (f, g), cropped.

    Derivatives of products are expanded by the Leibniz rule into products of spectral
    derivatives of the factors, e.g. Delta|u|^2 = 2 u.Delta u + 2|grad u|^2 and
    div(|u|^2 b) = 2 u.((b.grad)u) + |u|^2 div b; the transport products are the
    dealiased ones that enter the pressures and forces.
    """
    uh, bh = ws.fwd(u), ws.fwd(b)
    Ju = np.stack([ws.inv(1j * ws.kd[j] * uh) for j in range(3)], axis=1)
    Jb = np.stack([ws.inv(1j * ws.kd[j] * bh) for j in range(3)], axis=1)
    divu, divb = np.trace(Ju), np.trace(Jb)
    lapu, lapb = ws.inv(-ws.k2 * uh), ws.inv(-ws.k2 * bh)
    Mu = ws.dealias(np.einsum("j...,ij...->i...", b, Ju))
    Mb = ws.dealias(np.einsum("j...,ij...->i...", u, Jb))
    gPu = ws.grad(Pu)
    gPb = gPu if Pb is Pu else ws.grad(Pb)
    uu, bb = _dot(u, u), _dot(b, b)
    grad2 = np.sum(Ju * Ju, axis=(0, 1)) + np.sum(Jb * Jb, axis=(0, 1))
    c = bank.crop
    return {
        "E": c(uu + bb), "lapE": c(2 * (_dot(u, lapu) + _dot(b, lapb)) + 2 * grad2), "grad2": c(grad2),
        "div_flux": c(2 * _dot(u, Mu) + 2 * _dot(b, Mb) + uu * divb + bb * divu),
        "work": c(_dot(f, u) + _dot(g, b)),
        "div_press": c(_dot(gPu, u) + Pu * divu + _dot(gPb, b) + Pb * divb),
        "u": c(u), "b": c(b), "Su": c(lapu - Mu - gPu + f), "Sb": c(lapb - Mb - gPb + g),
        "_Mu": Mu, "_Mb": Mb,
    }


def _slice_hats(ws: SpectralWorkspace, u, b, P, f, g, Mu, Mb) -> dict[str, np.ndarray]:
    """Fourier coefficients shared by every eps rung of one slice."""
    hats = {"u": ws.fwd(u), "b": ws.fwd(b), "Mu": ws.fwd(Mu), "Mb": ws.fwd(Mb), "P": ws.fwd(P),
            "f": ws.fwd(f) if np.any(f) else None, "g": ws.fwd(g) if np.any(g) else None}
    wh = hats["u"] + hats["b"]
    hats["divw"] = sum(1j * ws.kd[j] * wh[j] for j in range(3))
    return hats


def _eps_terms(ws: SpectralWorkspace, bank: TestBank, sym, hats: dict) -> dict[str, np.ndarray]:
    """Space-mollified quantities of one slice, evaluated on the crop only."""
    ci = bank.crop_inverse
    ik = [1j * ws.kd[j] for j in range(3)]
    out = {}
    for key in ("u", "b"):
        Xh = sym * hats[key]
        out[key] = ci(Xh)
        out["J" + key] = np.stack([ci(ik[j] * Xh) for j in range(3)], axis=1)
        out["L" + key] = ci(-ws.k2 * Xh)
    out["Mu"] = ci(sym * hats["Mu"])
    out["Mb"] = ci(sym * hats["Mb"])
    Ph = sym * hats["P"]
    out["P"] = ci(Ph)
    out["GP"] = np.stack([ci(ik[j] * Ph) for j in range(3)])
    for key in ("f", "g"):
        out[key] = ci(sym * hats[key]) if hats[key] is not None else np.zeros((3,) + bank.crop_shape)
    out["divw"] = ci(sym * hats["divw"])
    return out


def _central(A: np.ndarray, dt: float, step: int = 1) -> np.ndarray:
    return (A[2 * step:] - A[:-2 * step]) / (2.0 * step * dt)


@dataclass
class DefectTable:
    """Pairings on the (alpha, eps) ladder against the test bank.

    ``pressure[a, e, j]`` pairs div(P_{a,e}(u_{a,e} + b_{a,e})) with function j;
    ``terms`` holds each term of the regularized energy identity and ``residual``
    their sum; ``mu``/``eta`` are indexed by eps only; ``lam`` holds the assembled
    lambda pairings per route.
    """

    alphas: tuple[float, ...]
    epsilons: tuple[float, ...]
    names: list[str]
    pressure: np.ndarray
    terms: dict[str, np.ndarray] = field(default_factory=dict)
    residual: np.ndarray | None = None
    mu: np.ndarray | None = None
    eta: np.ndarray | None = None
    lam: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        arrays = [self.pressure, self.residual, self.mu, self.eta, *self.terms.values(), *self.lam.values()]
        for a in arrays:
            if a is not None and not np.all(np.isfinite(a)):
                raise ToleranceError("defect table contains non-finite entries")
        if list(self.alphas) != sorted(self.alphas, reverse=True) or \
                list(self.epsilons) != sorted(self.epsilons, reverse=True):
            raise ValidationError("defect table ladders must be decreasing")

    def to_dict(self) -> dict:
        d = {"alphas": list(self.alphas), "epsilons": list(self.epsilons), "functions": self.names,
             "pressure": self.pressure.tolist()}
        if self.residual is not None:
            d["residual"] = self.residual.tolist()
            d["terms"] = {k: v.tolist() for k, v in sorted(self.terms.items())}
        if self.mu is not None:
            d["mu"] = self.mu.tolist()
            d["eta"] = self.eta.tolist()
        if self.lam:
            d["lambda"] = {k: v.tolist() for k, v in sorted(self.lam.items())}
        return d


SliceSource = Callable[[int], dict]


def _snapshot_source(u, b, P, f, g, v=None, h=None, q=None, r=None, k=None, l=None) -> SliceSource:
    grid = u.grid
    zero = np.zeros((3,) + grid.shape3)

    def get(X, n, default=None):
        return X.data[n] if X is not None else default

    def src(n):
        d = {"u": u.data[n], "b": b.data[n], "P": P.data[n, 0], "f": get(f, n, zero), "g": get(g, n, zero)}
        if v is not None:
            d.update(v=v.data[n], h=h.data[n], q=q.data[n, 0], r=r.data[n, 0], k=k.data[n], l=l.data[n])
        return d
    return src


class _Stream:
    """One pass over the slices the bank and ladder need, collecting cropped arrays."""

    def __init__(self, grid: Grid, bank: TestBank, ladder: MollifierLadder | None, source: SliceSource,
                 companion: bool, with_eps: bool = True, with_mu: bool = True):
        if bank.grid.counts != grid.counts or bank.grid.nt != grid.nt:
            raise ValidationError("test bank was built on a different grid")
        if grid.nt < 5:
            raise ParameterError("space-time defects need at least 5 time slices")
        self.grid, self.bank, self.ladder = grid, bank, ladder
        lo, hi = bank.slice_range
        M = max(ladder.half_windows(grid.dt)) if (ladder is not None and with_eps) else 0
        pad = max(M + 1, 2)
        self.start = lo - pad
        self.stop = hi + pad + 1
        if self.start < 0 or self.stop > grid.nt:
            raise DomainError(f"mollifier window (half-width {M} slices) plus the difference stencil "
                              f"exits the sampled time range around the test bank")
        self.bal_start, self.bal_stop = max(lo - 2, 0), min(hi + 3, grid.nt)
        ws = workspace(grid)
        syms = []
        if ladder is not None and with_eps:
            ladder.validate(grid)
            syms = [space_symbol(grid, ladder.phi_profile, e, ladder.space_kernel)[0] for e in ladder.epsilons]
        self.bal: dict[str, list] = {}
        self.comp: dict[str, list] = {}
        self.eps: list[dict[str, list]] = [dict() for _ in syms]
        self.mu: list[list] = [[] for _ in syms]
        self.eta: list[list] = [[] for _ in syms]
        for n in range(self.start, self.stop):
            s = source(n)
            inner = self.bal_start <= n < self.bal_stop
            et = _pointwise_terms(ws, bank, s["u"], s["b"], s["P"], s["P"], s["f"], s["g"])
            Mu, Mb = et.pop("_Mu"), et.pop("_Mb")
            if inner:
                for k_, a in et.items():
                    self.bal.setdefault(k_, []).append(a)
            if companion and inner:
                ct = _pointwise_terms(ws, bank, s["v"], s["h"], s["q"], s["r"], s["k"], s["l"])
                Mv, Mh = ct.pop("_Mu"), ct.pop("_Mb")
                comp_hats = [ws.fwd(a) for a in (s["v"], s["h"], Mv, Mh)]
                for k_, a in ct.items():
                    self.comp.setdefault(k_, []).append(a)
            hats = _slice_hats(ws, s["u"], s["b"], s["P"], s["f"], s["g"], Mu, Mb) if syms else None
            for e, sym in enumerate(syms):
                ee = _eps_terms(ws, bank, sym, hats)
                for k_, a in ee.items():
                    self.eps[e].setdefault(k_, []).append(a)
                if with_mu and lo <= n <= hi:
                    self.mu[e].append(2 * _dot(ee["u"], ee["Mu"]) + 2 * _dot(ee["b"], ee["Mb"])
                                      - et["div_flux"])
                    if companion:
                        ci = bank.crop_inverse
                        val = (2 * _dot(ci(sym * comp_hats[0]), ci(sym * comp_hats[2]))
                               + 2 * _dot(ci(sym * comp_hats[1]), ci(sym * comp_hats[3])) - ct["div_flux"])
                        self.eta[e].append(val)
        self.bal = {k_: np.stack(v_) for k_, v_ in self.bal.items()}
        self.comp = {k_: np.stack(v_) for k_, v_ in self.comp.items()}
        self.eps = [{k_: np.stack(v_) for k_, v_ in d.items()} for d in self.eps]


def _balance_density(d: dict, dt: float, step: int) -> np.ndarray:
    """-d_t E + Delta E - 2 grad2 - div_flux + 2 work (pressure excluded) on slices step..-step."""
    s = slice(step, -step)
    return (-_central(d["E"], dt, step) + d["lapE"][s] - 2 * d["grad2"][s] - d["div_flux"][s]
            + 2 * d["work"][s])


def _residual_density(d: dict, dt: float) -> np.ndarray:
    """2(u . R_u + b . R_b) with R = d_t X - (spatial right-hand side), on slices 1..-1."""
    Ru = _central(d["u"], dt) - d["Su"][1:-1]
    Rb = _central(d["b"], dt) - d["Sb"][1:-1]
    return 2 * (_dot(np.moveaxis(d["u"][1:-1], 1, 0), np.moveaxis(Ru, 1, 0))
                + _dot(np.moveaxis(d["b"][1:-1], 1, 0), np.moveaxis(Rb, 1, 0)))


def _mollified_tables(st: _Stream, want_terms: bool):
    """Per (alpha, eps): pressure pairing and the regularized-identity terms."""
    grid, bank, ladder = st.grid, st.bank, st.ladder
    dt = grid.dt
    lo, hi = bank.slice_range
    na, ne, nf = len(ladder.alphas), len(ladder.epsilons), bank.n_functions
    pressure = np.zeros((na, ne, nf))
    names = ("dt_energy", "laplacian", "dissipation", "pressure", "transport", "forcing")
    terms = {k: np.zeros((na, ne, nf)) for k in names} if want_terms else {}
    mv = lambda A: np.moveaxis(A, 1, 0)  # noqa: E731  components first
    for a, alpha in enumerate(ladder.alphas):
        w = time_weights(ladder.theta_profile, alpha, dt)
        M = (w.size - 1) // 2
        # mollified slices lo-1 .. hi+1
        first = lo - 1 - M - st.start
        last = hi + 1 + M - st.start
        for e in range(ne):
            d = {k_: _time_convolve(v_[first:last + 1], w) for k_, v_ in st.eps[e].items()}
            wv = d["u"] + d["b"]
            pres = _dot(mv(d["GP"]), mv(wv)) + d["P"] * d["divw"]
            pressure[a, e] = bank.pair(pres[1:-1], lo)
            if not want_terms:
                continue
            u_, b_ = mv(d["u"]), mv(d["b"])
            Ju, Jb = d["Ju"], d["Jb"]
            g2 = np.sum(Ju * Ju, axis=(1, 2)) + np.sum(Jb * Jb, axis=(1, 2))
            E = _dot(u_, u_) + _dot(b_, b_)
            lapE = 2 * (_dot(u_, mv(d["Lu"])) + _dot(b_, mv(d["Lb"]))) + 2 * g2
            adv = _dot(u_, mv(d["Mu"])) + _dot(b_, mv(d["Mb"]))
            work = _dot(u_, mv(d["f"])) + _dot(b_, mv(d["g"]))
            s = slice(1, -1)
            terms["dt_energy"][a, e] = bank.pair(_central(E, dt), lo)
            terms["laplacian"][a, e] = bank.pair(-lapE[s], lo)
            terms["dissipation"][a, e] = bank.pair(2 * g2[s], lo)
            terms["pressure"][a, e] = 2 * pressure[a, e]
            terms["transport"][a, e] = bank.pair(2 * adv[s], lo)
            terms["forcing"][a, e] = bank.pair(-2 * work[s], lo)
    return pressure, terms


def _check_inputs(u, b, P, f, g):
    grid = require_same_grid(*[X for X in (u, b, P, f, g) if X is not None])
    require_vector(u, "u")
    require_vector(b, "b")
    if not P.is_scalar:
        raise ValidationError("pressure must be a scalar field")
    return grid


def _manufactured_residual(st: _Stream, comp: bool = False) -> tuple[np.ndarray, float]:
    d = st.comp if comp else st.bal
    lo, _ = st.bank.slice_range
    dens = _residual_density(d, st.grid.dt)
    vals = st.bank.pair(dens, st.bal_start + 1)
    return vals, float(np.max(np.abs(vals)))


def energy_balance_defect(u: FieldSnapshot, b: FieldSnapshot, P: FieldSnapshot, f: FieldSnapshot | None,
                          g: FieldSnapshot | None, ladder: MollifierLadder, testbank: TestBank,
                          residual_tol: float | None = 1e-3) -> DefectTable:
    """Each term of the regularized local energy identity, paired with the bank.

    ``residual_tol`` bounds the paired discrete MHD residual of the input; ``None``
    waives the check.
    """
    grid = _check_inputs(u, b, P, f, g)
    st = _Stream(grid, testbank, ladder, _snapshot_source(u, b, P, f, g), companion=False, with_mu=True)
    if residual_tol is not None:
        _, res = _manufactured_residual(st)
        if res > residual_tol:
            raise ToleranceError(f"input MHD residual pairing {res:.3g} exceeds {residual_tol:.3g}")
    pressure, terms = _mollified_tables(st, want_terms=True)
    residual = sum(terms.values())
    mu = np.array([testbank.pair(np.stack(m), testbank.slice_range[0]) for m in st.mu])
    return DefectTable(ladder.alphas, ladder.epsilons, testbank.names, pressure, terms, residual, mu=mu)


@dataclass(frozen=True)
class PressureLimit:
    """Iterated-limit estimate of <div(P(u+b)), chi> per test function."""

    value: np.ndarray
    error: np.ndarray
    alpha_limits: np.ndarray
    alpha_errors: np.ndarray
    joint: np.ndarray
    joint_difference: np.ndarray
    direct: np.ndarray
    converged: bool
    table: np.ndarray

    def to_dict(self) -> dict:
        return {"value": self.value.tolist(), "error": self.error.tolist(),
                "alpha_limits": self.alpha_limits.tolist(), "alpha_errors": self.alpha_errors.tolist(),
                "joint": self.joint.tolist(), "joint_difference": self.joint_difference.tolist(),
                "direct": self.direct.tolist(), "converged": self.converged}


def _iterated_limit(table: np.ndarray, ladder: MollifierLadder, grid: Grid, direct: np.ndarray) -> PressureLimit:
    am = ladder.alpha_moments(grid.dt)
    em = ladder.eps_moments(grid)
    inner = richardson(np.moveaxis(table, 0, -1), am)  # (ne, nf)
    outer = richardson(np.moveaxis(inner.value, 0, -1), em)  # (nf,)
    # rounding in the transforms scales with the whole table, not with each entry
    floor = 64 * np.finfo(float).eps * float(np.max(np.abs(table), initial=0.0))
    err = np.maximum(outer.error + np.max(inner.error, axis=0), floor)
    n = min(len(ladder.alphas), len(ladder.epsilons))
    diag = np.stack([table[i, i] for i in range(n)], axis=-1)
    joint = richardson(diag, em[:n]).value
    converged = bool(np.all(inner.converged) and np.all(outer.converged))
    return PressureLimit(outer.value, err, inner.value, inner.error, joint, joint - outer.value, direct,
                         converged, table)


def pressure_defect_limit(u: FieldSnapshot, b: FieldSnapshot, P: FieldSnapshot, ladder: MollifierLadder,
                          testbank: TestBank) -> PressureLimit:
    """lim_eps lim_alpha <div(P_{a,e}(u_{a,e} + b_{a,e})), chi> by ladder extrapolation.

    The inner alpha-limit extrapolates in the discrete second moment of theta_alpha,
    the outer eps-limit in that of phi_eps. ``joint`` extrapolates along the
    diagonal (alpha_i, eps_i) instead; its difference is an order-independence
    diagnostic. Non-shrinking increments set ``converged`` to False.
    """
    grid = _check_inputs(u, b, P, None, None)
    st = _Stream(grid, testbank, ladder, _snapshot_source(u, b, P, None, None), companion=False, with_mu=False)
    table, _ = _mollified_tables(st, want_terms=False)
    direct = testbank.pair(st.bal["div_press"], st.bal_start)
    return _iterated_limit(table, ladder, grid, direct)


# ---------------------------------------------------------------------------
# lambda

@dataclass
class LambdaResult:
    """Both routes to <lambda, chi>, their error bars, and the sign verdict."""

    names: list[str]
    route_i: np.ndarray
    error_i: np.ndarray
    route_ii: np.ndarray | None
    error_ii: np.ndarray | None
    tol_sign: float
    residual_pairing: float
    pressure: PressureLimit
    table: DefectTable
    mu_eta_difference: np.ndarray | None = None
    timings: dict = field(default_factory=dict)

    @property
    def agreement(self) -> bool | None:
        if self.route_ii is None:
            return None
        return bool(np.all(np.abs(self.route_i - self.route_ii) <= self.error_i + self.error_ii))

    @property
    def min_margin(self) -> float:
        vals = self.route_i if self.route_ii is None else np.minimum(self.route_i, self.route_ii)
        return float(np.min(vals) + self.tol_sign)

    @property
    def dissipative(self) -> bool:
        return self.min_margin >= 0

    def verdict(self) -> dict:
        return {"dissipative": self.dissipative, "min_margin": self.min_margin, "tol_sign": self.tol_sign}

    def to_dict(self) -> dict:
        d = {"functions": self.names, "route_i": self.route_i.tolist(), "error_i": self.error_i.tolist(),
             "residual_pairing": self.residual_pairing, "verdict": self.verdict(),
             "pressure_limit": self.pressure.to_dict(), "table": self.table.to_dict()}
        if self.route_ii is not None:
            d["route_ii"] = self.route_ii.tolist()
            d["error_ii"] = self.error_ii.tolist()
            d["routes_agree"] = self.agreement
        if self.mu_eta_difference is not None:
            d["mu_minus_eta"] = self.mu_eta_difference.tolist()
        return d


def _route(d: dict, bank: TestBank, start: int, dt: float, pressure_density: np.ndarray | None):
    """Balance pairing with dt and 2dt differences, returning (value, time error)."""
    lo, hi = bank.slice_range
    vals = []
    for step in (1, 2):
        dens = _balance_density(d, dt, step)
        if pressure_density is not None:
            dens = dens - 2 * pressure_density[step:-step]
        vals.append(bank.pair(dens, start + step))
    return vals[0], np.abs(vals[1] - vals[0]) / 3.0


def _assemble(st: _Stream, ladder: MollifierLadder, companion: bool, tol_factor: float) -> LambdaResult:
    grid, bank = st.grid, st.bank
    dt = grid.dt
    lo, _ = bank.slice_range
    if st.bal_start > lo - 2 or st.bal_stop < bank.slice_range[1] + 3:
        raise DomainError("two-step time differences need two slices on each side of the bank")
    table, terms = _mollified_tables(st, want_terms=True)
    direct = bank.pair(st.bal["div_press"], st.bal_start)
    plim = _iterated_limit(table, ladder, grid, direct)
    bal_i, terr_i = _route(st.bal, bank, st.bal_start, dt, None)
    lam_i = bal_i - 2 * plim.value
    # each route misses zero by its paired equation residual, so that enters the bar
    res_i, res = _manufactured_residual(st)
    err_i = terr_i + 2 * plim.error + np.abs(res_i) + ABS_FLOOR
    lam_ii = err_ii = None
    mu = np.array([bank.pair(np.stack(m), lo) for m in st.mu])
    eta = None
    if companion:
        lam_ii, terr_ii = _route(st.comp, bank, st.bal_start, dt, st.comp["div_press"])
        res_ii, res_c = _manufactured_residual(st, comp=True)
        err_ii = terr_ii + np.abs(res_ii) + ABS_FLOOR
        res = max(res, res_c)
        eta = np.array([bank.pair(np.stack(m), lo) for m in st.eta])
    tol = tol_factor * res + ABS_FLOOR
    lam = {"route_i": lam_i} if lam_ii is None else {"route_i": lam_i, "route_ii": lam_ii}
    dt_table = DefectTable(ladder.alphas, ladder.epsilons, bank.names, table, terms, sum(terms.values()),
                           mu=mu, eta=eta, lam=lam)
    return LambdaResult(bank.names, lam_i, err_i, lam_ii, err_ii, tol, res, plim, dt_table,
                        None if eta is None else mu - eta)


def lambda_assemble(u: FieldSnapshot, b: FieldSnapshot, v: FieldSnapshot | None, h: FieldSnapshot | None,
                    P: FieldSnapshot, q: FieldSnapshot | None, r: FieldSnapshot | None,
                    f: FieldSnapshot | None, g: FieldSnapshot | None, k: FieldSnapshot | None,
                    l: FieldSnapshot | None, ladder: MollifierLadder, testbank: TestBank,
                    tol_factor: float = 10.0) -> LambdaResult:
    """<lambda, chi> by direct assembly and, when the companion fields are given, by the
    companion route. ``tol_sign`` is ``tol_factor`` times the largest paired residual
    of the input equations (both systems when present)."""
    grid = _check_inputs(u, b, P, f, g)
    companion = v is not None
    if companion:
        if any(X is None for X in (h, q, r, k, l)):
            raise ValidationError("companion route needs v, h, q, r, k, l together")
        require_same_grid(u, v, h, q, r, k, l)
    src = _snapshot_source(u, b, P, f, g, v, h, q, r, k, l)
    st = _Stream(grid, testbank, ladder, src, companion=companion)
    return _assemble(st, ladder, companion, tol_factor)


def dissipation_pipeline(u: FieldSnapshot, b: FieldSnapshot, P: FieldSnapshot, f: FieldSnapshot | None,
                         g: FieldSnapshot | None, cutoff, ladder: MollifierLadder,
                         testbank: TestBank | None = None, tol_factor: float = 10.0) -> LambdaResult:
    """Streaming version of ``lambda_assemble`` that builds the companion system slice by slice
    from a cut-off ladder, so no companion field is held for the whole window."""
    from .localization import _derivatives_for, companion_slice

    grid = _check_inputs(u, b, P, f, g)
    if cutoff.grid != grid:
        raise ValidationError("cut-off ladder was built on a different grid")
    bank = testbank if testbank is not None else TestBank.lattice(grid, cutoff.cylinder("rho0").shrink(0.25))
    ws = workspace(grid)
    base = _snapshot_source(u, b, P, f, g)
    deriv_at = _derivatives_for(ws, cutoff, cutoff.psi_slice)
    lo, hi = bank.slice_range

    def src(n):
        d = base(n)
        if lo - 2 <= n <= hi + 2:
            parts = companion_slice(ws, deriv_at(n), d["u"], d["b"], d["f"], d["g"])
            d.update(v=parts["v"], h=parts["h"], q=parts["q1"] + parts["q2"],
                     r=parts["r1"] + parts["r2"], k=parts["k0"] + parts["k1"] + parts["k2"] + parts["k3"],
                     l=parts["l0"] + parts["l1"] + parts["l2"] + parts["l3"])
        return d
    st = _Stream(grid, bank, ladder, src, companion=True)
    return _assemble(st, ladder, True, tol_factor)


def companion_residual_pairing(u: FieldSnapshot, b: FieldSnapshot, f: FieldSnapshot | None,
                               g: FieldSnapshot | None, cutoff, testbank: TestBank) -> dict[str, np.ndarray]:
    """Componentwise pairings <R_v,i, chi> and <R_h,i, chi> of the companion residuals,
    streamed over the bank slices; arrays of shape (3, n_functions)."""
    from .localization import _derivatives_for, companion_slice

    grid = require_same_grid(*[X for X in (u, b, f, g) if X is not None])
    if cutoff.grid != grid or testbank.grid.nt != grid.nt:
        raise ValidationError("cut-off ladder and test bank must share the data grid")
    lo, hi = testbank.slice_range
    if lo < 1 or hi > grid.nt - 2:
        raise DomainError("central differences need one slice on each side of the bank")
    ws = workspace(grid)
    deriv_at = _derivatives_for(ws, cutoff, cutoff.psi_slice)
    zero = np.zeros((3,) + grid.shape3)
    keep: dict[str, list] = {}
    for n in range(lo - 1, hi + 2):
        fn = f.data[n] if f is not None else zero
        gn = g.data[n] if g is not None else zero
        p = companion_slice(ws, deriv_at(n), u.data[n], b.data[n], fn, gn)
        ct = _pointwise_terms(ws, testbank, p["v"], p["h"], p["q1"] + p["q2"], p["r1"] + p["r2"],
                              p["k0"] + p["k1"] + p["k2"] + p["k3"], p["l0"] + p["l1"] + p["l2"] + p["l3"])
        for key in ("u", "b", "Su", "Sb"):
            keep.setdefault(key, []).append(ct[key])
    d = {k_: np.stack(v_) for k_, v_ in keep.items()}
    out = {}
    for name, X, S in (("v", "u", "Su"), ("h", "b", "Sb")):
        R = _central(d[X], grid.dt) - d[S][1:-1]
        out[name] = np.stack([testbank.pair(R[:, c], lo) for c in range(3)])
    return out
