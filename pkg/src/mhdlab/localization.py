"""Cut-off ladders, harmonic corrections and the companion system.

Given a cut-off psi equal to 1 on Q_rho1 and vanishing outside Q_rho,

    v = -(1/Delta) curl(psi curl u),   h = -(1/Delta) curl(psi curl b),
    beta = u - v,                      gamma = b - h,

and on Q_rho0 the pair (v, h) satisfies

    d_t v = Delta v - (h . grad) v - grad q + k
    d_t h = Delta h - (v . grad) h - grad r + l

with pressures q = q1 + q2, r = r1 + r2 and forces k = k0 + k1 + k2 + k3,
l = l0 + l1 + l2 + l3 assembled by ``companion_slice``.

Multiplication by psi (a prescribed, resolved coefficient) is not dealiased;
field-by-field products are.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .elsasser import check_solenoidal
from .errors import DomainError, ParameterError
from .grid import (FieldSnapshot, Grid, ParabolicCylinder, check_cylinder_inside, interior_slices,
                   periodic_distance, require_same_grid, require_vector, restrict_cylinder, workspace)
from .profiles import RampProfile

DEFAULT_RATIOS = (0.5, 0.6, 0.7, 0.8)


@dataclass(frozen=True)
class Radii:
    """Radii rho0 < rho3 < rho2 < rho1 < rho."""

    rho0: float
    rho3: float
    rho2: float
    rho1: float
    rho: float

    def __post_init__(self) -> None:
        seq = (self.rho0, self.rho3, self.rho2, self.rho1, self.rho)
        if not seq[0] > 0 or any(a >= b for a, b in zip(seq, seq[1:])):
            raise ParameterError("radii must satisfy 0 < rho0 < rho3 < rho2 < rho1 < rho, got "
                                 f"rho0={self.rho0}, rho3={self.rho3}, rho2={self.rho2}, "
                                 f"rho1={self.rho1}, rho={self.rho}")

    @classmethod
    def from_ratios(cls, rho: float, ratios: Sequence[float] = DEFAULT_RATIOS) -> "Radii":
        r0, r3, r2, r1 = ratios
        return cls(r0 * rho, r3 * rho, r2 * rho, r1 * rho, rho)

    def to_dict(self) -> dict:
        return {"rho0": self.rho0, "rho3": self.rho3, "rho2": self.rho2, "rho1": self.rho1, "rho": self.rho}


def _radial_cutoff(ramp: RampProfile, d: np.ndarray, inner: float, outer: float) -> np.ndarray:
    return 1.0 - ramp((d - inner) / (outer - inner))


@dataclass(frozen=True, eq=False)
class CutoffLadder:
    """psi (plateau Q_rho1, support Q_rho) and Phi (plateau Q_rho3, support Q_rho2).

    Both factor as a time profile of |t - t0| times a space profile of |x - x0|;
    the time ramps run between the squared radii. The cut-offs are evaluated
    analytically at every sampled time, so the sampled window may be shorter than
    the time extent of Q_rho.
    """

    grid: Grid
    t0: float
    x0: tuple[float, float, float]
    radii: Radii
    profile: RampProfile

    @property
    def center(self) -> tuple[float, tuple[float, float, float]]:
        return self.t0, self.x0

    def cylinder(self, which: str = "rho0") -> ParabolicCylinder:
        return ParabolicCylinder(self.t0, self.x0, getattr(self.radii, which))

    @cached_property
    def distance(self) -> np.ndarray:
        return periodic_distance(self.grid, self.x0)

    def _space(self, inner: float, outer: float) -> np.ndarray:
        return _radial_cutoff(self.profile, self.distance, inner, outer)

    def _time(self, inner: float, outer: float) -> np.ndarray:
        tau = np.abs(self.grid.times - self.t0)
        return _radial_cutoff(self.profile, tau, inner ** 2, outer ** 2)

    @cached_property
    def psi_space(self) -> np.ndarray:
        return self._space(self.radii.rho1, self.radii.rho)

    @cached_property
    def psi_time(self) -> np.ndarray:
        return self._time(self.radii.rho1, self.radii.rho)

    @cached_property
    def phi_space(self) -> np.ndarray:
        return self._space(self.radii.rho3, self.radii.rho2)

    @cached_property
    def phi_time(self) -> np.ndarray:
        return self._time(self.radii.rho3, self.radii.rho2)

    def psi_slice(self, n: int) -> np.ndarray:
        return self.psi_time[n] * self.psi_space

    def phi_slice(self, n: int) -> np.ndarray:
        return self.phi_time[n] * self.phi_space

    @property
    def psi(self) -> FieldSnapshot:
        data = self.psi_time[:, None, None, None, None] * self.psi_space[None, None]
        return FieldSnapshot(self.grid, data, "psi")

    @property
    def phi(self) -> FieldSnapshot:
        data = self.phi_time[:, None, None, None, None] * self.phi_space[None, None]
        return FieldSnapshot(self.grid, data, "Phi")

    def check_invariants(self, tol: float = 1e-12) -> dict:
        """Plateau/support/range checks of psi and Phi on the grid."""
        r = self.radii
        d = self.distance
        tau = np.abs(self.grid.times - self.t0)
        out = {}
        for name, sp, tp, inner, outer in (("psi", self.psi_space, self.psi_time, r.rho1, r.rho),
                                           ("phi", self.phi_space, self.phi_time, r.rho3, r.rho2)):
            full = tp[:, None, None, None] * sp[None]
            inside = (tau[:, None, None, None] < inner ** 2) & (d[None] < inner)
            outside = (tau[:, None, None, None] >= outer ** 2) | (d[None] >= outer)
            out[name] = {
                "plateau_defect": float(np.abs(full[inside] - 1).max()) if inside.any() else 0.0,
                "support_defect": float(np.abs(full[outside]).max()) if outside.any() else 0.0,
                "min": float(full.min()), "max": float(full.max()),
            }
            out[name]["ok"] = (out[name]["plateau_defect"] <= tol and out[name]["support_defect"] <= tol
                               and out[name]["min"] >= 0 and out[name]["max"] <= 1)
        return out

    def to_dict(self) -> dict:
        return {"t0": self.t0, "x0": list(self.x0), "radii": self.radii.to_dict(),
                "profile": self.profile.to_dict()}


def build_cutoff(grid: Grid, center: tuple[float, Sequence[float]], radii: Radii | Sequence[float],
                 profile: str | RampProfile = "erf") -> CutoffLadder:
    """Construct psi and Phi for the given center (t0, x0) and radii.

    ``radii`` is a ``Radii`` or a sequence (rho0, rho3, rho2, rho1, rho). The ball
    B(x0, rho) must fit in the periodic box with a one-cell margin, and at least
    one interior time slice must fall in Q_rho0.
    """
    if not isinstance(radii, Radii):
        radii = Radii(*radii)
    if not isinstance(profile, RampProfile):
        profile = RampProfile(profile)
    t0, x0 = float(center[0]), tuple(float(v) for v in center[1])
    check_cylinder_inside(grid, ParabolicCylinder(t0, x0, radii.rho), check_time=False)
    times = grid.times[interior_slices(grid.nt)]
    if grid.nt > 1 and not np.any(np.abs(times - t0) < radii.rho0 ** 2):
        raise DomainError("no interior time slice lies inside Q_rho0")
    return CutoffLadder(grid, t0, x0, radii, profile)


def _psi_of(psi) -> tuple[Grid, callable]:
    if isinstance(psi, CutoffLadder):
        return psi.grid, psi.psi_slice
    if isinstance(psi, FieldSnapshot):
        return psi.grid, lambda n: psi.data[n, 0]
    raise TypeError("psi must be a CutoffLadder or a scalar FieldSnapshot")


def harmonic_correction_slice(ws, psi: np.ndarray, X: np.ndarray) -> np.ndarray:
    """-(1/Delta) curl(psi curl X) for one slice."""
    return -ws.ilap_curl(psi * ws.curl(X))


def harmonic_correction(X: FieldSnapshot, psi, check: bool = True) -> FieldSnapshot:
    """v = -(1/Delta) curl(psi curl X), slice by slice."""
    require_vector(X, "harmonic_correction input")
    grid, psi_at = _psi_of(psi)
    require_same_grid(X, FieldSnapshot.zeros(grid, 1)) if X.grid != grid else None
    if check:
        check_solenoidal(X, "harmonic_correction input")
    ws = workspace(grid)
    out = np.empty_like(X.data)
    for n in range(grid.nt):
        out[n] = harmonic_correction_slice(ws, psi_at(n), X.data[n])
    return FieldSnapshot(grid, out, "")


def correctors(u: FieldSnapshot, b: FieldSnapshot, v: FieldSnapshot, h: FieldSnapshot):
    """beta = u - v, gamma = b - h."""
    require_same_grid(u, b, v, h)
    return (FieldSnapshot(u.grid, u.data - v.data, "beta"), FieldSnapshot(u.grid, b.data - h.data, "gamma"))


class CutoffDerivatives:
    """Spectral derivatives of psi on one slice, shared by the force terms."""

    def __init__(self, ws, psi: np.ndarray | None):
        if psi is None:
            return
        self.psi = psi
        self.grad = ws.grad(psi)
        self.lap = ws.lap(psi)
        self.grad_lap = ws.grad(self.lap)
        self.hess = ws.grad_vec(self.grad)  # hess[i, j] = d_j d_i psi

    def scaled(self, c: float) -> "CutoffDerivatives":
        """Derivatives of c * psi (psi factors as time profile times space profile)."""
        out = CutoffDerivatives(None, None)
        for name in ("psi", "grad", "lap", "grad_lap", "hess"):
            setattr(out, name, c * getattr(self, name))
        return out


def _derivatives_for(ws, psi, psi_at):
    """Per-slice derivative provider; a ladder reuses one spatial evaluation."""
    if isinstance(psi, CutoffLadder):
        base = CutoffDerivatives(ws, psi.psi_space)
        return lambda n: base.scaled(float(psi.psi_time[n]))
    return lambda n: CutoffDerivatives(ws, psi_at(n))


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.stack([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def first_force_slice(ws, D: CutoffDerivatives, X: np.ndarray) -> np.ndarray:
    """k1 (or l1 with X = b):

    -(1/Delta) curl( curl((Delta psi) X) - grad(Delta psi) x X )
    + 2 (1/Delta) curl( sum_i d_i [ curl((d_i psi) X) - grad(d_i psi) x X ] ).
    """
    first = -ws.ilap_curl(ws.curl(D.lap * X) - _cross(D.grad_lap, X))
    acc = np.zeros_like(X)
    for i in range(3):
        inner = ws.curl(D.grad[i] * X) - _cross(D.hess[i], X)
        acc += ws.deriv(inner, i)
    return first + 2.0 * ws.ilap_curl(acc)


def transport_force_slice(ws, D: CutoffDerivatives, M: np.ndarray) -> np.ndarray:
    """k2 (or l2): -(1/Delta) curl(grad psi x M) + mean(psi M).

    The constant restores the zero mode lost by the periodic 1/Delta.
    """
    psiM = D.psi * M
    mean = psiM.reshape(3, -1).mean(axis=1)[:, None, None, None]
    return -ws.ilap_curl(_cross(D.grad, M)) + mean


def companion_slice_reference(ws, D: CutoffDerivatives, u, b, v, h, f, g) -> dict[str, np.ndarray]:
    """Companion pressures and forces for one slice, each term evaluated as written.

    Slow; kept as the oracle for ``companion_slice``.
    """
    beta, gamma = u - v, b - h
    Mu = ws.advect(b, u)
    Mb = ws.advect(u, b)
    A = ws.advect(h, beta) + ws.advect(gamma, v) + ws.advect(gamma, beta)
    B = ws.advect(v, gamma) + ws.advect(beta, h) + ws.advect(beta, gamma)
    psi = D.psi
    out = {}
    out["q1"] = -ws.ilap_div(psi * Mu)
    out["r1"] = -ws.ilap_div(psi * Mb)
    for key, src in (("q2", A), ("r2", B)):
        out[key] = ws.ilap_div(psi * src)
    out["k3"] = -psi * A + ws.grad(out["q2"])
    out["l3"] = -psi * B + ws.grad(out["r2"])
    out["k0"] = harmonic_correction_slice(ws, psi, f)
    out["l0"] = harmonic_correction_slice(ws, psi, g)
    out["k1"] = first_force_slice(ws, D, u)
    out["l1"] = first_force_slice(ws, D, b)
    out["k2"] = transport_force_slice(ws, D, Mu)
    out["l2"] = transport_force_slice(ws, D, Mb)
    return out


def _contract(B: np.ndarray, J: np.ndarray) -> np.ndarray:
    """(B . grad) X from the Jacobian J[i, j] = d_j X_i, not dealiased."""
    return np.einsum("jzyx,ijzyx->izyx", B, J)


def companion_slice(ws, D: CutoffDerivatives, u, b, f, g) -> dict[str, np.ndarray]:
    """v, h and all companion pressures and forces for one slice.

    Same quantities as ``companion_slice_reference`` with shared transforms: each
    Jacobian is formed once, the three products of A (and B) are dealiased as one
    sum, and the first force uses curl((d psi) X) - grad(d psi) x X = (d psi) curl X.
    """
    inv, fwd = ws.inv, ws.fwd
    ih = -ws.inv_k2
    psi = D.psi
    uh, bh = fwd(u), fwd(b)
    Ju = np.stack([inv(1j * ws.kd[j] * uh) for j in range(3)], axis=1)
    Jb = np.stack([inv(1j * ws.kd[j] * bh) for j in range(3)], axis=1)
    wu = np.stack([Ju[2, 1] - Ju[1, 2], Ju[0, 2] - Ju[2, 0], Ju[1, 0] - Ju[0, 1]])
    wb = np.stack([Jb[2, 1] - Jb[1, 2], Jb[0, 2] - Jb[2, 0], Jb[1, 0] - Jb[0, 1]])
    vh = -ih * ws.curl_hat(fwd(psi * wu))
    hh = -ih * ws.curl_hat(fwd(psi * wb))
    v, h = inv(vh), inv(hh)
    Jv = np.stack([inv(1j * ws.kd[j] * vh) for j in range(3)], axis=1)
    Jh = np.stack([inv(1j * ws.kd[j] * hh) for j in range(3)], axis=1)
    beta, gamma = u - v, b - h
    Jbeta, Jgamma = Ju - Jv, Jb - Jh
    Mu = ws.dealias(_contract(b, Ju))
    Mb = ws.dealias(_contract(u, Jb))
    A = ws.dealias(_contract(h, Jbeta) + _contract(gamma, Jv) + _contract(gamma, Jbeta))
    B = ws.dealias(_contract(v, Jgamma) + _contract(beta, Jh) + _contract(beta, Jgamma))

    def div_hat(Xh):
        return sum(1j * ws.kd[i] * Xh[i] for i in range(3))

    out = {"v": v, "h": h}
    for qk, src in (("q1", Mu), ("r1", Mb)):
        out[qk] = inv(-ws.inv_kd2 * -div_hat(fwd(psi * src)))
    for qk, kk, src in (("q2", "k3", A), ("r2", "l3", B)):
        Sh = -ws.inv_kd2 * div_hat(fwd(psi * src))
        out[qk] = inv(Sh)
        out[kk] = -psi * src + np.stack([inv(1j * ws.kd[i] * Sh) for i in range(3)])
    for kk, F in (("k0", f), ("l0", g)):
        out[kk] = inv(-ih * ws.curl_hat(fwd(psi * ws.curl(F)))) if np.any(F) else np.zeros_like(F)
    for kk, w in (("k1", wu), ("l1", wb)):
        acc = fwd(D.lap * w)
        for i in range(3):
            acc = acc - 2.0 * 1j * ws.kd[i] * fwd(D.grad[i] * w)
        out[kk] = inv(-ih * ws.curl_hat(acc))
    for kk, M in (("k2", Mu), ("l2", Mb)):
        mean = (psi * M).reshape(3, -1).mean(axis=1)[:, None, None, None]
        out[kk] = inv(-ih * ws.curl_hat(fwd(_cross(D.grad, M)))) + mean
    return out


@dataclass(frozen=True, eq=False)
class CompanionSystem:
    """Harmonic corrections, correctors, pressures and forces on a set of slices."""

    v: FieldSnapshot
    h: FieldSnapshot
    beta: FieldSnapshot
    gamma: FieldSnapshot
    q_parts: tuple[FieldSnapshot, FieldSnapshot]
    r_parts: tuple[FieldSnapshot, FieldSnapshot]
    k_parts: tuple[FieldSnapshot, ...]
    l_parts: tuple[FieldSnapshot, ...]
    ladder: CutoffLadder
    time_index: np.ndarray = field(default=None)

    @property
    def grid(self) -> Grid:
        return self.v.grid

    @property
    def q(self) -> FieldSnapshot:
        return FieldSnapshot(self.grid, self.q_parts[0].data + self.q_parts[1].data, "q")

    @property
    def r(self) -> FieldSnapshot:
        return FieldSnapshot(self.grid, self.r_parts[0].data + self.r_parts[1].data, "r")

    @property
    def k(self) -> FieldSnapshot:
        return FieldSnapshot(self.grid, sum(p.data for p in self.k_parts), "k")

    @property
    def l(self) -> FieldSnapshot:
        return FieldSnapshot(self.grid, sum(p.data for p in self.l_parts), "l")


def build_companion(u: FieldSnapshot, b: FieldSnapshot, f: FieldSnapshot, g: FieldSnapshot,
                    ladder: CutoffLadder, window: tuple[int, int] | None = None,
                    check: bool = True) -> CompanionSystem:
    """Evaluate the full companion system on time slices ``window`` (default: all)."""
    grid = require_same_grid(u, b, f, g)
    if grid != ladder.grid:
        raise ParameterError("cut-off ladder was built on a different grid")
    if check:
        check_solenoidal(u, "u")
        check_solenoidal(b, "b")
    start, stop = window if window is not None else (0, grid.nt)
    sub = grid.with_time(stop - start, t_start=float(grid.times[start]))
    ws = workspace(grid)
    keys = ("v", "h", "q1", "q2", "r1", "r2", "k0", "k1", "k2", "k3", "l0", "l1", "l2", "l3")
    store = {k: np.empty((stop - start, 1 if k[0] in "qr" else 3) + grid.shape3) for k in keys}
    deriv_at = _derivatives_for(ws, ladder, ladder.psi_slice)
    for m, n in enumerate(range(start, stop)):
        D = deriv_at(n)
        parts = companion_slice(ws, D, u.data[n], b.data[n], f.data[n], g.data[n])
        for k in keys:
            store[k][m] = parts[k]
    snap = {k: FieldSnapshot(sub, a, k) for k, a in store.items()}
    win = lambda X: X.time_window(start, stop)  # noqa: E731
    beta = FieldSnapshot(sub, win(u).data - store["v"], "beta")
    gamma = FieldSnapshot(sub, win(b).data - store["h"], "gamma")
    sub_ladder = CutoffLadder(sub, ladder.t0, ladder.x0, ladder.radii, ladder.profile)
    return CompanionSystem(snap["v"], snap["h"], beta, gamma, (snap["q1"], snap["q2"]),
                           (snap["r1"], snap["r2"]), tuple(snap[f"k{i}"] for i in range(4)),
                           tuple(snap[f"l{i}"] for i in range(4)), sub_ladder, np.arange(start, stop))


def companion_pressures(u, b, v, h, beta, gamma, psi):
    """(q, (q1, q2)), (r, (r1, r2)) with q1 = -(1/Delta) div(psi (b.grad)u), q2 = (1/Delta) div(psi A)."""
    grid, psi_at = _psi_of(psi)
    require_same_grid(u, b, v, h, beta, gamma)
    ws = workspace(grid)
    shape = (grid.nt, 1) + grid.shape3
    q1, q2, r1, r2 = (np.empty(shape) for _ in range(4))
    for n in range(grid.nt):
        p = psi_at(n)
        un, bn, vn, hn, be, ga = (X.data[n] for X in (u, b, v, h, beta, gamma))
        A = ws.advect(hn, be) + ws.advect(ga, vn) + ws.advect(ga, be)
        B = ws.advect(vn, ga) + ws.advect(be, hn) + ws.advect(be, ga)
        q1[n, 0] = -ws.ilap_div(p * ws.advect(bn, un))
        r1[n, 0] = -ws.ilap_div(p * ws.advect(un, bn))
        q2[n, 0] = ws.ilap_div(p * A)
        r2[n, 0] = ws.ilap_div(p * B)
    mk = lambda a, nm: FieldSnapshot(grid, a, nm)  # noqa: E731
    return ((mk(q1 + q2, "q"), (mk(q1, "q1"), mk(q2, "q2"))),
            (mk(r1 + r2, "r"), (mk(r1, "r1"), mk(r2, "r2"))))


def companion_forces(u, b, v, h, beta, gamma, f, g, psi, phi=None):
    """(k, (k0, k1, k2, k3)), (l, (l0, l1, l2, l3)).

    ``phi`` is accepted for the k3 split diagnostic (see ``k3_split``) and is not
    needed to assemble the forces.
    """
    grid, psi_at = _psi_of(psi)
    require_same_grid(u, b, v, h, beta, gamma, f, g)
    ws = workspace(grid)
    shape = (grid.nt, 3) + grid.shape3
    parts = {k: np.empty(shape) for k in ("k0", "k1", "k2", "k3", "l0", "l1", "l2", "l3")}
    deriv_at = _derivatives_for(ws, psi, psi_at)
    for n in range(grid.nt):
        D = deriv_at(n)
        res = companion_slice_reference(ws, D, *(X.data[n] for X in (u, b, v, h, f, g)))
        for k in parts:
            parts[k][n] = res[k]
    mk = lambda k: FieldSnapshot(grid, parts[k], k)  # noqa: E731
    ks = tuple(mk(f"k{i}") for i in range(4))
    ls = tuple(mk(f"l{i}") for i in range(4))
    return ((FieldSnapshot(grid, sum(p.data for p in ks), "k"), ks),
            (FieldSnapshot(grid, sum(p.data for p in ls), "l"), ls))


def k3_split(ws, psi: np.ndarray, phi: np.ndarray, A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split grad(1/Delta)div(psi A) into the Phi-localized part and the remainder.

    The first part is grad(1/Delta)div(Phi psi A); the second carries (1 - Phi) psi A,
    whose source sits away from Q_rho0 and is smooth there.
    """
    near = ws.grad_ilap_div(phi * psi * A)
    far = ws.grad_ilap_div((1.0 - phi) * psi * A)
    return near, far


def central_time_derivative(X: FieldSnapshot) -> tuple[np.ndarray, np.ndarray]:
    """Second-order central difference on interior slices; returns (indices, values)."""
    nt = X.grid.nt
    if nt < 3:
        raise ParameterError("central time differences need at least 3 slices")
    idx = np.arange(1, nt - 1)
    return idx, (X.data[2:] - X.data[:-2]) / (2.0 * X.grid.dt)


def companion_residual(system: CompanionSystem) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Residuals of both companion equations at interior slices of the system window.

    R_v = d_t v - Delta v + (h.grad)v + grad q - k (likewise R_h). Returns
    (interior indices, R_v, R_h) with R arrays shaped (n_interior, 3, nz, ny, nx).
    """
    grid = system.grid
    ws = workspace(grid)
    idx, dv = central_time_derivative(system.v)
    _, dh = central_time_derivative(system.h)
    q, r, k, l = system.q.data, system.r.data, system.k.data, system.l.data
    Rv = np.empty_like(dv)
    Rh = np.empty_like(dh)
    for m, n in enumerate(idx):
        vn, hn = system.v.data[n], system.h.data[n]
        Rv[m] = dv[m] - ws.lap(vn) + ws.advect(hn, vn) + ws.grad(q[n, 0]) - k[n]
        Rh[m] = dh[m] - ws.lap(hn) + ws.advect(vn, hn) + ws.grad(r[n, 0]) - l[n]
    return idx, Rv, Rh


def companion_residual_stream(u: FieldSnapshot, b: FieldSnapshot, f: FieldSnapshot, g: FieldSnapshot,
                              ladder: CutoffLadder, window: tuple[int, int] | None = None):
    """Yield (n, R_v, R_h) for interior slices n of ``window`` keeping three slices in memory.

    Same residuals as ``companion_residual`` without storing the companion system.
    """
    grid = require_same_grid(u, b, f, g)
    start, stop = window if window is not None else (0, grid.nt)
    if stop - start < 3:
        raise ParameterError("central time differences need at least 3 slices")
    ws = workspace(grid)
    deriv_at = _derivatives_for(ws, ladder, ladder.psi_slice)
    parts = lambda n: companion_slice(ws, deriv_at(n), u.data[n], b.data[n], f.data[n], g.data[n])  # noqa: E731
    prev, cur = parts(start), parts(start + 1)
    for n in range(start + 1, stop - 1):
        nxt = parts(n + 1)
        out = []
        for x, y, p, fk in (("v", "h", ("q1", "q2"), "k"), ("h", "v", ("r1", "r2"), "l")):
            dX = (nxt[x] - prev[x]) / (2.0 * grid.dt)
            pres = cur[p[0]] + cur[p[1]]
            force = sum(cur[f"{fk}{i}"] for i in range(4))
            out.append(dX - ws.lap(cur[x]) + ws.advect(cur[y], cur[x]) + ws.grad(pres.reshape(grid.shape3)) - force)
        yield n, out[0], out[1]
        prev, cur = cur, nxt


def localization_report(u: FieldSnapshot, b: FieldSnapshot, f: FieldSnapshot, g: FieldSnapshot,
                        system: CompanionSystem) -> dict:
    """Verify the stated properties of the harmonic corrections on Q_rho0.

    All quantities on Q_rho0 use the interior slices of the system window; global
    norms use the interior slices of the sampled domain.
    """
    from .norms import lebesgue_cylinder_norm_mask, space_time_norms

    ladder = system.ladder
    grid = system.grid
    ws = workspace(grid)
    start = int(system.time_index[0])
    win = lambda X: X.time_window(start, start + grid.nt)  # noqa: E731
    uw, bw, fw = win(u), win(b), win(f)
    Q0 = ladder.cylinder("rho0")
    mask = restrict_cylinder(grid, Q0, clip_time=True)

    def sup_on(mask_, arrs) -> float:
        return max(float(np.abs(mask_.values(a)).max()) for a in arrs)

    div_max = {}
    for name, X in (("v", system.v), ("h", system.h), ("k", system.k), ("l", system.l)):
        div_max[name] = max(float(np.abs(ws.div(X.data[n])).max()) for n in range(grid.nt))
    lap_gap = np.stack([ws.lap(system.v.data[n]) - ws.lap(uw.data[n]) for n in range(grid.nt)])
    lap_gap_h = np.stack([ws.lap(system.h.data[n]) - ws.lap(bw.data[n]) for n in range(grid.nt)])
    grad_beta = np.stack([ws.grad_vec(system.beta.data[n]).reshape(9, *grid.shape3) for n in range(grid.nt)])
    grad_gamma = np.stack([ws.grad_vec(system.gamma.data[n]).reshape(9, *grid.shape3) for n in range(grid.nt)])
    beta_f = system.k_parts[0].data - fw.data
    grad_beta_f = np.stack([ws.grad_vec(beta_f[n]).reshape(9, *grid.shape3) for n in range(grid.nt)])

    def frob_sup(arr) -> float:
        vals = mask.values(arr)
        return float(np.sqrt(np.sum(vals ** 2, axis=1)).max())

    glob = space_time_norms(u, b)
    grad_psi_l2 = math.sqrt(sum(ws.spectral_l2_sq(c) for c in ws.grad(ladder.psi_space)))
    v_linf_l2 = lebesgue_cylinder_norm_mask(system.v, mask, math.inf, 2)
    q = system.q
    r = system.r
    q_32 = lebesgue_cylinder_norm_mask(q, mask, 1.5, 1.5)
    q1_32 = lebesgue_cylinder_norm_mask(system.q_parts[0], mask, 1.5, 1.5)
    r_32 = lebesgue_cylinder_norm_mask(r, mask, 1.5, 1.5)
    k_rest = FieldSnapshot(grid, system.k.data - system.k_parts[0].data)
    l_rest = FieldSnapshot(grid, system.l.data - system.l_parts[0].data)
    sup_grad_beta = frob_sup(grad_beta)
    q1_scale = (glob["b_linf_l2"] ** (2 / 3)) * (glob["b_l2_h1"] ** (1 / 3)) * glob["u_l2_h1"]
    report = {
        "cylinder": Q0.to_dict(),
        "cells": mask.n_cells,
        "divergence_max": div_max,
        "laplacian_identity_max": {"v": sup_on(mask, [lap_gap]), "h": sup_on(mask, [lap_gap_h])},
        "corrector_sum_max": {
            "u": sup_on(mask, [system.v.data + system.beta.data - uw.data]),
            "b": sup_on(mask, [system.h.data + system.gamma.data - bw.data]),
        },
        "energy": {
            "v_linf_l2_q0": v_linf_l2,
            "u_linf_l2": glob["u_linf_l2"],
            "C_psi": v_linf_l2 / glob["u_linf_l2"] if glob["u_linf_l2"] > 0 else 0.0,
        },
        "lipschitz": {
            "sup_grad_beta": sup_grad_beta,
            "sup_grad_gamma": frob_sup(grad_gamma),
            "grad_psi_l2": grad_psi_l2,
            "C_lip": (sup_grad_beta / (grad_psi_l2 * glob["u_linf_l2"])) if glob["u_linf_l2"] > 0 else 0.0,
            "sup_grad_beta_f": frob_sup(grad_beta_f),
        },
        "pressures": {
            "q_L3/2": q_32, "r_L3/2": r_32, "q1_L3/2": q1_32,
            "q1_bound_scale": q1_scale,
            "C_q1": q1_32 / q1_scale if q1_scale > 0 else 0.0,
        },
        "forces": {
            "k_minus_k0_L2": lebesgue_cylinder_norm_mask(k_rest, mask, 2, 2),
            "l_minus_l0_L2": lebesgue_cylinder_norm_mask(l_rest, mask, 2, 2),
        },
    }
    if grid.nt >= 3:
        idx, Rv, Rh = companion_residual(system)
        sel = np.isin(idx, mask.time_index)
        if sel.any():
            vals_v = np.abs(Rv[sel].reshape(sel.sum(), 3, -1)[..., mask.flat_index]).max()
            vals_h = np.abs(Rh[sel].reshape(sel.sum(), 3, -1)[..., mask.flat_index]).max()
            report["companion_residual_max"] = {"v": float(vals_v), "h": float(vals_h)}
    return report
