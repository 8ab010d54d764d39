"""Elsasser change of variables and the pressure solve.

With u = U + B and b = U - B the MHD system becomes

    d_t u = Delta u - (b . grad) u - grad P + f
    d_t b = Delta b - (u . grad) b - grad P + g,     div u = div b = 0,

and P solves Delta P = -sum_ij d_i d_j (u_i b_j).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError
from .grid import FieldSnapshot, require_same_grid, require_vector, workspace

SOLENOIDAL_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class ElsasserState:
    u: FieldSnapshot
    b: FieldSnapshot
    P: FieldSnapshot
    f: FieldSnapshot
    g: FieldSnapshot

    def __post_init__(self) -> None:
        require_same_grid(self.u, self.b, self.P, self.f, self.g)
        for X in (self.u, self.b, self.f, self.g):
            require_vector(X)

    @property
    def grid(self):
        return self.u.grid


def _combine(a: FieldSnapshot, b: FieldSnapshot, ca: float, cb: float, name: str) -> FieldSnapshot:
    return FieldSnapshot(a.grid, ca * a.data + cb * b.data, name)


def to_elsasser(U: FieldSnapshot, B: FieldSnapshot, F: FieldSnapshot, G: FieldSnapshot):
    """(U, B, F, G) -> (u, b, f, g) = (U+B, U-B, F+G, F-G)."""
    require_same_grid(U, B, F, G)
    return (_combine(U, B, 1.0, 1.0, "u"), _combine(U, B, 1.0, -1.0, "b"),
            _combine(F, G, 1.0, 1.0, "f"), _combine(F, G, 1.0, -1.0, "g"))


def from_elsasser(u: FieldSnapshot, b: FieldSnapshot, f: FieldSnapshot, g: FieldSnapshot):
    """(u, b, f, g) -> (U, B, F, G) = ((u+b)/2, (u-b)/2, (f+g)/2, (f-g)/2)."""
    require_same_grid(u, b, f, g)
    return (_combine(u, b, 0.5, 0.5, "U"), _combine(u, b, 0.5, -0.5, "B"),
            _combine(f, g, 0.5, 0.5, "F"), _combine(f, g, 0.5, -0.5, "G"))


def max_divergence(X: FieldSnapshot) -> float:
    ws = workspace(X.grid)
    return max(float(np.abs(ws.div(X.data[n])).max()) for n in range(X.grid.nt))


def check_solenoidal(X: FieldSnapshot, what: str, tol: float = SOLENOIDAL_TOL) -> float:
    """Return max|div X|; raise PreconditionError above ``tol`` (scaled by max(1, |X|_inf))."""
    d = max_divergence(X)
    scale = max(1.0, float(np.abs(X.data).max()))
    if d > tol * scale:
        raise PreconditionError(f"{what} is not divergence-free: max|div| = {d:.3e} > {tol * scale:.1e}")
    return d


def pressure_slice(ws, u: np.ndarray, b: np.ndarray) -> np.ndarray:
    """P for one slice: P_hat = -sum k_i k_j (u_i b_j)_hat / |k|^2, products dealiased."""
    acc = 0.0
    for i in range(3):
        for j in range(3):
            acc = acc + ws.kd[i] * ws.kd[j] * (ws.mask * ws.fwd(u[i] * b[j]))
    return ws.inv(-ws.inv_k2 * acc)


def pressure_source_slice(ws, u: np.ndarray, b: np.ndarray) -> np.ndarray:
    """-sum_ij d_i d_j (u_i b_j), dealiased."""
    acc = 0.0
    for i in range(3):
        for j in range(3):
            acc = acc + ws.kd[i] * ws.kd[j] * (ws.mask * ws.fwd(u[i] * b[j]))
    return ws.inv(acc)


def solve_pressure(u: FieldSnapshot, b: FieldSnapshot, check: bool = True) -> FieldSnapshot:
    """Zero-mean P with Delta P = -sum_ij d_i d_j (u_i b_j), slice by slice."""
    g = require_same_grid(u, b)
    require_vector(u, "u")
    require_vector(b, "b")
    if check:
        check_solenoidal(u, "u")
        check_solenoidal(b, "b")
    ws = workspace(g)
    out = np.empty((g.nt, 1) + g.shape3)
    for n in range(g.nt):
        out[n, 0] = pressure_slice(ws, u.data[n], b.data[n])
    return FieldSnapshot(g, out, "P")


def pressure_residual(P: FieldSnapshot, u: FieldSnapshot, b: FieldSnapshot) -> float:
    """max |Delta P + sum_ij d_i d_j (u_i b_j)| over all slices."""
    g = require_same_grid(P, u, b)
    ws = workspace(g)
    worst = 0.0
    for n in range(g.nt):
        r = ws.lap(P.data[n, 0]) - pressure_source_slice(ws, u.data[n], b.data[n])
        worst = max(worst, float(np.abs(r).max()))
    return worst
