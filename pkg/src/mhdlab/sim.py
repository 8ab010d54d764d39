"""Manufactured exact solutions and a pseudo-spectral Elsasser MHD integrator.

The system, with unit viscosity and resistivity, is

    d_t u = Delta u - (b . grad) u - grad P + f
    d_t b = Delta b - (u . grad) b - grad P + g,    div u = div b = 0.

The integrator uses classical RK4 on the Leray-projected, 2/3-dealiased
nonlinearity with an integrating factor for the Laplacian.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import simpson

from .elsasser import pressure_slice
from .errors import ParameterError, PreconditionError, ToleranceError
from .fsnap import write_fsnap
from .grid import FieldSnapshot, Grid, workspace

MANUFACTURED = ("taylor-green", "abc-drift", "product-modes")
INITIAL_CONDITIONS = ("taylor-green", "abc", "random", "aligned-random", "zero", "mode")
FORCINGS = ("zero", "kolmogorov")


class CFLError(ToleranceError):
    """A time step was rejected because it violates the CFL bound."""


# manufactured solutions -----------------------------------------------------------

def _tg(X, Y, Z):
    return np.stack([np.sin(X) * np.cos(Y), -np.cos(X) * np.sin(Y), np.zeros_like(X)])


def _abc(X, Y, Z, A, B, C):
    return np.stack([A * np.sin(Z) + C * np.cos(Y), B * np.sin(X) + A * np.cos(Z), C * np.sin(Y) + B * np.cos(X)])


def _product_u(X, Y, Z):
    return np.stack([np.sin(Y) * np.sin(2 * Z), np.sin(Z) * np.sin(2 * X), np.sin(X) * np.sin(2 * Y)])


def _product_b(X, Y, Z):
    return np.stack([np.sin(2 * Y) * np.sin(Z), np.sin(2 * Z) * np.sin(X), np.sin(2 * X) * np.sin(Y)])


@dataclass(frozen=True, eq=False)
class ManufacturedSolution:
    """Exact tuple (u, b, P, f, g) with the analytic time derivatives of u and b."""

    name: str
    u: FieldSnapshot
    b: FieldSnapshot
    P: FieldSnapshot
    f: FieldSnapshot
    g: FieldSnapshot
    dudt: FieldSnapshot
    dbdt: FieldSnapshot
    params: dict = field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return self.u.grid

    def fields(self) -> tuple[FieldSnapshot, ...]:
        return self.u, self.b, self.P, self.f, self.g


def _space_time(grid: Grid, name: str, amplitude: float, sigma: float | None, drift: tuple[float, float, float]):
    """Return (u, b, du/dt, db/dt) arrays of shape (nt, 3, nz, ny, nx) and the decay rate used."""
    X, Y, Z = grid.mesh()
    T = grid.times
    if name == "taylor-green":
        rate = 2.0 if sigma is None else sigma
        su = sb = _tg(X, Y, Z)
        off = np.zeros(3)
    elif name == "abc-drift":
        rate = 1.0 if sigma is None else sigma
        su = _abc(X, Y, Z, 1.0, 0.8, 0.6)
        sb = _abc(X, Y, Z, 0.8, 0.6, 1.0)
        off = np.asarray(drift, float)
    elif name == "product-modes":
        rate = 1.0 if sigma is None else sigma
        su, sb = _product_u(X, Y, Z), _product_b(X, Y, Z)
        off = np.zeros(3)
    else:
        raise ParameterError(f"unknown manufactured solution {name!r}; choose from {list(MANUFACTURED)}")
    decay = amplitude * np.exp(-rate * T)[:, None, None, None, None]
    u = decay * su[None] + off[None, :, None, None, None]
    b = decay * sb[None]
    dudt = -rate * decay * su[None]
    dbdt = -rate * decay * sb[None]
    return u, b, dudt, dbdt, rate


def manufactured_solution(name: str, grid: Grid, amplitude: float = 1.0, sigma: float | None = None,
                          drift: tuple[float, float, float] = (0.3, -0.2, 0.1)) -> ManufacturedSolution:
    """Exact tuple for ``name`` in {taylor-green, abc-drift, product-modes}.

    The spatial profiles are divergence-free trigonometric polynomials with an
    exponential time factor e^{-sigma t}. P solves the pressure equation and the
    forces are defined so the system holds identically:
    f = d_t u - Delta u + (b.grad)u + grad P, g = d_t b - Delta b + (u.grad)b + grad P.
    The box must be the 2 pi periodic cube (or a multiple of it).
    """
    for L in grid.box_length:
        if abs(L / (2 * math.pi) - round(L / (2 * math.pi))) > 1e-12:
            raise ParameterError("manufactured solutions need box lengths that are multiples of 2 pi")
    u, b, dudt, dbdt, rate = _space_time(grid, name, amplitude, sigma, drift)
    ws = workspace(grid)
    P = np.empty((grid.nt, 1) + grid.shape3)
    f = np.empty_like(u)
    g = np.empty_like(u)
    for n in range(grid.nt):
        p = pressure_slice(ws, u[n], b[n])
        P[n, 0] = p
        gp = ws.grad(p)
        f[n] = dudt[n] - ws.lap(u[n]) + ws.advect(b[n], u[n]) + gp
        g[n] = dbdt[n] - ws.lap(b[n]) + ws.advect(u[n], b[n]) + gp
    if name == "taylor-green" and rate == 2.0:
        # the aligned Taylor-Green tuple is force-free; drop round-off
        f[...] = 0.0
        g[...] = 0.0
    mk = lambda a, nm: FieldSnapshot(grid, a, nm)  # noqa: E731
    return ManufacturedSolution(name, mk(u, "u"), mk(b, "b"), mk(P, "P"), mk(f, "f"), mk(g, "g"),
                                mk(dudt, "dudt"), mk(dbdt, "dbdt"),
                                {"amplitude": amplitude, "sigma": rate, "drift": list(drift) if name == "abc-drift" else None})


def mhd_residual(u: FieldSnapshot, b: FieldSnapshot, P: FieldSnapshot, f: FieldSnapshot, g: FieldSnapshot,
                 dudt: FieldSnapshot | None = None, dbdt: FieldSnapshot | None = None) -> dict:
    """Max residual of both equations.

    With analytic time derivatives the residual is evaluated on every slice (it
    measures the spatial discretization); otherwise second-order central
    differences are used on interior slices.
    """
    grid = u.grid
    ws = workspace(grid)
    if dudt is not None and dbdt is not None:
        idx = np.arange(grid.nt)
        du, db = dudt.data, dbdt.data
    else:
        if grid.nt < 3:
            raise ParameterError("central time differences need at least 3 slices")
        idx = np.arange(1, grid.nt - 1)
        du = np.zeros_like(u.data)
        db = np.zeros_like(b.data)
        du[idx] = (u.data[2:] - u.data[:-2]) / (2 * grid.dt)
        db[idx] = (b.data[2:] - b.data[:-2]) / (2 * grid.dt)
    ru = rb = 0.0
    for n in idx:
        gp = ws.grad(P.data[n, 0])
        Ru = du[n] - ws.lap(u.data[n]) + ws.advect(b.data[n], u.data[n]) + gp - f.data[n]
        Rb = db[n] - ws.lap(b.data[n]) + ws.advect(u.data[n], b.data[n]) + gp - g.data[n]
        ru = max(ru, float(np.abs(Ru).max()))
        rb = max(rb, float(np.abs(Rb).max()))
    return {"u": ru, "b": rb, "max": max(ru, rb),
            "time_derivative": "analytic" if dudt is not None else "central"}


# time stepper --------------------------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    """Grid, initial condition, forcing and step control (unit viscosity and resistivity)."""

    n: int = 32
    box_length: float = 2 * math.pi
    dt: float = 1e-3
    steps: int = 100
    stride: int = 1
    initial: str = "taylor-green"
    amplitude: float = 1.0
    forcing: str = "zero"
    forcing_amplitude: float = 0.0
    cfl: float = 0.5
    seed: int = 0
    kmax: int = 4

    def __post_init__(self) -> None:
        if self.initial not in INITIAL_CONDITIONS:
            raise ParameterError(f"unknown initial condition {self.initial!r}; choose from {list(INITIAL_CONDITIONS)}")
        if self.forcing not in FORCINGS:
            raise ParameterError(f"unknown forcing {self.forcing!r}; choose from {list(FORCINGS)}")
        if not 0 < self.cfl < 1:
            raise ParameterError(f"cfl must lie in ]0,1[, got {self.cfl}")
        if self.dt <= 0 or self.steps < 1 or self.stride < 1:
            raise ParameterError("dt must be positive, steps and stride at least 1")
        Grid.cube(self.n, self.box_length)

    @property
    def grid(self) -> Grid:
        return Grid.cube(self.n, self.box_length, nt=1, dt=self.dt)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown simulation keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class SimState:
    t: float
    u_hat: np.ndarray
    b_hat: np.ndarray


def _random_solenoidal(ws, rng: np.random.Generator, kmax: int) -> np.ndarray:
    a = rng.standard_normal((3,) + ws.shape)
    ah = ws.fwd(a)
    ah = np.where(ws.k2 <= kmax ** 2, ah, 0.0) * (ws.k2 > 0)
    out = ws.inv(ws.leray_hat(ah))
    return out / max(1e-300, float(np.sqrt(np.mean(np.sum(out ** 2, axis=0)))))


def initial_fields(config: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    grid = config.grid
    ws = workspace(grid)
    X, Y, Z = grid.mesh()
    A = config.amplitude
    rng = np.random.default_rng(config.seed)
    if config.initial == "taylor-green":
        u = b = A * _tg(X, Y, Z)
    elif config.initial == "abc":
        u, b = A * _abc(X, Y, Z, 1.0, 0.8, 0.6), A * _abc(X, Y, Z, 0.8, 0.6, 1.0)
    elif config.initial == "random":
        u = A * _random_solenoidal(ws, rng, config.kmax)
        b = A * _random_solenoidal(ws, rng, config.kmax)
    elif config.initial == "aligned-random":
        u = b = A * _random_solenoidal(ws, rng, config.kmax)
    elif config.initial == "mode":
        u = A * np.stack([np.sin(2 * Z), np.zeros_like(X), np.zeros_like(X)])
        b = np.zeros_like(u)
    else:
        u = b = np.zeros((3,) + grid.shape3)
    return ws.leray(u), ws.leray(b)


def forcing_fields(config: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    grid = config.grid
    X, Y, Z = grid.mesh()
    if config.forcing == "kolmogorov":
        f = config.forcing_amplitude * np.stack([np.sin(Y), np.zeros_like(X), np.zeros_like(X)])
        return f, f.copy()
    z = np.zeros((3,) + grid.shape3)
    return z, z.copy()


class Integrator:
    """RK4 with an integrating factor exp(-|k|^2 t) on (u, b) in Fourier space."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.grid = config.grid
        self.ws = workspace(self.grid)
        f, g = forcing_fields(config)
        self.f, self.g = f, g
        self.f_hat = self.ws.leray_hat(self.ws.fwd(f))
        self.g_hat = self.ws.leray_hat(self.ws.fwd(g))

    def nonlinear(self, u_hat: np.ndarray, b_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ws = self.ws
        u, b = ws.inv(u_hat), ws.inv(b_hat)
        Ju = np.stack([ws.inv(1j * ws.kd[j] * u_hat) for j in range(3)], axis=1)
        Jb = np.stack([ws.inv(1j * ws.kd[j] * b_hat) for j in range(3)], axis=1)
        nu = ws.mask * ws.fwd(np.einsum("jzyx,ijzyx->izyx", b, Ju))
        nb = ws.mask * ws.fwd(np.einsum("jzyx,ijzyx->izyx", u, Jb))
        return ws.leray_hat(-nu) + self.f_hat, ws.leray_hat(-nb) + self.g_hat

    def cfl_number(self, state: SimState, dt: float) -> float:
        u, b = self.ws.inv(state.u_hat), self.ws.inv(state.b_hat)
        speed = float(np.max(np.abs(u))) + float(np.max(np.abs(b)))
        return speed * dt / min(self.grid.spacing)

    def step(self, state: SimState, dt: float) -> SimState:
        """Advance one RK4 step; a CFL violation rejects the step."""
        c = self.cfl_number(state, dt)
        if c > self.config.cfl:
            raise CFLError(f"step rejected at t={state.t:.6g}: CFL number {c:.3g} exceeds {self.config.cfl}")
        k2 = self.ws.k2
        E1 = np.exp(-k2 * dt / 2)
        E2 = E1 * E1
        u0, b0 = state.u_hat, state.b_hat
        a1u, a1b = self.nonlinear(u0, b0)
        a2u, a2b = self.nonlinear(E1 * (u0 + dt / 2 * a1u), E1 * (b0 + dt / 2 * a1b))
        a3u, a3b = self.nonlinear(E1 * u0 + dt / 2 * a2u, E1 * b0 + dt / 2 * a2b)
        a4u, a4b = self.nonlinear(E2 * u0 + dt * E1 * a3u, E2 * b0 + dt * E1 * a3b)
        u1 = E2 * u0 + dt / 6 * (E2 * a1u + 2 * E1 * (a2u + a3u) + a4u)
        b1 = E2 * b0 + dt / 6 * (E2 * a1b + 2 * E1 * (a2b + a3b) + a4b)
        ws = self.ws
        return SimState(state.t + dt, ws.leray_hat(u1), ws.leray_hat(b1))

    def energy(self, state: SimState) -> dict:
        ws = self.ws
        u, b = ws.inv(state.u_hat), ws.inv(state.b_hat)
        e = 0.5 * sum(ws.spectral_l2_sq(X[c]) for X in (u, b) for c in range(3))
        diss = float(np.sum(ws.grad_vec(u) ** 2) + np.sum(ws.grad_vec(b) ** 2)) * self.grid.cell_volume
        work = float(np.sum(self.f * u) + np.sum(self.g * b)) * self.grid.cell_volume
        return {"energy": e, "dissipation": diss, "work": work}


@dataclass(frozen=True, eq=False)
class SimRun:
    config: SimConfig
    times: np.ndarray
    u: np.ndarray
    b: np.ndarray
    energy: list = field(default_factory=list)


def simulate(config: SimConfig, initial: tuple[np.ndarray, np.ndarray] | None = None) -> SimRun:
    """Integrate ``config.steps`` steps and keep every ``config.stride``-th state (first included)."""
    integ = Integrator(config)
    ws = integ.ws
    u0, b0 = initial if initial is not None else initial_fields(config)
    for X, nm in ((u0, "u"), (b0, "b")):
        d = float(np.abs(ws.div(X)).max())
        if d > 1e-8 * max(1.0, float(np.abs(X).max())):
            raise PreconditionError(f"initial {nm} is not divergence-free (max|div| = {d:.3e})")
    state = SimState(0.0, ws.fwd(u0), ws.fwd(b0))
    times, us, bs, en = [0.0], [u0.copy()], [b0.copy()], [integ.energy(state)]
    for k in range(1, config.steps + 1):
        state = integ.step(state, config.dt)
        en.append(integ.energy(state))
        if k % config.stride == 0:
            times.append(k * config.dt)
            us.append(ws.inv(state.u_hat))
            bs.append(ws.inv(state.b_hat))
    return SimRun(config, np.array(times), np.stack(us), np.stack(bs), en)


def energy_balance_closure(run: SimRun) -> dict:
    """Cumulative defect of E(T) - E(0) + int (D - W) dt with composite Simpson quadrature."""
    e = np.array([r["energy"] for r in run.energy])
    d = np.array([r["dissipation"] for r in run.energy])
    w = np.array([r["work"] for r in run.energy])
    integral = float(simpson(d - w, dx=run.config.dt))
    defect = float(e[-1] - e[0] + integral)
    return {"energy_start": float(e[0]), "energy_end": float(e[-1]), "dissipated": float(integral),
            "defect": defect, "relative_defect": abs(defect) / max(float(e[0]), 1e-300)}


def record(run: SimRun, stride: int = 1, out_dir: str | os.PathLike | None = None) -> dict[str, FieldSnapshot]:
    """Snapshots (u, b, P, f, g) every ``stride`` stored states; P recomputed per slice.

    With ``out_dir`` the five snapshots are also written as FSNAP1 files.
    """
    if stride < 1:
        raise ParameterError("stride must be at least 1")
    cfg = run.config
    sel = np.arange(0, run.u.shape[0], stride)
    dt_out = cfg.dt * cfg.stride * stride
    grid = Grid.cube(cfg.n, cfg.box_length, nt=int(sel.size), dt=dt_out, t_start=0.0)
    ws = workspace(grid)
    u, b = run.u[sel], run.b[sel]
    P = np.stack([pressure_slice(ws, u[n], b[n])[None] for n in range(sel.size)])
    f0, g0 = forcing_fields(cfg)
    f = np.broadcast_to(f0, u.shape).copy()
    g = np.broadcast_to(g0, u.shape).copy()
    snaps = {k: FieldSnapshot(grid, a, k) for k, a in (("u", u), ("b", b), ("P", P), ("f", f), ("g", g))}
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        for k, X in snaps.items():
            write_fsnap(Path(out_dir) / f"{k}.fsnap", X)
    return snaps
