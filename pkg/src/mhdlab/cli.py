"""Command-line front end: configuration, report assembly and the end-to-end pipeline."""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from ._fft import set_threads
from .criterion import CriterionParams, gradient_density_scan, serrin_hypothesis_check, singular_set_boxcount
from .dissipation import MollifierLadder, TestBank, dissipation_pipeline
from .elsasser import check_solenoidal, from_elsasser, max_divergence, pressure_residual, solve_pressure, to_elsasser
from .errors import ToleranceError, ValidationError
from .fsnap import read_fsnap, write_fsnap
from .grid import FieldSnapshot, Grid, ParabolicCylinder, require_same_grid
from .localization import Radii, build_companion, build_cutoff, localization_report
from .norms import (HolderParams, MorreyParams, holder_seminorm, local_morrey_bound,
                    morrey_norm, morrey_radii_for, space_time_norms)
from .sim import SimConfig, energy_balance_closure, manufactured_solution, mhd_residual, record, simulate

EXIT_OK, EXIT_VALIDATION, EXIT_TOLERANCE = 0, 2, 3
COMMANDS = ("synth", "simulate", "elsasser", "correct", "norms", "dissipation", "criterion", "serrin", "pipeline")

DEFAULTS: dict = {
    "data": {"source": "synth", "name": "taylor-green", "n": 32, "nt": 72, "dt": 0.02, "amplitude": 1.0,
             "sigma": None},
    "simulation": SimConfig().to_dict(),
    "center": {"t0": None, "x0": [2.0, 2.5, 3.0]},
    "cutoff": {"radii": [0.9, 1.0, 1.1, 1.2, 2.9], "profile": "erf"},
    "mollifier": {"rungs": 4, "ratio": 2.0, "theta_profile": "exp", "phi_profile": "exp",
                  "space_kernel": "continuous"},
    "bank": {"shrink": 0.5},
    "morrey": {"p": 3.0, "q": 6.0, "n_radii": 4, "stride": 2, "masked": False},
    "holder": {"alpha": 0.5, "pair_budget": 20000},
    "criterion": {"epsilon_star": 0.01, "rungs": 3, "ratio": math.sqrt(2.0), "radii": None, "points": None,
                  "physical": False, "boxcount": True},
    "serrin": {"exponents": [[3.0, 6.0], [3.0, 6.0]], "radius": None, "stride": 2, "shrink": 0.5},
    "tolerances": {"tol_factor": 10.0, "solenoidal": 1e-6, "laplacian_identity": 1e-6, "pressure": 1e-8},
    "seed": 0,
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ValidationError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and k != "simulation":
            if not isinstance(v, dict):
                raise ValidationError(f"config key {path + k!r} must be an object")
            out[k] = _merge(base[k], v, path + k + ".")
        elif k == "simulation":
            if not isinstance(v, dict):
                raise ValidationError("config key 'simulation' must be an object")
            out[k] = SimConfig.from_dict({**base[k], **v}).to_dict()
        else:
            out[k] = v
    return out


@dataclass
class RunConfig:
    """Resolved parameter blocks plus input paths and the output directory."""

    params: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))
    inputs: list[str] = field(default_factory=list)
    out: str = "mhdlab-out"
    strict: bool = False

    @classmethod
    def load(cls, path: str | None, overrides: dict | None = None, **kw) -> "RunConfig":
        params = copy.deepcopy(DEFAULTS)
        if path is not None:
            params = _merge(params, _read_config(path))
        if overrides:
            params = _merge(params, overrides)
        cfg = cls(params, **kw)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for p in self.inputs:
            if not Path(p).is_file():
                raise ValidationError(f"input file {p!r} does not exist")
        out = Path(self.out)
        if out.exists() and not out.is_dir():
            raise ValidationError(f"output path {self.out!r} is not a directory")
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise ValidationError(f"output directory {self.out!r} is not writable")
        Radii(*self.params["cutoff"]["radii"])
        if self.params["data"]["source"] not in ("synth", "simulate", "files"):
            raise ValidationError("data.source must be one of synth, simulate, files")

    def section(self, name: str) -> dict:
        return self.params[name]

    def to_dict(self) -> dict:
        # thread count is deliberately absent: it must not change any report
        return {"params": self.params, "inputs": [Path(p).name for p in self.inputs], "strict": self.strict}


def _read_config(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        bundled = resources.files("mhdlab") / "data" / p.name
        if not bundled.is_file():
            raise ValidationError(f"config file {path!r} does not exist")
        text = bundled.read_text()
    else:
        text = p.read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path!r} is not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise ValidationError("config must be a JSON object")
    return d


# ---------------------------------------------------------------------------
# reports

def _clean(obj):
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    return obj


def dumps(report: dict) -> str:
    return json.dumps(_clean(report), sort_keys=True, indent=2) + "\n"


def write_report(out: str | Path, name: str, report: dict) -> Path:
    path = Path(out) / f"{name}.json"
    path.write_text(dumps(report))
    return path


def write_csv(out: str | Path, name: str, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    path = Path(out) / f"{name}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


class Checks:
    """Numerical-tolerance checks; under --strict any failure aborts with exit 3."""

    def __init__(self) -> None:
        self.items: list[dict] = []

    def add(self, name: str, value: float, tol: float, ok: bool | None = None) -> None:
        ok = bool(value <= tol) if ok is None else bool(ok)
        self.items.append({"name": name, "value": value, "tol": tol, "ok": ok})

    @property
    def failed(self) -> list[dict]:
        return [c for c in self.items if not c["ok"]]

    def enforce(self, strict: bool) -> None:
        if strict and self.failed:
            names = ", ".join(c["name"] for c in self.failed)
            raise ToleranceError(f"tolerance checks failed: {names}")


def _envelope(cfg: RunConfig, command: str, body: dict, checks: Checks) -> dict:
    return {"tool": {"name": "mhdlab", "version": __version__}, "command": command, "config": cfg.to_dict(),
            "checks": checks.items, "report": body}


# ---------------------------------------------------------------------------
# data access

_PHYSICAL = ("U", "B", "F", "G")
_ELSASSER = ("u", "b", "P", "f", "g")


def load_inputs(paths: Sequence[str], expected: Sequence[str]) -> dict[str, FieldSnapshot]:
    """Read FSNAP1 files keyed by header field name, falling back to file stem, then to position."""
    out = {}
    for i, p in enumerate(paths):
        X = read_fsnap(p)
        name = X.name or Path(p).stem
        if name not in expected and i < len(expected):
            name = expected[i]
        if name in out:
            raise ValidationError(f"field {name!r} given twice")
        out[name] = X
    if out:
        require_same_grid(*out.values())
    return out


def synth_data(cfg: RunConfig) -> dict:
    d = cfg.section("data")
    grid = Grid.cube(int(d["n"])).with_time(int(d["nt"]), dt=float(d["dt"]))
    ms = manufactured_solution(d["name"], grid, amplitude=float(d["amplitude"]), sigma=d["sigma"])
    return {"u": ms.u, "b": ms.b, "P": ms.P, "f": ms.f, "g": ms.g}


def _simulation_config(cfg: RunConfig) -> SimConfig:
    sc = dict(cfg.section("simulation"))
    sc["seed"] = int(cfg.params["seed"])
    return SimConfig.from_dict(sc)


def elsasser_data(cfg: RunConfig, checks: Checks | None = None) -> dict[str, FieldSnapshot]:
    """(u, b, P, f, g) from --input files, a simulation, or manufactured data."""
    src = cfg.section("data")["source"]
    if cfg.inputs or src == "files":
        fields = load_inputs(cfg.inputs, _ELSASSER)
        if "U" in fields or "B" in fields:
            phys = {k: fields[k] for k in _PHYSICAL if k in fields}
            if "U" not in phys or "B" not in phys:
                raise ValidationError("physical inputs need both U and B")
            zero = FieldSnapshot.zeros(phys["U"].grid)
            u, b, f, g = to_elsasser(phys["U"], phys["B"], phys.get("F", zero), phys.get("G", zero))
            fields = {"u": u, "b": b, "f": f, "g": g, **({"P": fields["P"]} if "P" in fields else {})}
        if "u" not in fields or "b" not in fields:
            raise ValidationError("inputs must provide u and b (or U and B)")
        zero = FieldSnapshot.zeros(fields["u"].grid)
        fields.setdefault("f", zero)
        fields.setdefault("g", zero)
    elif src == "simulate":
        fields = record(simulate(_simulation_config(cfg)))
    else:
        fields = synth_data(cfg)
    if "P" not in fields:
        fields["P"] = solve_pressure(fields["u"], fields["b"], check=False)
    if checks is not None:
        tol = cfg.section("tolerances")
        for k in ("u", "b"):
            checks.add(f"divergence_{k}", max_divergence(fields[k]), tol["solenoidal"])
        checks.add("pressure_equation", pressure_residual(fields["P"], fields["u"], fields["b"]), tol["pressure"])
    return fields


def _center(cfg: RunConfig, grid: Grid) -> tuple[float, tuple[float, float, float]]:
    c = cfg.section("center")
    t0 = float(grid.times[grid.nt // 2]) if c["t0"] is None else float(c["t0"])
    return t0, tuple(float(v) for v in c["x0"])


def _cutoff(cfg: RunConfig, grid: Grid):
    c = cfg.section("cutoff")
    return build_cutoff(grid, _center(cfg, grid), Radii(*c["radii"]), c["profile"])


def _window(grid: Grid, Q: ParabolicCylinder) -> tuple[int, int]:
    """Slices meeting the time extent of Q plus one on each side (clipped)."""
    sel = np.flatnonzero(np.abs(grid.times - Q.t0) < Q.r ** 2)
    if sel.size == 0:
        raise ValidationError("no time slice meets the inner cylinder")
    return max(int(sel[0]) - 1, 0), min(int(sel[-1]) + 2, grid.nt)


def _criterion_params(cfg: RunConfig, grid: Grid) -> CriterionParams:
    c = cfg.section("criterion")
    if c["radii"] is not None:
        return CriterionParams(epsilon_star=float(c["epsilon_star"]), radii=tuple(c["radii"]),
                               window=min(3, len(c["radii"])))
    return CriterionParams.for_grid(grid, rungs=int(c["rungs"]), ratio=float(c["ratio"]),
                                    epsilon_star=float(c["epsilon_star"]), window=min(3, int(c["rungs"])))


# ---------------------------------------------------------------------------
# steps

def step_correct(cfg: RunConfig, fields: dict, checks: Checks, write: bool = True) -> dict:
    grid = fields["u"].grid
    cut = _cutoff(cfg, grid)
    window = _window(grid, cut.cylinder("rho0"))
    system = build_companion(fields["u"], fields["b"], fields["f"], fields["g"], cut, window=window, check=False)
    rep = localization_report(fields["u"], fields["b"], fields["f"], fields["g"], system)
    rep["cutoff"] = cut.to_dict()
    rep["cutoff_invariants"] = cut.check_invariants()
    rep["window"] = list(window)
    tol = cfg.section("tolerances")
    checks.add("laplacian_identity_v", rep["laplacian_identity_max"]["v"], tol["laplacian_identity"])
    checks.add("laplacian_identity_h", rep["laplacian_identity_max"]["h"], tol["laplacian_identity"])
    if write:
        for X, nm in ((system.v, "v"), (system.h, "h"), (system.beta, "beta"), (system.gamma, "gamma"),
                      (system.q, "q"), (system.r, "r"), (system.k, "k"), (system.l, "l")):
            write_fsnap(Path(cfg.out) / f"{nm}.fsnap", X, nm)
    return rep


def step_norms(cfg: RunConfig, named: dict[str, FieldSnapshot], checks: Checks) -> dict:
    m = cfg.section("morrey")
    grid = next(iter(named.values())).grid
    mask = None
    if m["masked"]:
        mask = _cutoff(cfg, grid).cylinder("rho0")
    if mask is not None:
        r_max = mask.r
    else:
        h, L = max(grid.spacing), min(grid.box_length)
        r_max = min(max(0.25 * L, 3.0 * h), 0.5 * (L - 2.0 * h))
        if grid.nt >= 3:
            # cylinders must also fit between the first and last interior slices
            r_max = min(r_max, math.sqrt(((grid.nt - 3) // 2 + 0.5) * grid.dt))
        if r_max <= 2.0 * h:
            raise ValidationError(f"sampled window too short for Morrey cylinders: the largest radius that "
                                  f"fits is {r_max:.3g}, two cells are {2.0 * h:.3g}")
    radii = morrey_radii_for(grid, r_max, int(m["n_radii"]))
    params = MorreyParams(float(m["p"]), float(m["q"]), radii, int(m["stride"]))
    hp = HolderParams(float(cfg.section("holder")["alpha"]), int(cfg.section("holder")["pair_budget"]),
                      seed=int(cfg.params["seed"]))
    out = {}
    for name, X in named.items():
        res = morrey_norm(X, params, mask=mask).to_dict()
        hold = holder_seminorm(X, hp)
        out[name] = {"morrey": res, "holder": hold}
        checks.add(f"morrey_finite_{name}", 0.0, 0.0, ok=math.isfinite(res["norm"]))
    return out


def step_dissipation(cfg: RunConfig, fields: dict, checks: Checks) -> tuple[dict, list]:
    grid = fields["u"].grid
    cut = _cutoff(cfg, grid)
    mo = cfg.section("mollifier")
    ladder = MollifierLadder.geometric(grid, rungs=int(mo["rungs"]), ratio=float(mo["ratio"]),
                                       theta_profile=mo["theta_profile"], phi_profile=mo["phi_profile"],
                                       space_kernel=mo["space_kernel"])
    bank = TestBank.lattice(grid, cut.cylinder("rho0").shrink(float(cfg.section("bank")["shrink"])))
    res = dissipation_pipeline(fields["u"], fields["b"], fields["P"], fields["f"], fields["g"], cut, ladder, bank,
                               tol_factor=float(cfg.section("tolerances")["tol_factor"]))
    rep = res.to_dict()
    rep["ladder"] = ladder.to_dict()
    rep["test_bank"] = bank.to_dict()
    checks.add("routes_agree", 0.0, 0.0, ok=bool(res.agreement) if res.agreement is not None else True)
    checks.add("pressure_limit_converged", 0.0, 0.0, ok=bool(np.all(res.pressure.converged)))
    rows = []
    tab = res.table
    for a, alpha in enumerate(ladder.alphas):
        for e, eps in enumerate(ladder.epsilons):
            for i, nm in enumerate(bank.names):
                rows.append((nm, alpha, eps, tab.pressure[a, e, i]))
    return rep, rows


def step_criterion(cfg: RunConfig, fields: dict, checks: Checks) -> tuple[dict, list]:
    u, b = fields["u"], fields["b"]
    grid = u.grid
    params = _criterion_params(cfg, grid)
    c = cfg.section("criterion")
    pts = c["points"]
    if pts is None:
        pts = [_center(cfg, grid)]
    else:
        pts = [(float(p[0]), tuple(float(v) for v in p[1:4])) for p in pts]
    verdicts = gradient_density_scan(u, b, pts, params, physical=bool(c["physical"]))
    rep = {"params": params.to_dict(), "points": [v.to_dict() for v in verdicts]}
    if c["boxcount"]:
        rep["singular_set"] = singular_set_boxcount(u, b, params, physical=bool(c["physical"])).to_dict()
    rows = [row for v in verdicts for row in v.csv_rows()]
    return rep, rows


def step_serrin(cfg: RunConfig, fields: dict, checks: Checks) -> dict:
    s = cfg.section("serrin")
    if "U" in fields:
        U, B = fields["U"], fields["B"]
    else:
        U, B, _, _ = from_elsasser(fields["u"], fields["b"], fields["f"], fields["g"])
    grid = U.grid
    t0, x0 = _center(cfg, grid)
    r = float(s["radius"]) if s["radius"] is not None else float(cfg.section("cutoff")["radii"][0])
    (p0, q0), (p1, q1) = s["exponents"]
    rep = serrin_hypothesis_check(U, B, ParabolicCylinder(t0, x0, r), ((p0, q0), (p1, q1)),
                                  stride=int(s["stride"]), shrink=float(s["shrink"]))
    checks.add("serrin_norms_finite", 0.0, 0.0, ok=rep["hypothesis_satisfied"])
    return rep


# ---------------------------------------------------------------------------
# commands

def cmd_synth(cfg: RunConfig, args) -> dict:
    checks = Checks()
    fields = synth_data(cfg)
    for k, X in fields.items():
        write_fsnap(Path(cfg.out) / f"{k}.fsnap", X, k)
    res = mhd_residual(fields["u"], fields["b"], fields["P"], fields["f"], fields["g"])
    body = {"files": sorted(f"{k}.fsnap" for k in fields), "grid": fields["u"].grid.to_dict(), "residual": res}
    return _finish(cfg, "synth", body, checks)


def cmd_simulate(cfg: RunConfig, args) -> dict:
    checks = Checks()
    run = simulate(_simulation_config(cfg))
    fields = record(run, out_dir=cfg.out)
    closure = energy_balance_closure(run)
    body = {"files": sorted(f"{k}.fsnap" for k in fields), "grid": fields["u"].grid.to_dict(),
            "energy_closure": closure, "energy": run.energy}
    rows = [(i * run.config.dt, e["energy"], e["dissipation"], e["work"]) for i, e in enumerate(run.energy)]
    write_csv(cfg.out, "energy", ("t", "energy", "dissipation", "work"), rows)
    return _finish(cfg, "simulate", body, checks)


def cmd_elsasser(cfg: RunConfig, args) -> dict:
    checks = Checks()
    fields = load_inputs(cfg.inputs, _PHYSICAL if not args.inverse else _ELSASSER)
    if args.inverse:
        u, b = fields["u"], fields["b"]
        zero = FieldSnapshot.zeros(u.grid)
        outs = dict(zip(_PHYSICAL, from_elsasser(u, b, fields.get("f", zero), fields.get("g", zero))))
    else:
        if "U" not in fields or "B" not in fields:
            raise ValidationError("elsasser needs U and B inputs")
        zero = FieldSnapshot.zeros(fields["U"].grid)
        outs = dict(zip(("u", "b", "f", "g"), to_elsasser(fields["U"], fields["B"], fields.get("F", zero),
                                                         fields.get("G", zero))))
        for k in ("u", "b"):
            check_solenoidal(outs[k], k, cfg.section("tolerances")["solenoidal"])
        outs["P"] = solve_pressure(outs["u"], outs["b"], check=False)
        checks.add("pressure_equation", pressure_residual(outs["P"], outs["u"], outs["b"]),
                   cfg.section("tolerances")["pressure"])
    for k, X in outs.items():
        write_fsnap(Path(cfg.out) / f"{k}.fsnap", X, k)
    body = {"files": sorted(f"{k}.fsnap" for k in outs),
            "divergence_max": {k: max_divergence(X) for k, X in outs.items() if not X.is_scalar}}
    return _finish(cfg, "elsasser", body, checks)


def cmd_correct(cfg: RunConfig, args) -> dict:
    checks = Checks()
    fields = elsasser_data(cfg, checks)
    body = step_correct(cfg, fields, checks)
    body["global_norms"] = space_time_norms(fields["u"], fields["b"])
    return _finish(cfg, "localization", body, checks)


def cmd_norms(cfg: RunConfig, args) -> dict:
    checks = Checks()
    if cfg.inputs:
        named = {}
        for i, p in enumerate(cfg.inputs):
            X = read_fsnap(p)
            named[X.name or Path(p).stem or f"field{i}"] = X
    else:
        fields = elsasser_data(cfg)
        named = {"u": fields["u"], "b": fields["b"]}
    body = step_norms(cfg, named, checks)
    return _finish(cfg, "norms", body, checks)


def cmd_dissipation(cfg: RunConfig, args) -> dict:
    checks = Checks()
    fields = elsasser_data(cfg, checks)
    body, rows = step_dissipation(cfg, fields, checks)
    write_csv(cfg.out, "defect_table", ("function", "alpha", "epsilon", "pressure_pairing"), rows)
    return _finish(cfg, "dissipation", body, checks)


def cmd_criterion(cfg: RunConfig, args) -> dict:
    checks = Checks()
    fields = elsasser_data(cfg)
    body, rows = step_criterion(cfg, fields, checks)
    write_csv(cfg.out, "criterion", ("t0", "x", "y", "z", "r", "G"), rows)
    return _finish(cfg, "criterion", body, checks)


def cmd_serrin(cfg: RunConfig, args) -> dict:
    checks = Checks()
    if cfg.inputs:
        fields = load_inputs(cfg.inputs, _PHYSICAL)
        if "U" not in fields or "B" not in fields:
            fields = elsasser_data(cfg)
    else:
        fields = elsasser_data(cfg)
    body = step_serrin(cfg, fields, checks)
    return _finish(cfg, "serrin", body, checks)


def cmd_pipeline(cfg: RunConfig, args) -> dict:
    """Elsasser data, harmonic correction, norms, dissipation, criterion, Serrin check: one master report."""
    checks = Checks()
    fields = elsasser_data(cfg, checks)
    u, b = fields["u"], fields["b"]
    grid = u.grid
    body: dict = {"grid": grid.to_dict()}
    body["elsasser"] = {"divergence_max": {"u": max_divergence(u), "b": max_divergence(b)},
                        "pressure_residual": pressure_residual(fields["P"], u, b),
                        "global_norms": space_time_norms(u, b)}
    body["localization"] = step_correct(cfg, fields, checks, write=False)
    cut = _cutoff(cfg, grid)
    m = cfg.section("morrey")
    Q0 = cut.cylinder("rho0")
    radii = morrey_radii_for(grid, Q0.r, int(m["n_radii"]))
    body["norms"] = {k: local_morrey_bound(X, Q0, float(m["p"]), float(m["q"]), radii, int(m["stride"]))
                     for k, X in (("u", u), ("b", b))}
    body["norms"]["params"] = {"p": float(m["p"]), "q": float(m["q"]), "radii": list(radii),
                               "stride": int(m["stride"])}
    body["dissipation"], rows = step_dissipation(cfg, fields, checks)
    write_csv(cfg.out, "defect_table", ("function", "alpha", "epsilon", "pressure_pairing"), rows)
    body["criterion"], crow = step_criterion(cfg, fields, checks)
    write_csv(cfg.out, "criterion", ("t0", "x", "y", "z", "r", "G"), crow)
    body["serrin"] = step_serrin(cfg, fields, checks)
    sing = body["criterion"].get("singular_set")
    body["summary"] = {
        "dissipative": body["dissipation"]["verdict"]["dissipative"],
        "routes_agree": body["dissipation"].get("routes_agree"),
        "point_verdicts": [p["verdict"] for p in body["criterion"]["points"]],
        "singular_set_empty": None if sing is None else sing["empty"],
        "serrin_hypothesis_satisfied": body["serrin"]["hypothesis_satisfied"],
    }
    return _finish(cfg, "pipeline", body, checks)


def _finish(cfg: RunConfig, name: str, body: dict, checks: Checks) -> dict:
    report = _envelope(cfg, name, body, checks)
    write_report(cfg.out, name, report)
    checks.enforce(cfg.strict)
    return report


HANDLERS = {"synth": cmd_synth, "simulate": cmd_simulate, "elsasser": cmd_elsasser, "correct": cmd_correct,
            "norms": cmd_norms, "dissipation": cmd_dissipation, "criterion": cmd_criterion,
            "serrin": cmd_serrin, "pipeline": cmd_pipeline}


# ---------------------------------------------------------------------------
# argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise ValidationError(f"{self.prog}: {message}")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration (bundled names such as demo.json "
                                                          "are also accepted)")
    common.add_argument("--input", metavar="PATH", nargs="+", default=[], help="FSNAP1 input files")
    common.add_argument("--out", metavar="DIR", default="mhdlab-out", help="output directory")
    common.add_argument("--strict", action="store_true", help="exit 3 when a numerical tolerance check fails")
    common.add_argument("--threads", type=int, metavar="N", help="FFT worker threads (default MHDLAB_THREADS or 1)")
    common.add_argument("--seed", type=int, metavar="N", help="seed for random sampling and initial data")
    common.add_argument("--radii", type=_floats, metavar="R0,R3,R2,R1,R", help="cut-off radii ladder")
    common.add_argument("--profile", choices=("erf", "quintic", "smooth-exp"), help="cut-off ramp profile")
    common.add_argument("--center", type=_floats, metavar="T0,X,Y,Z", help="cylinder center")

    parser = _Parser(prog="mhdlab", description="Localized MHD regularity diagnostics on periodic grids.")
    parser.add_argument("--version", action="version", version=f"mhdlab {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    sub.add_parser("synth", parents=[common], help="manufactured exact data")
    sub.add_parser("simulate", parents=[common], help="pseudo-spectral MHD run")
    p = sub.add_parser("elsasser", parents=[common], help="physical to Elsasser variables and pressure")
    p.add_argument("--inverse", action="store_true", help="Elsasser to physical variables")
    sub.add_parser("correct", parents=[common], help="harmonic corrections and companion system")
    p = sub.add_parser("norms", parents=[common], help="Morrey and Hölder norms")
    p.add_argument("--p", type=float, help="Morrey integrability exponent")
    p.add_argument("--q", type=float, help="Morrey scaling exponent")
    p.add_argument("--masked", action="store_true", help="restrict to the inner cylinder of the cut-off ladder")
    sub.add_parser("dissipation", parents=[common], help="mollified energy-balance defect and lambda verdict")
    p = sub.add_parser("criterion", parents=[common], help="small-gradient criterion and singular-set box count")
    p.add_argument("--epsilon-star", type=float, help="criterion threshold")
    sub.add_parser("serrin", parents=[common], help="Serrin-type Morrey hypothesis check")
    sub.add_parser("pipeline", parents=[common], help="all steps, one master report")
    return parser


def _overrides(args) -> dict:
    o: dict = {}
    if args.seed is not None:
        o["seed"] = args.seed
    if args.radii is not None:
        if len(args.radii) != 5:
            raise ValidationError("--radii needs five values rho0,rho3,rho2,rho1,rho")
        o.setdefault("cutoff", {})["radii"] = args.radii
    if args.profile is not None:
        o.setdefault("cutoff", {})["profile"] = args.profile
    if args.center is not None:
        if len(args.center) != 4:
            raise ValidationError("--center needs four values t0,x,y,z")
        o["center"] = {"t0": args.center[0], "x0": args.center[1:]}
    if getattr(args, "p", None) is not None:
        o.setdefault("morrey", {})["p"] = args.p
    if getattr(args, "q", None) is not None:
        o.setdefault("morrey", {})["q"] = args.q
    if getattr(args, "masked", False):
        o.setdefault("morrey", {})["masked"] = True
    if getattr(args, "epsilon_star", None) is not None:
        o.setdefault("criterion", {})["epsilon_star"] = args.epsilon_star
    return o


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        set_threads(args.threads)
        cfg = RunConfig.load(args.config, _overrides(args), inputs=list(args.input), out=args.out,
                             strict=args.strict)
        HANDLERS[args.command](cfg, args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ToleranceError as exc:
        print(f"tolerance failure: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
