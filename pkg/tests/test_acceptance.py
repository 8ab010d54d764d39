"""Acceptance criteria, one test each. Every test records a PASS/FAIL line before asserting.

Run directly with ``python3 tests/test_acceptance.py`` for the criteria alone.
"""
import filecmp
import gc
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))
from conftest import ACCEPTANCE_LINES, band_limited  # noqa: E402

from mhdlab.cli import main as cli_main  # noqa: E402
from mhdlab.criterion import (CriterionParams, classify, concentration_field, gradient_density_scan,  # noqa: E402
                              loglog_slope)
from mhdlab.dissipation import (MollifierLadder, TestBank, dissipation_pipeline, nrst,  # noqa: E402
                                pressure_defect_limit)
from mhdlab.grid import FieldSnapshot, Grid, ParabolicCylinder, periodic_distance, restrict_cylinder, workspace  # noqa: E402,E501
from mhdlab.localization import (Radii, build_companion, build_cutoff, companion_residual_stream,  # noqa: E402
                                 harmonic_correction_slice, localization_report)
from mhdlab.norms import MorreyParams, lebesgue_cylinder_norm, morrey_norm  # noqa: E402
from mhdlab.profiles import bump  # noqa: E402
from mhdlab.sim import manufactured_solution  # noqa: E402

X0 = (2.0, 2.5, 3.0)
LADDER = (0.9, 1.0, 1.1, 1.2, 2.9)


def record(k: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def fitted_order(eps, vals) -> float:
    return float(np.polyfit(np.log(eps), np.log(vals), 1)[0])


class TestVectorCalculus:
    def test_identities(self):
        t = time.perf_counter()
        g = Grid.cube(32)
        ws = workspace(g)
        rng = np.random.default_rng(1)
        worst = {"div curl": 0.0, "curl grad": 0.0, "curl curl": 0.0}
        for _ in range(10):
            X = band_limited(g, rng, 10.0, solenoidal=False)
            s = band_limited(g, rng, 10.0, solenoidal=False)[0]
            worst["div curl"] = max(worst["div curl"], np.abs(ws.div(ws.curl(X))).max())
            worst["curl grad"] = max(worst["curl grad"], np.abs(ws.curl(ws.grad(s))).max())
            gap = ws.curl(ws.curl(X)) - (ws.grad(ws.div(X)) - ws.lap(X))
            worst["curl curl"] = max(worst["curl curl"], np.abs(gap).max())
        elapsed = time.perf_counter() - t
        ok = max(worst.values()) <= 1e-9 and elapsed < 10
        record(1, ok, "vector-calculus identities max error "
               + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f" in {elapsed:.1f} s")


def laplacian_gap(n: int) -> float:
    g = Grid.cube(n).with_time(3, dt=1e-3)
    m = manufactured_solution("taylor-green", g)
    cut = build_cutoff(g, (1e-3, (math.pi,) * 3), (0.4, 0.6, 0.7, 0.8, 2.9))
    ws = workspace(g)
    mask = restrict_cylinder(g, cut.cylinder("rho0"), clip_time=True)
    worst = 0.0
    for n_ in mask.time_index:
        u = m.u.data[n_]
        v = harmonic_correction_slice(ws, cut.psi_slice(n_), u)
        gap = (ws.lap(v) - ws.lap(u)).reshape(3, -1)[:, mask.flat_index]
        worst = max(worst, float(np.abs(gap).max()))
    return worst


class TestHarmonicIdentity:
    def test_laplacian_identity(self):
        coarse, fine = laplacian_gap(32), laplacian_gap(64)
        ok = fine <= 1e-7 and coarse / fine >= 10
        record(2, ok, f"max |Lap v - Lap u| on Q_rho0: 32^3 {coarse:.2e}, 64^3 {fine:.2e} "
               f"(ratio {coarse / fine:.1e})")


@pytest.fixture(scope="module")
def refinement_reports():
    out = {}
    for n in (48, 96):
        g = Grid.cube(n).with_time(3, dt=0.01, t_start=0.49)
        m = manufactured_solution("product-modes", g)
        cut = build_cutoff(g, (0.5, X0), Radii(*LADDER))
        system = build_companion(m.u, m.b, m.f, m.g, cut)
        out[n] = localization_report(m.u, m.b, m.f, m.g, system)
        del g, m, cut, system
        gc.collect()
    return out


class TestCorrectorBounds:
    def test_lipschitz_bound_stable(self, refinement_reports):
        a, b = (refinement_reports[n]["lipschitz"]["sup_grad_beta"] for n in (48, 96))
        rel = abs(a - b) / b
        ok = math.isfinite(a) and math.isfinite(b) and rel <= 0.05
        record(3, ok, f"sup |grad beta| on Q_rho0: 48^3 {a:.4f}, 96^3 {b:.4f} (change {100 * rel:.1f}%)")

    def test_pressure_and_force_integrability(self, refinement_reports):
        vals = {key: [refinement_reports[n][sec][key] for n in (48, 96)]
                for sec, key in (("pressures", "q_L3/2"), ("forces", "k_minus_k0_L2"))}
        rels = {k: abs(v[0] - v[1]) / v[1] for k, v in vals.items()}
        ok = all(math.isfinite(x) for v in vals.values() for x in v) and max(rels.values()) <= 0.10
        record(5, ok, "; ".join(f"{k}: 48^3 {v[0]:.5f}, 96^3 {v[1]:.5f} ({100 * rels[k]:.2f}%)"
                                for k, v in vals.items()))


def companion_residual_pairing_at(dt: float, n: int = 64, shrink: float = 0.25) -> tuple[float, float]:
    t0 = 0.5
    R = LADDER[0] * shrink
    half = int(math.ceil(R * R / dt)) + 2
    g = Grid.cube(n).with_time(2 * half + 1, dt=dt, t_start=t0 - half * dt)
    m = manufactured_solution("product-modes", g)
    cut = build_cutoff(g, (t0, X0), Radii(*LADDER))
    bank = TestBank.lattice(g, cut.cylinder("rho0").shrink(shrink))
    lo, hi = bank.slice_range
    Rv, Rh = [], []
    for _, a, c in companion_residual_stream(m.u, m.b, m.f, m.g, cut, window=(lo - 1, hi + 2)):
        Rv.append(bank.crop(a))
        Rh.append(bank.crop(c))
    Rv, Rh = np.stack(Rv), np.stack(Rh)
    pv = max(np.abs(bank.pair(Rv[:, c], lo)).max() for c in range(3))
    ph = max(np.abs(bank.pair(Rh[:, c], lo)).max() for c in range(3))
    return pv, ph


class TestCompanionResidual:
    def test_second_order_in_time(self):
        coarse = companion_residual_pairing_at(0.02)
        gc.collect()
        fine = companion_residual_pairing_at(0.01)
        ratios = [c / f for c, f in zip(coarse, fine)]
        ok = min(ratios) >= 4.0
        record(4, ok, f"paired companion residuals dt 0.02 -> 0.01: v {coarse[0]:.2e} -> {fine[0]:.2e} "
               f"(x{ratios[0]:.2f}), h {coarse[1]:.2e} -> {fine[1]:.2e} (x{ratios[1]:.2f})")


class TestCommutatorLimits:
    def test_commutator_limits(self):
        g = Grid.cube(64)
        rng = np.random.default_rng(1)

        def smooth():
            return band_limited(g, rng, 3.0)

        snap = lambda a: FieldSnapshot(g, a[None])  # noqa: E731
        X, Y, Z = smooth(), smooth(), smooth()
        d = periodic_distance(g, (math.pi,) * 3)
        chi = bump("c2")(d / 1.5)
        eps = [0.8 * 2 ** (-i / 2) for i in range(4)]
        a1 = []
        for e in eps:
            o = nrst(snap(X), snap(Y), snap(Z), e)
            comb = (o["N"].data + o["R"].data - o["S"].data - o["T"].data)[0, 0]
            a1.append(abs(float(np.sum(comb * chi)) * g.cell_volume))
        # Lipschitz, divergence-free first argument
        Xl = np.zeros((3,) + g.shape3)
        Xl[2] = np.abs(np.sin(g.mesh()[0]))
        ball = d < 1.5
        a2 = []
        for e in eps:
            o = nrst(snap(Xl), snap(Y), snap(Z), e)
            comb = (o["S"].data + o["T"].data - o["R"].data)[0, 0]
            a2.append(float(np.sum(np.abs(comb)[ball])) * g.cell_volume)
        o1, o2 = fitted_order(eps, a1), fitted_order(eps, a2)
        mono = lambda v: all(x > y for x, y in zip(v, v[1:]))  # noqa: E731
        ok = mono(a1) and o1 >= 1 and mono(a2) and o2 >= 1
        record(6, ok, f"|<N+R-S-T, chi>| order {o1:.2f} ({', '.join(f'{v:.2e}' for v in a1)}); "
               f"L1(S+T-R) with Lipschitz X order {o2:.2f} ({', '.join(f'{v:.2e}' for v in a2)})")


class TestDissipationZero:
    def test_exact_solution_is_dissipation_free(self):
        gc.collect()
        t = time.perf_counter()
        g = Grid.cube(64).with_time(64, dt=0.0035)
        m = manufactured_solution("taylor-green", g)
        cut = build_cutoff(g, (g.times[32], X0), Radii(*LADDER))
        bank = TestBank.lattice(g, cut.cylinder("rho0").shrink(0.25))
        res = dissipation_pipeline(m.u, m.b, m.P, m.f, m.g, cut, MollifierLadder.geometric(g), bank)
        elapsed = time.perf_counter() - t
        worst = float(max(np.abs(res.route_i).max(), np.abs(res.route_ii).max()))
        ok = (worst <= res.tol_sign and res.dissipative and bool(res.agreement) and elapsed < 300)
        record(7, ok, f"{bank.n_functions} test functions: max |<lambda, chi>| {worst:.2e} <= tol_sign "
               f"{res.tol_sign:.2e}, dissipative {res.dissipative}, routes agree {res.agreement}, "
               f"{elapsed:.0f} s at 64^3 x 64")
        del m, res
        gc.collect()


def pressure_limits(name: str, n: int) -> tuple[float, bool]:
    g = Grid.cube(n).with_time(64, dt=0.0035)
    m = manufactured_solution(name, g)
    bank = TestBank.lattice(g, ParabolicCylinder(g.times[32], X0, 0.225))
    res = {}
    for prof in ("exp", "poly"):
        lad = MollifierLadder.geometric(g, theta_profile=prof, phi_profile=prof)
        res[prof] = pressure_defect_limit(m.u, m.b, m.P, lad, bank)
    a, b = res["exp"], res["poly"]
    ratio = float(np.max(np.abs(a.value - b.value) / (a.error + b.error)))
    return ratio, ratio <= 1.0


class TestMollifierIndependence:
    def test_profiles_agree(self):
        runs = {("taylor-green", 32): pressure_limits("taylor-green", 32)}
        gc.collect()
        runs[("product-modes", 48)] = pressure_limits("product-modes", 48)
        ok = all(v[1] for v in runs.values())
        record(8, ok, "exp vs poly ladders, max |difference| / summed error bars: "
               + ", ".join(f"{k[0]} {k[1]}^3 {v[0]:.2f}" for k, v in runs.items()))


class TestCriterionScaling:
    def test_smooth_and_concentrated(self):
        g0 = Grid.cube(32)
        h = g0.spacing[0]
        p = CriterionParams.for_grid(g0, rungs=3)
        dt = 0.01
        nt = int(2 * p.radii[0] ** 2 / dt) + 5
        g = g0.with_time(nt, dt=dt, t_start=0.3)
        tc = g.times[nt // 2]
        m = manufactured_solution("taylor-green", g)
        smooth = gradient_density_scan(m.u, m.b, [(tc, X0)], p)[0]

        radii = tuple(6 * h * 2 ** (-i / 2) for i in range(3))
        pc = CriterionParams(radii=radii)
        dt = 0.02
        nt = int(2 * radii[0] ** 2 / dt) + 5
        gc_ = g0.with_time(nt, dt=dt)
        tc = gc_.times[nt // 2]
        u, c = concentration_field(gc_, tc, (3.0, 3.0, 3.0), amplitude=0.1, core=0.5 * h, support=math.pi / 2)
        conc = gradient_density_scan(u, FieldSnapshot.zeros(gc_), [(tc, (3.0, 3.0, 3.0))], pc)[0]
        oracle = [c.oracle_G(r) for r in radii]
        oracle_verdict = classify(max(oracle), loglog_slope(radii, oracle), pc)
        dev = max(abs(a - b) / b for a, b in zip(conc.G, oracle))
        ok = (smooth.slope >= 3.5 and conc.verdict == "irregular-candidate"
              and oracle_verdict == conc.verdict and dev <= 0.15)
        record(9, ok, f"smooth G slope {smooth.slope:.2f}; concentration G "
               f"{', '.join(f'{v:.3f}' for v in conc.G)} vs oracle {', '.join(f'{v:.3f}' for v in oracle)} "
               f"(max dev {100 * dev:.1f}%), verdict {conc.verdict}, oracle verdict {oracle_verdict}")


class TestMorreyConsistency:
    def test_equal_exponents_and_homogeneity(self):
        g = Grid.cube(32).with_time(41, dt=0.02)
        h = g.spacing[0]
        rng = np.random.default_rng(3)
        Q = ParabolicCylinder(g.times[20], (16 * h,) * 3, 0.6)
        worst_cover = worst_arg = worst_hom = 0.0
        for p in (2.0, 3.0, 2.5, 4.0, 3.0):
            X = FieldSnapshot(g, rng.standard_normal((g.nt, 3) + g.shape3) * 0.5 + 1.0)
            # a cylinder larger than Q covers all of 1_Q X
            cover = morrey_norm(X, MorreyParams(p, p, (1.4, 1.0), 2), mask=Q).value
            direct = lebesgue_cylinder_norm(X, Q, (p, p), clip_time=True)
            worst_cover = max(worst_cover, abs(cover - direct) / direct)
            scan = morrey_norm(X, MorreyParams.geometric(p, p, 0.5, 0.4, 3, stride=2))
            on_arg = lebesgue_cylinder_norm(X, scan.argmax, (p, p), clip_time=True)
            worst_arg = max(worst_arg, abs(scan.value - on_arg) / on_arg)
            scaled = morrey_norm(FieldSnapshot(g, -2.5 * X.data), MorreyParams.geometric(p, p, 0.5, 0.4, 3, stride=2))
            worst_hom = max(worst_hom, abs(scaled.value - 2.5 * scan.value) / scan.value)
        ok = worst_cover <= 0.01 and worst_arg <= 0.01 and worst_hom <= 1e-12
        record(10, ok, f"M^(p,p) vs direct L^p: covering cylinder {worst_cover:.1e}, scan argmax {worst_arg:.1e}; "
               f"homogeneity {worst_hom:.1e}")


class TestDeterminism:
    def test_pipeline_reports_identical(self, tmp_path):
        gc.collect()
        outs = []
        for threads in (1, 4):
            out = tmp_path / f"threads{threads}"
            code = cli_main(["pipeline", "--config", "demo.json", "--threads", str(threads), "--out", str(out)])
            assert code == 0
            outs.append(out)
        same = all(filecmp.cmp(outs[0] / f, outs[1] / f, shallow=False)
                   for f in ("pipeline.json", "defect_table.csv", "criterion.csv"))
        record(11, same, "pipeline with --threads 1 and --threads 4: pipeline.json, defect_table.csv, "
               f"criterion.csv byte-identical {same}")


if __name__ == "__main__":
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    print("\n".join(ACCEPTANCE_LINES))
    sys.exit(code)
