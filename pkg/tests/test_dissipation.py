import numpy as np
import pytest

from conftest import band_limited
from mhdlab.dissipation import (MollifierLadder, TestBank, dissipation_pipeline, energy_balance_defect, mollify,
                                nrst, nrst_quadrature, richardson, space_symbol, time_moment, time_weights)
from mhdlab.elsasser import solve_pressure
from mhdlab.errors import DomainError, ParameterError, ToleranceError
from mhdlab.grid import FieldSnapshot, Grid, ParabolicCylinder, workspace
from mhdlab.localization import build_cutoff
from mhdlab.sim import manufactured_solution

X0 = (2.0, 2.5, 3.0)


class TestKernels:
    @pytest.mark.parametrize("profile", ["exp", "poly", "c2"])
    def test_time_weights(self, profile):
        w = time_weights(profile, 0.1, 0.01)
        assert w.sum() == pytest.approx(1.0) and np.allclose(w, w[::-1]) and w.size == 19
        assert time_moment(profile, 0.1, 0.01) < 0.1 ** 2

    def test_time_width_resolvable(self):
        with pytest.raises(ParameterError):
            time_weights("exp", 0.015, 0.01)

    @pytest.mark.parametrize("kind", ["sampled", "continuous"])
    def test_symbol_has_unit_mass(self, kind):
        sym, m2 = space_symbol(Grid.cube(16), "exp", 1.0, kind)
        assert sym[0, 0, 0] == pytest.approx(1.0) and np.abs(sym).max() <= 1 + 1e-12 and m2 > 0

    def test_kernels_agree_when_resolved(self):
        g = Grid.cube(32)
        a, ma = space_symbol(g, "poly", 1.5, "sampled")
        b, mb = space_symbol(g, "poly", 1.5, "continuous")
        assert np.abs(a - b).max() < 1e-3 and ma == pytest.approx(mb, rel=1e-2)

    def test_mollify_constant_and_window(self):
        g = Grid.cube(16, nt=20, dt=0.01)
        X = FieldSnapshot(g, np.full((20, 3) + g.shape3, 2.0))
        Y = mollify(X, 0.05, 1.0)
        assert Y.grid.nt == 20 - 2 * 4 and np.allclose(Y.data, 2.0)
        with pytest.raises(DomainError):
            mollify(X, 0.5, None)

    def test_ladder_validation(self):
        with pytest.raises(ParameterError):
            MollifierLadder((0.1, 0.2), (1.0, 0.5))
        with pytest.raises(ParameterError):
            MollifierLadder((0.1,), (1.0,), space_kernel="box")
        g = Grid.cube(16, nt=10, dt=0.01)
        lad = MollifierLadder.geometric(g, rungs=3)
        assert lad.alphas == pytest.approx((0.08, 0.04, 0.02))
        lad.validate(g)
        with pytest.raises(ParameterError):
            MollifierLadder((0.01,), (1.0,)).validate(g)
        assert MollifierLadder.from_dict(lad.to_dict()) == lad


class TestRichardson:
    def test_exact_for_polynomials(self):
        xs = np.array([0.8, 0.4, 0.2, 0.1])
        vals = 3.0 - 2.0 * xs + 0.5 * xs ** 2 + 7.0 * xs ** 3
        out = richardson(vals, xs)
        assert out.value == pytest.approx(3.0, abs=1e-12)

    def test_error_bar_and_convergence(self):
        xs = np.array([0.8, 0.4, 0.2])
        out = richardson(np.exp(xs), xs)
        assert abs(out.value - 1.0) <= out.error and out.converged
        assert not richardson(np.array([1.0, 0.0, 0.0]), xs).converged

    def test_single_rung_has_infinite_error(self):
        assert np.isinf(richardson(np.array([1.0]), [0.1]).error)


class TestBankPairing:
    def test_lattice(self):
        g = Grid.cube(32, nt=41, dt=0.01)
        bank = TestBank.lattice(g, ParabolicCylinder(0.2, X0, 0.4))
        assert bank.n_functions == 21 and len(bank.names) == 21
        lo, hi = bank.slice_range
        assert lo >= 1 and hi <= 39
        ones = np.ones((hi - lo + 1,) + bank.crop_shape)
        mass = bank.pair(ones, lo)
        assert np.all(mass > 0)
        assert mass[0] > mass[1]

    def test_crop_inverse_matches_full_transform(self, rng):
        for n in (16, 18):
            g = Grid(n, n + 2, n - 2)
            bank = TestBank.lattice(g, ParabolicCylinder(0.0, X0, 1.0))
            ws = workspace(g)
            a = rng.standard_normal(g.shape3)
            np.testing.assert_allclose(bank.crop_inverse(ws.fwd(a)), bank.crop(a), atol=1e-12)

    def test_boundary_slice_rejected(self):
        g = Grid.cube(32, nt=10, dt=0.01)
        with pytest.raises(DomainError):
            TestBank.lattice(g, ParabolicCylinder(0.05, X0, 0.3))


class TestNRST:
    def test_closed_form_matches_quadrature(self, rng):
        g = Grid.cube(12, 4.0 * np.pi)
        X, Y, Z = (band_limited(g, rng, 2.0, nt=1, solenoidal=False) for _ in range(3))
        eps = 2.2 * max(g.spacing)
        fast = nrst(*(FieldSnapshot(g, A) for A in (X, Y, Z)), eps, dealias=False)
        slow = nrst_quadrature(X[0], Y[0], Z[0], g, eps)
        for key in ("R", "S", "T", "cancellation"):
            ref = slow[key]
            assert np.abs(fast[key].data[0, 0] - ref).max() < 1e-10 * max(np.abs(ref).max(), 1.0), key

    def test_cancellation_vanishes_for_solenoidal(self, rng):
        g = Grid.cube(16)
        X, Y, Z = (FieldSnapshot(g, band_limited(g, rng, 3.0, nt=1)) for _ in range(3))
        out = nrst(X, Y, Z, 0.9)
        assert np.abs(out["cancellation"].data).max() < 1e-12

    def test_width_checks(self, rng):
        g = Grid.cube(16)
        X = FieldSnapshot(g, band_limited(g, rng, 3.0, nt=1))
        with pytest.raises(ParameterError):
            nrst(X, X, X, 0.5)
        with pytest.raises(DomainError):
            nrst(X, X, X, 2.0)


@pytest.fixture(scope="module")
def taylor_green():
    g = Grid.cube(24).with_time(64, dt=0.0035)
    m = manufactured_solution("taylor-green", g)
    cut = build_cutoff(g, (g.times[32], X0), (0.9, 1.0, 1.1, 1.2, 2.7))
    return g, m, cut, TestBank.lattice(g, cut.cylinder("rho0").shrink(0.25))


class TestLambda:

    def test_routes_agree_and_dissipative(self, taylor_green):
        g, m, cut, bank = taylor_green
        res = dissipation_pipeline(m.u, m.b, m.P, m.f, m.g, cut, MollifierLadder.geometric(g), bank)
        assert res.agreement and res.dissipative
        d = res.to_dict()
        assert d["routes_agree"] and len(d["route_i"]) == 21

    def test_rejects_non_solution(self, taylor_green):
        # growing instead of decaying in time
        g, m, cut, bank = taylor_green
        grow = np.exp(8.0 * g.times)[:, None, None, None, None]
        u, b = FieldSnapshot(g, m.u.data * grow), FieldSnapshot(g, m.b.data * grow)
        P = solve_pressure(u, b)
        ladder = MollifierLadder.geometric(g)
        table = energy_balance_defect(m.u, m.b, m.P, None, None, ladder, bank, residual_tol=1e-4)
        assert table.residual.shape == (4, 4, 21)
        with pytest.raises(ToleranceError):
            energy_balance_defect(u, b, P, None, None, ladder, bank, residual_tol=1e-4)
