import numpy as np
import pytest

from conftest import band_limited
from mhdlab.errors import DomainError, ParameterError
from mhdlab.grid import FieldSnapshot, Grid, workspace
from mhdlab.localization import (Radii, _derivatives_for, build_companion, build_cutoff, companion_residual,
                                 companion_residual_stream, companion_slice, companion_slice_reference,
                                 harmonic_correction, localization_report)
from mhdlab.sim import manufactured_solution

LADDER = (0.9, 1.0, 1.1, 1.2, 2.7)
X0 = (2.0, 2.5, 3.0)


@pytest.fixture(scope="module")
def product_modes():
    g = Grid.cube(24, nt=5, dt=0.01, t_start=0.48)
    m = manufactured_solution("product-modes", g)
    return g, m.u, m.b, m.f, m.g


class TestRadii:
    def test_ordering_enforced(self):
        with pytest.raises(ParameterError, match="rho0 < rho3"):
            Radii(1.0, 0.9, 1.1, 1.2, 2.9)
        with pytest.raises(ParameterError):
            Radii(0.0, 0.9, 1.1, 1.2, 2.9)

    def test_from_ratios(self):
        r = Radii.from_ratios(2.0, (0.25, 0.5, 0.6, 0.75))
        assert (r.rho0, r.rho) == (0.5, 2.0)


class TestCutoff:
    @pytest.mark.parametrize("profile", ["erf", "quintic", "smooth-exp"])
    def test_invariants(self, profile):
        g = Grid.cube(32, nt=41, dt=0.1, t_start=-2.0)
        L = build_cutoff(g, (0.0, X0), LADDER, profile)
        inv = L.check_invariants()
        assert inv["psi"]["ok"] and inv["phi"]["ok"]

    def test_ball_must_fit(self):
        g = Grid.cube(16, nt=3)
        with pytest.raises(DomainError):
            build_cutoff(g, (0.0, (0.5, 3.0, 3.0)), LADDER)

    def test_needs_time_slice_inside(self):
        g = Grid.cube(16, nt=3, dt=1.0, t_start=5.0)
        with pytest.raises(DomainError):
            build_cutoff(g, (0.0, X0), LADDER)


class TestCorrections:
    def test_laplacian_identity_outside_support(self, rng):
        # Delta v = Delta u where psi == 1
        g = Grid.cube(32)
        u = FieldSnapshot(g, band_limited(g, rng, 3.0, nt=1))
        L = build_cutoff(g, (0.0, (np.pi,) * 3), (0.4, 0.6, 0.7, 0.8, 2.9))
        v = harmonic_correction(u, L)
        ws = workspace(g)
        gap = ws.lap(v.data[0]) - ws.lap(u.data[0])
        inside = L.distance < 0.4
        # cut-off transition is resolved to about 0.2% at 32 points
        assert np.abs(gap[:, inside]).max() < 1e-2 * np.abs(ws.lap(u.data[0])).max()
        assert np.abs(ws.div(v.data[0])).max() < 1e-10

    @staticmethod
    def _slice_pair(n):
        g = Grid.cube(n, nt=1, t_start=0.5)
        m = manufactured_solution("product-modes", g)
        u, b, f, gg = (X.data[0] for X in (m.u, m.b, m.f, m.g))
        L = build_cutoff(g, (0.5, X0), LADDER)
        ws = workspace(g)
        D = _derivatives_for(ws, L, L.psi_slice)(0)
        fast = companion_slice(ws, D, u, b, f, gg)
        return fast, companion_slice_reference(ws, D, u, b, fast["v"], fast["h"], f, gg)

    def test_fast_slice_matches_reference(self):
        fast, ref = self._slice_pair(24)
        for key in ref.keys() - {"k1", "l1"}:
            assert np.abs(fast[key] - ref[key]).max() < 1e-12 * max(np.abs(ref[key]).max(), 1.0), key

    def test_first_force_identity_converges(self):
        # the product rule used by the fast path holds up to aliasing of psi derivatives
        gaps = []
        for n in (24, 48):
            fast, ref = self._slice_pair(n)
            gaps.append(max(np.abs(fast[k] - ref[k]).max() / np.abs(ref[k]).max() for k in ("k1", "l1")))
        assert gaps[1] < 0.1 * gaps[0]


class TestCompanion:
    def test_stream_matches_stored(self, product_modes):
        g, u, b, f, gg = product_modes
        L = build_cutoff(g, (0.5, X0), LADDER)
        system = build_companion(u, b, f, gg, L)
        idx, Rv, Rh = companion_residual(system)
        streamed = list(companion_residual_stream(u, b, f, gg, L))
        assert [n for n, _, _ in streamed] == list(idx)
        for m, (_, sv, sh) in enumerate(streamed):
            np.testing.assert_allclose(sv, Rv[m], atol=1e-12)
            np.testing.assert_allclose(sh, Rh[m], atol=1e-12)

    def test_report_structure(self, product_modes):
        g, u, b, f, gg = product_modes
        L = build_cutoff(g, (0.5, X0), LADDER)
        rep = localization_report(u, b, f, gg, build_companion(u, b, f, gg, L))
        assert rep["corrector_sum_max"]["u"] < 1e-12
        assert max(rep["divergence_max"].values()) < 1e-9
        assert "companion_residual_max" in rep

    def test_window_too_short(self, product_modes):
        g, u, b, f, gg = product_modes
        L = build_cutoff(g, (0.5, X0), LADDER)
        with pytest.raises(ParameterError):
            next(companion_residual_stream(u, b, f, gg, L, window=(0, 2)))
