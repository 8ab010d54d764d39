import numpy as np
import pytest

from conftest import band_limited
from mhdlab.elsasser import (ElsasserState, check_solenoidal, from_elsasser, pressure_residual, solve_pressure,
                             to_elsasser)
from mhdlab.errors import PreconditionError
from mhdlab.grid import FieldSnapshot, Grid, workspace


def _fields(rng, g, solenoidal=True):
    return [FieldSnapshot(g, band_limited(g, rng, 4.0, nt=g.nt, solenoidal=solenoidal)) for _ in range(4)]


class TestChangeOfVariables:
    def test_roundtrip_exact(self, rng):
        g = Grid.cube(8, nt=2)
        U, B, F, G = _fields(rng, g)
        back = from_elsasser(*to_elsasser(U, B, F, G))
        for a, b in zip(back, (U, B, F, G)):
            np.testing.assert_allclose(a.data, b.data, atol=1e-15)

    def test_names_and_values(self, rng):
        g = Grid.cube(8)
        U, B, F, G = _fields(rng, g)
        u, b, f, gg = to_elsasser(U, B, F, G)
        assert (u.name, b.name) == ("u", "b")
        np.testing.assert_allclose(b.data, U.data - B.data)

    def test_state_requires_vectors(self, rng):
        g = Grid.cube(8)
        u, b, f, gg = _fields(rng, g)
        P = FieldSnapshot.zeros(g, 1)
        ElsasserState(u, b, P, f, gg)
        with pytest.raises(ValueError):
            ElsasserState(u, b, P, P, gg)


class TestPressure:
    def test_poisson_residual(self, rng):
        g = Grid.cube(16, nt=2)
        u, b, _, _ = _fields(rng, g)
        P = solve_pressure(u, b)
        assert pressure_residual(P, u, b) < 1e-10
        assert abs(P.data.mean()) < 1e-12

    def test_taylor_green_closed_form(self):
        # u = b = TG: P = (cos 2x + cos 2y) / 4 at unit amplitude (vertical component zero)
        g = Grid.cube(16)
        X, Y, Z = g.mesh()
        u = np.stack([np.sin(X) * np.cos(Y), -np.cos(X) * np.sin(Y), 0 * X])[None]
        U = FieldSnapshot(g, u)
        P = solve_pressure(U, U)
        np.testing.assert_allclose(P.data[0, 0], 0.25 * (np.cos(2 * X) + np.cos(2 * Y)), atol=1e-12)

    def test_rejects_divergent_input(self, rng):
        g = Grid.cube(16)
        X = FieldSnapshot(g, band_limited(g, rng, 4.0, nt=1, solenoidal=False))
        with pytest.raises(PreconditionError):
            check_solenoidal(X, "u")
        with pytest.raises(PreconditionError):
            solve_pressure(X, X)
