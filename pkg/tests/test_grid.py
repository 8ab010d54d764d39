import math

import numpy as np
import pytest

from conftest import band_limited
from mhdlab.errors import ContractError, DomainError, GridMismatchError, ParameterError
from mhdlab.fsnap import SnapshotFormatError, read_fsnap, read_header, write_fsnap
from mhdlab.grid import (FieldSnapshot, Grid, ParabolicCylinder, check_cylinder_inside, curl, divergence,
                         gradient, interior_slices, inverse_laplacian, laplacian, leray_project,
                         periodic_distance, require_same_grid, restrict_cylinder, workspace)


class TestGrid:
    def test_rejects_odd_or_small_counts(self):
        with pytest.raises(ParameterError):
            Grid(6, 7, 8)
        with pytest.raises(ParameterError):
            Grid(2, 4, 4)

    def test_spacing_and_times(self):
        g = Grid(8, 16, 4, (1.0, 2.0, 4.0), nt=5, dt=0.1, t_start=1.0)
        assert g.spacing == (0.125, 0.125, 1.0)
        np.testing.assert_allclose(g.times, [1.0, 1.1, 1.2, 1.3, 1.4])
        assert Grid.from_dict(g.to_dict()) == g

    def test_interior_slices(self):
        assert list(interior_slices(5)) == [1, 2, 3]
        assert list(interior_slices(1)) == [0]

    def test_periodic_distance_wraps(self):
        g = Grid.cube(8, 8.0)
        d = periodic_distance(g, (0.0, 0.0, 0.0))
        assert d[0, 0, 7] == pytest.approx(1.0)


class TestFieldSnapshot:
    def test_shape_and_finiteness(self, grid16):
        with pytest.raises(ContractError):
            FieldSnapshot(grid16, np.zeros((1, 2) + grid16.shape3))
        bad = np.zeros((1, 1) + grid16.shape3)
        bad[0, 0, 0, 0, 0] = np.nan
        with pytest.raises(ContractError):
            FieldSnapshot(grid16, bad)

    def test_read_only(self, grid16):
        X = FieldSnapshot.zeros(grid16)
        with pytest.raises(ValueError):
            X.data[0, 0, 0, 0, 0] = 1.0

    def test_grid_mismatch(self):
        with pytest.raises(GridMismatchError):
            require_same_grid(FieldSnapshot.zeros(Grid.cube(8)), FieldSnapshot.zeros(Grid.cube(16)))

    def test_time_window(self):
        g = Grid.cube(8).with_time(6, dt=0.5)
        X = FieldSnapshot(g, np.arange(6.0)[:, None, None, None, None] * np.ones((6, 1, 8, 8, 8)))
        W = X.time_window(2, 5)
        assert W.grid.t_start == pytest.approx(1.0)
        assert W.data[0, 0, 0, 0, 0] == 2.0


class TestSpectralOperators:
    def test_vector_identities(self, rng):
        g = Grid.cube(16)
        ws = workspace(g)
        X = band_limited(g, rng, 5.0, solenoidal=False)
        f = X[0]
        assert np.abs(ws.div(ws.curl(X))).max() < 1e-10
        assert np.abs(ws.curl(ws.grad(f))).max() < 1e-10
        cc = ws.curl(ws.curl(X))
        gd = ws.grad(ws.div(X)) - ws.lap(X)
        assert np.abs(cc - gd).max() < 1e-9

    def test_derivative_of_sine(self):
        g = Grid.cube(16)
        X, Y, Z = g.mesh()
        ws = workspace(g)
        np.testing.assert_allclose(ws.deriv(np.sin(2 * X), 0), 2 * np.cos(2 * X), atol=1e-12)

    def test_inverse_laplacian_and_leray(self, rng):
        g = Grid.cube(16, nt=1)
        data = band_limited(g, rng, 5.0, solenoidal=False)[None]
        X = FieldSnapshot(g, data)
        P = leray_project(X)
        assert np.abs(divergence(P).data).max() < 1e-10
        f = FieldSnapshot(g, data[:, :1] - data[:, :1].mean())
        np.testing.assert_allclose(laplacian(inverse_laplacian(f)).data, f.data, atol=1e-10)
        assert np.abs(curl(gradient(f)).data).max() < 1e-10


class TestCylinders:
    def test_inside_and_mask(self):
        g = Grid.cube(16).with_time(11, dt=0.1)
        Q = ParabolicCylinder(0.5, (3.0, 3.0, 3.0), 0.5)
        check_cylinder_inside(g, Q)
        m = restrict_cylinder(g, Q)
        # |t - 0.5| < 0.25 on interior slices -> t in {0.3, ..., 0.7}
        assert list(m.time_index) == [3, 4, 5, 6, 7]
        assert m.measure == pytest.approx(m.n_cells * 0.1 * g.cell_volume)

    def test_outside_raises(self):
        g = Grid.cube(16).with_time(5, dt=0.1)
        with pytest.raises(DomainError, match="lower time face"):
            check_cylinder_inside(g, ParabolicCylinder(0.2, (3.0, 3.0, 3.0), 0.5))
        with pytest.raises(DomainError, match="periodic box"):
            check_cylinder_inside(g, ParabolicCylinder(0.2, (3.0, 3.0, 3.0), 3.2), check_time=False)


class TestFsnap:
    def test_roundtrip(self, tmp_path, rng):
        g = Grid(8, 4, 6, (1.0, 2.0, 3.0), nt=3, dt=0.25, t_start=-1.0)
        X = FieldSnapshot(g, rng.standard_normal((3, 3, 6, 4, 8)), "u")
        p = write_fsnap(tmp_path / "u.fsnap", X)
        Y = read_fsnap(p)
        assert Y.grid == g and Y.name == "u"
        np.testing.assert_array_equal(Y.data, X.data)
        head, off = read_header(p)
        assert head["magic"] == "FSNAP1" and head["components"] == 3

    def test_payload_length_checked(self, tmp_path):
        g = Grid.cube(4)
        p = write_fsnap(tmp_path / "x.fsnap", FieldSnapshot.zeros(g, 1, "P"))
        with open(p, "ab") as fh:
            fh.write(b"\0" * 8)
        with pytest.raises(SnapshotFormatError, match="payload"):
            read_fsnap(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.fsnap"
        p.write_bytes(b'{"magic": "NOPE"}\n')
        with pytest.raises(SnapshotFormatError):
            read_fsnap(p)
