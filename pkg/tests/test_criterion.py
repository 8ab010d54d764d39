import math

import numpy as np
import pytest

from conftest import band_limited
from mhdlab.criterion import (CriterionParams, classify, concentration_field, gradient_density,
                              gradient_density_scan, loglog_slope, serrin_hypothesis_check, singular_set_boxcount)
from mhdlab.errors import ParameterError
from mhdlab.grid import FieldSnapshot, Grid, ParabolicCylinder


def _concentration_setup(n=32, nt=None, dt=0.02):
    g0 = Grid.cube(n)
    h = g0.spacing[0]
    radii = tuple(6 * h * 2 ** (-i / 2) for i in range(3))
    nt = nt or int(2 * radii[0] ** 2 / dt) + 5
    g = g0.with_time(nt, dt=dt)
    return g, h, CriterionParams(radii=radii), g.times[nt // 2]


class TestHelpers:
    def test_slope_of_power_law(self):
        r = np.array([1.0, 0.5, 0.25])
        assert loglog_slope(r, 3 * r ** 1.5) == pytest.approx(1.5)
        assert math.isnan(loglog_slope(r, [1.0, 0.0, 1.0]))

    def test_classify(self):
        p = CriterionParams(0.1, (1.0, 0.7, 0.5))
        assert classify(0.05, 0.0, p) == "regular-candidate"
        assert classify(0.05, -1.0, p) == "inconclusive"
        assert classify(0.5, 0.0, p) == "irregular-candidate"
        assert classify(0.5, 1.0, p) == "inconclusive"
        assert classify(0.5, float("nan"), p) == "irregular-candidate"

    def test_verdict_monotone_in_threshold(self):
        seen = [classify(0.2, 0.1, CriterionParams(e, (1.0, 0.5), window=2)) for e in (0.01, 0.1, 1.0, 10.0)]
        assert seen == ["irregular-candidate"] * 2 + ["regular-candidate"] * 2

    def test_parameter_validation(self):
        with pytest.raises(ParameterError):
            CriterionParams(0.0, (1.0,))
        with pytest.raises(ParameterError):
            CriterionParams(0.1, (0.5, 1.0))
        with pytest.raises(ParameterError):
            CriterionParams(0.1, (1.0, 0.5), window=3)
        g = Grid.cube(16)
        with pytest.raises(ParameterError):
            CriterionParams(0.1, (1.0, 0.5), window=2).validate(g)
        assert CriterionParams.for_grid(g).radii[-1] == pytest.approx(2 * g.spacing[0])

    def test_physical_density(self, rng):
        g = Grid.cube(8, nt=2)
        U, B = (FieldSnapshot(g, band_limited(g, rng, 2.0, nt=2)) for _ in range(2))
        u, b = FieldSnapshot(g, U.data + B.data), FieldSnapshot(g, U.data - B.data)
        np.testing.assert_allclose(gradient_density(U, B, physical=True), gradient_density(u, b), atol=1e-12)
        np.testing.assert_allclose(gradient_density(u, b), 2 * gradient_density(U, B), atol=1e-12)


class TestScan:
    def test_zero_field_is_regular(self):
        g, h, p, tc = _concentration_setup(16, dt=0.05)
        z = FieldSnapshot.zeros(g)
        v = gradient_density_scan(z, z, [(tc, (3.0, 3.0, 3.0))], p)[0]
        assert v.G == (0.0, 0.0, 0.0) and v.verdict == "regular-candidate"
        assert singular_set_boxcount(z, z, p).empty

    def test_concentration_matches_oracle(self):
        g, h, p, tc = _concentration_setup()
        x0 = (3.0, 3.0, 3.0)
        u, c = concentration_field(g, tc, x0, amplitude=0.1, core=0.5 * h, support=math.pi / 2)
        z = FieldSnapshot.zeros(g)
        v = gradient_density_scan(u, z, [(tc, x0)], p)[0]
        oracle = [c.oracle_G(r) for r in p.radii]
        assert v.G == pytest.approx(oracle, rel=0.15)
        assert abs(v.slope - loglog_slope(p.radii, oracle)) < 0.1
        assert v.verdict == "irregular-candidate"

    def test_boxcount_separates_two_concentrations(self):
        g, h, p, tc = _concentration_setup()
        z = FieldSnapshot.zeros(g)
        fields = [concentration_field(g, tc, x, 0.1, 0.5 * h, math.pi / 2)[0]
                  for x in ((1.5, 1.5, 1.5), (4.7, 4.7, 4.7))]
        one = singular_set_boxcount(fields[0], z, p)
        two = singular_set_boxcount(FieldSnapshot(g, fields[0].data + fields[1].data), z, p)
        assert not one.empty and one.counts[0] == 1
        assert two.counts[0] == 2
        assert two.to_dict()["empty"] is False


class TestSerrin:
    def test_exponents_validated(self):
        g = Grid.cube(16, nt=9, dt=0.25)
        z = FieldSnapshot.zeros(g)
        with pytest.raises(ParameterError, match="5 < q"):
            serrin_hypothesis_check(z, z, ParabolicCylinder(1.0, (3.0,) * 3, 1.2), ((3.0, 4.0), (3.0, 4.0)))

    def test_zero_field(self):
        g = Grid.cube(16, nt=9, dt=0.25)
        z = FieldSnapshot.zeros(g)
        out = serrin_hypothesis_check(z, z, ParabolicCylinder(1.0, (3.0,) * 3, 1.6), stride=2)
        assert out["hypothesis_satisfied"] and out["morrey_U"]["norm"] == 0.0
        assert out["conclusion"]["U_Lq0"] == 0.0
