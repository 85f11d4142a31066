import pathlib
import sys
import unittest

import hypothesis.strategies as st
from hypothesis import given, settings

ROOT = pathlib.Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from bell_audit.errors import ValidationError
from bell_audit.spacetime import (
    SPEED_OF_LIGHT,
    SpacetimeConfig,
    feasibility_table,
    tau_limits,
    validate_geometry,
)

C0 = SPEED_OF_LIGHT


class TauLimitTests(unittest.TestCase):
    def test_thirty_kilometres(self):
        limits = tau_limits(SpacetimeConfig(d=30_000, n=1.5))
        self.assertAlmostEqual(limits["tau1"], 1.5 * 30_000 / C0, delta=1e-18)
        self.assertAlmostEqual(limits["tau2"], 2 * 30_000 / C0, delta=1e-18)
        self.assertAlmostEqual(limits["tau1"], 1.501e-4, delta=1e-7)
        self.assertAlmostEqual(limits["tau2"], 2.001e-4, delta=1e-7)

    def test_delays_use_up_margin(self):
        config = SpacetimeConfig(d=30_000, n=1.5, tauG=1.5 * 30_000 / C0)
        self.assertAlmostEqual(tau_limits(config)["tau1"], 0.0, delta=1e-18)

    def test_slow_fiber(self):
        limits = tau_limits(SpacetimeConfig(d=30_000, n=3 - 1e-12))
        self.assertAlmostEqual(limits["tau1"], 0.0, delta=1e-15)

    def test_negative_budget_kept(self):
        limits = tau_limits(SpacetimeConfig(d=1.0, tauG=1e-3))
        self.assertLess(limits["tau1"], 0.0)

    @given(st.floats(1.0, 1e6), st.floats(1.01, 2.99))
    @settings(max_examples=100, deadline=None)
    def test_linear_in_distance(self, d, n):
        one = tau_limits(SpacetimeConfig(d=d, n=n))
        two = tau_limits(SpacetimeConfig(d=2 * d, n=n))
        self.assertAlmostEqual(two["tau1"], 2 * one["tau1"], delta=1e-15)
        self.assertAlmostEqual(two["tau2"], 2 * one["tau2"], delta=1e-15)

    @given(st.floats(1.0, 1e6), st.floats(1.01, 2.99), st.floats(0, 1e-5), st.floats(0, 1e-5))
    @settings(max_examples=100, deadline=None)
    def test_budget_difference(self, d, n, tauG, tauM):
        limits = tau_limits(SpacetimeConfig(d=d, n=n, tauG=tauG, tauM=tauM))
        expected = (n - 1) * d / C0 + tauG
        self.assertAlmostEqual(limits["tau2"] - limits["tau1"], expected, delta=1e-15)

    def test_invalid_config(self):
        for kwargs in ({"d": 0.0}, {"d": 1.0, "n": 1.0}, {"d": 1.0, "n": 3.0}, {"d": 1.0, "tauS": -1e-9}):
            with self.assertRaises(ValidationError):
                SpacetimeConfig(**kwargs)


class GeometryTests(unittest.TestCase):
    def test_feasible(self):
        report = validate_geometry(SpacetimeConfig(d=30_000, tauS=1e-6, tauD=1e-6))
        self.assertTrue(report["feasible"])
        self.assertEqual(report["violated"], [])
        self.assertTrue(all(c["margin"] > 0 for c in report["constraints"]))

    def test_boundary_is_infeasible(self):
        tau1 = tau_limits(SpacetimeConfig(d=30_000))["tau1"]
        report = validate_geometry(SpacetimeConfig(d=30_000, tauS=tau1))
        self.assertFalse(report["feasible"])
        self.assertEqual(report["violated"], [{"constraint": "tauS < tau1", "margin": 0.0}])

    def test_deployment_too_slow(self):
        report = validate_geometry(SpacetimeConfig(d=30_000, tauS=1e-6, tauD=1e-3))
        self.assertFalse(report["feasible"])
        self.assertEqual([v["constraint"] for v in report["violated"]], ["tauS + tauD < tau2"])
        self.assertLess(report["violated"][0]["margin"], 0.0)

    def test_realistic_setup(self):
        config = SpacetimeConfig(d=30_000, n=1.5, tauM=10e-9, tauG=1e-6, tauS=10e-9, tauD=100e-9)
        report = validate_geometry(config)
        self.assertTrue(report["feasible"])
        margins = [c["margin"] for c in report["constraints"]]
        self.assertAlmostEqual(margins[0], 1.5 * 30_000 / C0 - 1.01e-6 - 10e-9, delta=1e-18)
        self.assertAlmostEqual(margins[1], 2 * 30_000 / C0 - 10e-9 - 110e-9, delta=1e-18)

    def test_table(self):
        rows = feasibility_table(SpacetimeConfig(d=30_000, tauS=1e-3))
        self.assertEqual(len(rows), 4)
        self.assertIn("VIOLATED", rows[1])
        self.assertEqual(rows[-1], "feasible: no")


if __name__ == "__main__":
    unittest.main()
