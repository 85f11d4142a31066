import importlib.util
import json
import os
import pathlib
import sys
import tempfile
import unittest
from argparse import Namespace
from unittest.mock import patch

import polars as pl

ROOT = pathlib.Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from bell_audit.config import CONFIG_ENV

SCRIPT_PATH = ROOT / "scripts" / "bell.py"

_SPEC = importlib.util.spec_from_file_location("bell_cli", SCRIPT_PATH)
bell = importlib.util.module_from_spec(_SPEC)
_SPEC.loader.exec_module(bell)


def make_args(command, **kwargs):
    values = {
        "command": command,
        "config": None,
        "input": None,
        "output": None,
        "seed": None,
        "stream": None,
        "mode": None,
        "s": None,
        "trials": None,
        "kind": None,
        "workers": None,
        "set": None,
        "threshold": False,
        "sweep": False,
        "verbose": False,
    }
    values.update(kwargs)
    return Namespace(**values)


class CliTestCase(unittest.TestCase):
    def setUp(self):
        env = patch.dict(os.environ)
        env.start()
        self.addCleanup(env.stop)
        os.environ.pop(CONFIG_ENV, None)
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.tmp = pathlib.Path(tmp.name)

    def run_ok(self, command, **kwargs):
        result, status = bell.run_command(make_args(command, **kwargs))
        self.assertEqual(status, bell.EXIT_OK, result)
        return result

    def simulate(self, name, trials=5000, settings=None, **kwargs):
        path = self.tmp / name
        self.run_ok("simulate", output=str(path), trials=trials, set=settings, **kwargs)
        return path


class SimulateAnalyzeTests(CliTestCase):
    LOCAL = ["adversary=deterministic-lhv", "strategy=1"]

    def test_local_trials_give_no_evidence(self):
        path = self.simulate("lhv.csv", settings=self.LOCAL)
        result = self.run_ok("analyze", input=str(path), kind="plain-J", s=0)
        self.assertEqual(result["N"], 5000)
        self.assertEqual(result["p_value"], 1.0)
        self.assertLessEqual(result["Z"], 0.0)

    def test_same_seed_same_file(self):
        first = self.simulate("a.csv", seed=7)
        second = self.simulate("b.csv", seed=7)
        third = self.simulate("c.csv", seed=8)
        self.assertEqual(first.read_bytes(), second.read_bytes())
        self.assertNotEqual(first.read_bytes(), third.read_bytes())

    def test_simulate_reports_counts(self):
        path = self.tmp / "q.csv"
        result = self.run_ok("simulate", output=str(path), trials=3000)
        self.assertEqual(result["trials"], 3000)
        self.assertEqual(result["generator"]["generator"], "QuantumGenerator")
        self.assertIn("J_stderr", result["empirical"])
        self.assertTrue(path.read_text().startswith("trial,a,b,A,B\n"))

    def test_communication_adversary_adds_adapted_bound(self):
        path = self.tmp / "comm.csv"
        result = self.run_ok(
            "simulate", output=str(path), trials=20_000, set=["adversary=comm-prbox", "epsA=0.1"]
        )
        self.assertEqual(result["adapted_bound"]["bound"], 0.1)
        self.assertFalse(result["adapted_bound"]["violates_adapted_bound"])

    def test_analyze_writes_report(self):
        path = self.simulate("q.csv", trials=4000)
        out = self.tmp / "report.json"
        result = self.run_ok("analyze", input=str(path), output=str(out), kind="shifted-K", set=["epsA=0.01"])
        written = json.loads(out.read_text())
        self.assertEqual(written["M"], result["M"])
        self.assertEqual(written["spec"]["kind"], "shifted-K")
        self.assertEqual(written["s"], 100)
        self.assertTrue(written["setting_frequencies"]["consistent"])

    def test_adapted_analysis(self):
        settings = ["adversary=predictability-skew", "epsA=0.05", "epsB=0.05"]
        path = self.simulate("skew.csv", trials=50_000, settings=settings, mode="excess-predictability")
        result = self.run_ok(
            "analyze",
            input=str(path),
            kind="adapted-Jeps",
            mode="excess-predictability",
            set=["epsA=0.05", "epsB=0.05", "p_epsilon=1e-7"],
        )
        self.assertIn("J_eps", result)
        self.assertLess(result["J_eps"], 0.0)
        self.assertFalse(result["bonferroni"]["reject"])

    def test_simulate_requires_output(self):
        result, status = bell.run_command(make_args("simulate", trials=10))
        self.assertEqual(status, bell.EXIT_VALIDATION)
        self.assertIn("--out", result["error"])

    def test_missing_input_file(self):
        result, status = bell.run_command(make_args("analyze", input=str(self.tmp / "absent.csv")))
        self.assertEqual(status, bell.EXIT_IO)
        self.assertIn("error", result)

    def test_out_of_order_file(self):
        path = self.tmp / "bad.csv"
        path.write_text("trial,a,b,A,B\n1,1,1,0,0\n3,1,2,1,0\n2,2,2,0,0\n")
        result, status = bell.run_command(make_args("analyze", input=str(path)))
        self.assertEqual(status, bell.EXIT_VALIDATION)
        self.assertEqual(result["kind"], "TrialOrderError")

    def test_non_numeric_field(self):
        path = self.tmp / "garbled.csv"
        path.write_text("trial,a,b,A,B\n1,1,1,0,0\n2,1,x,0,0\n")
        result, status = bell.run_command(make_args("analyze", input=str(path)))
        self.assertEqual(status, bell.EXIT_VALIDATION)
        self.assertEqual(result["kind"], "ValidationError")
        self.assertIn("Malformed trial CSV", result["error"])


class PlanTests(CliTestCase):
    def test_runtime_reduction(self):
        result = self.run_ok("plan", set=["epsAB=1e-7"])
        self.assertTrue(15 <= result["t_plain_years"] <= 17)
        self.assertTrue(3 <= result["t_doob_hours"] <= 4)
        self.assertEqual(result["s"], 10_000_000)

    def test_infeasible(self):
        result, status = bell.run_command(make_args("plan", set=["epsAB=1e-7", "J=1e-8"]))
        self.assertEqual(status, bell.EXIT_INFEASIBLE)
        self.assertEqual(result["kind"], "InfeasibleExperimentError")


class OtherCommandTests(CliTestCase):
    def test_selftest(self):
        result = self.run_ok("selftest")
        self.assertTrue(result["passed"])
        self.assertEqual(len(result["checks"]), 6)

    def test_spacetime(self):
        self.assertTrue(self.run_ok("spacetime")["feasible"])
        result = self.run_ok("spacetime", set=["tauS=1e-3"])
        self.assertFalse(result["feasible"])
        self.assertEqual(result["violated"][0]["constraint"], "tauS < tau1")

    def test_optimize(self):
        result = self.run_ok("optimize", set=["starts=4"])
        self.assertAlmostEqual(result["best_j"], 0.20710678, places=6)

    def test_optimize_sweep_csv(self):
        out = self.tmp / "sweep.csv"
        result = self.run_ok(
            "optimize",
            sweep=True,
            output=str(out),
            set=["starts=4", "sweep_start=0.9", "sweep_stop=1.0", "sweep_step=0.1"],
        )
        self.assertEqual(len(result["rows"]), 2)
        frame = pl.read_csv(out)
        self.assertEqual(frame.columns, ["eta", "best_j", "r_star", "alpha1", "alpha2", "beta1", "beta2"])
        self.assertEqual(frame.height, 2)


class ConfigTests(CliTestCase):
    def test_config_file_from_environment(self):
        config = self.tmp / "run.cfg"
        config.write_text("# local run\ntrials = 2000\nadversary = deterministic-lhv  # witness\nstrategy = 15\n")
        os.environ[CONFIG_ENV] = str(config)
        result = self.run_ok("simulate", output=str(self.tmp / "t.csv"))
        self.assertEqual(result["trials"], 2000)
        self.assertEqual(result["generator"]["strategy"], 15)
        self.assertEqual(result["config"]["config_path"], str(config))

    def test_flags_override_file(self):
        config = self.tmp / "run.cfg"
        config.write_text("trials = 2000\n")
        result = self.run_ok(
            "simulate", config=str(config), output=str(self.tmp / "t.csv"), trials=500, set=["trials=700"]
        )
        self.assertEqual(result["trials"], 500)

    def test_unknown_key_in_file(self):
        config = self.tmp / "run.cfg"
        config.write_text("trails = 10\n")
        result, status = bell.run_command(make_args("plan", config=str(config)))
        self.assertEqual(status, bell.EXIT_VALIDATION)
        self.assertIn("trails", result["error"])

    def test_unknown_assignment(self):
        result, status = bell.run_command(make_args("plan", set=["speed=3"]))
        self.assertEqual(status, bell.EXIT_VALIDATION)

    def test_bad_value(self):
        result, status = bell.run_command(make_args("plan", set=["rate=fast"]))
        self.assertEqual(status, bell.EXIT_VALIDATION)
        self.assertIn("rate", result["error"])

    def test_parser_destinations(self):
        args = bell.build_parser().parse_args(
            ["analyze", "--in", "x.csv", "--out", "r.json", "--s", "3", "--set", "kind=plain-J"]
        )
        self.assertEqual((args.input, args.output, args.s, args.set), ("x.csv", "r.json", 3, ["kind=plain-J"]))


if __name__ == "__main__":
    unittest.main()
