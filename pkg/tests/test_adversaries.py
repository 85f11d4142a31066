import math
import os
import pathlib
import sys
import tempfile
import unittest

import numpy as np
import hypothesis.strategies as st
from hypothesis import given, settings

ROOT = pathlib.Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from bell_audit.adversaries import (
    MEMORY_POLICY,
    AdversaryConfig,
    AdversaryKind,
    Placement,
    QuantumModel,
    comm_prbox_adversary,
    comm_pure_adversary,
    deterministic_cond_probs,
    lhv_max_j,
    lhv_three_outcome_max,
    predictability_adversary,
    quantum_cond_probs,
    quantum_trial_probs,
    simulate,
    strategy_outcomes,
)
from bell_audit.core import (
    CondProbs,
    JointProbs,
    PredictabilityMode,
    SettingsProfile,
    adapted_che_jeps,
    binomial_tolerance,
    che_j,
    che_j_stderr,
    estimate_cond_probs,
    no_signaling_check,
)
from bell_audit.errors import ValidationError
from bell_audit.rng import RngSeed
from bell_audit.trials import count_trials, iter_records, write_trials_csv

SLOW = os.environ.get("BELL_AUDIT_SLOW") == "1"
FAST_N = 200_000
SMALL_BLOCK = 50_000

H = np.array([1.0, 0.0])
V = np.array([0.0, 1.0])


def dense_quadruple(r, alpha, beta, etaA, etaB, visibility):
    """Independent density-matrix computation of (p++, p+0, p0+, p00), no dark counts."""
    psi = (np.kron(H, V) + r * np.kron(V, H)) / math.sqrt(1 + r * r)
    rho = visibility * np.outer(psi, psi) + (1 - visibility) * np.eye(4) / 4
    pa = np.outer([math.cos(alpha), math.sin(alpha)], [math.cos(alpha), math.sin(alpha)])
    pb = np.outer([math.cos(beta), math.sin(beta)], [math.cos(beta), math.sin(beta)])
    both = np.trace(rho @ np.kron(pa, pb))
    only_a = np.trace(rho @ np.kron(pa, np.eye(2)))
    only_b = np.trace(rho @ np.kron(np.eye(2), pb))
    pp = etaA * etaB * both
    p0 = etaA * (only_a - etaB * both)
    zp = etaB * (only_b - etaA * both)
    return (pp, p0, zp, 1 - pp - p0 - zp)


def empirical(blocks):
    counts = count_trials(blocks)
    return che_j(estimate_cond_probs(counts)), che_j_stderr(counts), counts


class QuantumModelTests(unittest.TestCase):
    def test_matches_dense_oracle(self):
        model = QuantumModel(r=0.5, alpha1=0.0, beta1=math.pi / 8, etaA=0.8, etaB=0.8)
        got = quantum_trial_probs(model, 1, 1)
        expected = dense_quadruple(0.5, 0.0, math.pi / 8, 0.8, 0.8, 1.0)
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_matches_dense_oracle_with_noise(self):
        model = QuantumModel(r=0.3, alpha2=1.1, beta2=0.4, etaA=0.9, etaB=0.6, visibility=0.85)
        got = quantum_trial_probs(model, 2, 2)
        expected = dense_quadruple(0.3, 1.1, 0.4, 0.9, 0.6, 0.85)
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_no_detection(self):
        probs = quantum_cond_probs(QuantumModel(etaA=0.0, etaB=0.0))
        np.testing.assert_allclose(probs.p[0, 0], np.ones((2, 2)))

    def test_dark_counts_only(self):
        probs = quantum_cond_probs(QuantumModel(etaA=0.0, etaB=0.0, pDark=0.1))
        self.assertAlmostEqual(probs.cell(1, 1)[0], 0.01, places=15)

    @given(
        st.floats(0, 1), st.floats(-4, 4), st.floats(-4, 4), st.floats(-4, 4), st.floats(-4, 4),
        st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.5),
    )
    @settings(max_examples=200, deadline=None)
    def test_normalised_and_non_signaling(self, r, a1, a2, b1, b2, etaA, etaB, visibility, p_dark):
        model = QuantumModel(r, a1, a2, b1, b2, etaA, etaB, visibility, p_dark)
        probs = quantum_cond_probs(model)
        np.testing.assert_allclose(probs.p.sum(axis=(0, 1)), np.ones((2, 2)), atol=1e-12)
        self.assertLessEqual(no_signaling_check(probs, 1e-12).max_deviation, 1e-12)

    def test_monotone_in_visibility(self):
        for eta in (0.8, 0.9, 1.0):
            values = [
                che_j(quantum_cond_probs(QuantumModel(etaA=eta, etaB=eta, visibility=v)))
                for v in np.linspace(1.0, 0.0, 11)
            ]
            self.assertTrue(all(b <= a + 1e-15 for a, b in zip(values, values[1:])))

    def test_invalid_model(self):
        with self.assertRaises(ValidationError):
            QuantumModel(r=1.5)
        with self.assertRaises(ValidationError):
            QuantumModel(pDark=1.0)


class DeterministicStrategyTests(unittest.TestCase):
    def test_lhv_max_is_zero(self):
        result = lhv_max_j()
        self.assertEqual(result["max_j"], 0.0)
        self.assertEqual(che_j(deterministic_cond_probs(result["argmax_strategy"])), 0.0)

    def test_witnesses(self):
        self.assertEqual(che_j(deterministic_cond_probs(0)), 0.0)
        alice, bob = strategy_outcomes(15)
        self.assertEqual(alice.tolist() + bob.tolist(), [1, 1, 1, 1])
        self.assertEqual(che_j(deterministic_cond_probs(15)), 0.0)

    def test_three_outcome_assignments(self):
        result = lhv_three_outcome_max()
        self.assertEqual(result["assignments"], 81)
        self.assertLessEqual(result["max_value"], 0.0)

    def test_strategy_id_range(self):
        with self.assertRaises(ValidationError):
            strategy_outcomes(16)


class SimulateTests(unittest.TestCase):
    def test_single_trial(self):
        records = list(iter_records(simulate(QuantumModel(), 1, RngSeed(1))))
        self.assertEqual(len(records), 1)
        self.assertEqual(records[0].index, 1)

    def test_rejects_empty_run(self):
        with self.assertRaises(ValidationError):
            list(simulate(QuantumModel(), 0, RngSeed(1)))

    def test_reproducible_bytes_independent_of_workers(self):
        with tempfile.TemporaryDirectory() as tmp:
            paths = []
            for k, workers in enumerate((1, 3, 1)):
                path = pathlib.Path(tmp) / f"run{k}.csv"
                write_trials_csv(
                    simulate(QuantumModel(), 12_345, RngSeed(42, 3), workers=workers, block_size=1000),
                    path,
                )
                paths.append(path)
            self.assertEqual(paths[0].read_bytes(), paths[1].read_bytes())
            self.assertEqual(paths[0].read_bytes(), paths[2].read_bytes())

    def test_streams_differ(self):
        first = next(simulate(QuantumModel(), 1000, RngSeed(42, 0)))
        second = next(simulate(QuantumModel(), 1000, RngSeed(42, 1)))
        self.assertFalse(np.array_equal(first.a, second.a))

    def test_indices_contiguous_across_blocks(self):
        blocks = list(simulate(QuantumModel(), 2500, RngSeed(5), block_size=1000))
        self.assertEqual([len(b) for b in blocks], [1000, 1000, 500])
        index = np.concatenate([b.index for b in blocks])
        np.testing.assert_array_equal(index, np.arange(1, 2501))

    def test_quantum_model_matches_analytic(self):
        model = QuantumModel(r=0.8, etaA=0.9, etaB=0.9)
        j, se, _ = empirical(simulate(model, FAST_N, RngSeed(11), block_size=SMALL_BLOCK))
        self.assertLessEqual(abs(j - che_j(quantum_cond_probs(model))), 5 * se)

    def test_biased_settings(self):
        profile = SettingsProfile(kappaA=0.1, kappaB=-0.05)
        _, _, counts = empirical(simulate(QuantumModel(), FAST_N, RngSeed(3), profile=profile))
        freq = counts.totals / counts.total
        sigma = math.sqrt(0.25 / FAST_N)
        self.assertAlmostEqual(freq[1].sum(), 0.6, delta=5 * sigma)
        self.assertAlmostEqual(freq[:, 1].sum(), 0.45, delta=5 * sigma)

    def test_deterministic_lhv_stays_below_zero(self):
        for strategy in (0, 5, 13, 15):
            config = AdversaryConfig(kind="deterministic-lhv", base_strategy=strategy)
            j, se, _ = empirical(simulate(config, 20_000, RngSeed(strategy)))
            self.assertLessEqual(j, 5 * se + 1e-12)


class MemoryAdversaryTests(unittest.TestCase):
    def test_outcomes_follow_previous_settings(self):
        config = AdversaryConfig(kind=AdversaryKind.MEMORY)
        records = list(iter_records(simulate(config, 2500, RngSeed(9), block_size=1000)))
        for prev, record in zip(records, records[1:]):
            alice, bob = strategy_outcomes(int(MEMORY_POLICY[prev.a.index, prev.b.index]))
            self.assertEqual(int(record.A), alice[record.a.index])
            self.assertEqual(int(record.B), bob[record.b.index])

    def test_policy_strategies_have_zero_j(self):
        for strategy in MEMORY_POLICY.ravel():
            self.assertEqual(che_j(deterministic_cond_probs(int(strategy))), 0.0)

    def test_empirical_j_not_positive(self):
        config = AdversaryConfig(kind=AdversaryKind.MEMORY)
        j, se, _ = empirical(simulate(config, FAST_N, RngSeed(4), block_size=SMALL_BLOCK))
        self.assertLessEqual(j, 5 * se)


class CommunicationAdversaryTests(unittest.TestCase):
    def run_adversary(self, kind, eps_ab, n, placement=Placement.BERNOULLI, seed=0):
        profile = SettingsProfile(epsA=eps_ab)
        config = AdversaryConfig(kind=kind, profile=profile, placement=placement)
        return empirical(simulate(config, n, RngSeed(seed), block_size=SMALL_BLOCK))

    def test_pure_communication(self):
        j, se, counts = self.run_adversary(AdversaryKind.COMM_PURE, 0.1, FAST_N)
        self.assertLessEqual(abs(j - 0.1), 5 * se)
        tol = binomial_tolerance(counts)
        self.assertFalse(no_signaling_check(estimate_cond_probs(counts), tol).passed)

    def test_pure_communication_reaches_logical_bound(self):
        j, _, _ = self.run_adversary(AdversaryKind.COMM_PURE, 1.0, 10_000)
        self.assertEqual(j, 1.0)

    def test_no_communication_is_local(self):
        j, se, _ = self.run_adversary(AdversaryKind.COMM_PURE, 0.0, 20_000)
        self.assertLessEqual(j, 5 * se + 1e-12)

    def test_prbox(self):
        j, se, counts = self.run_adversary(AdversaryKind.COMM_PRBOX, 0.1, FAST_N)
        self.assertLessEqual(abs(j - 0.05), 5 * se)
        tol = binomial_tolerance(counts)
        self.assertTrue(no_signaling_check(estimate_cond_probs(counts), tol).passed)

    def test_prbox_full_fraction(self):
        j, se, _ = self.run_adversary(AdversaryKind.COMM_PRBOX, 1.0, FAST_N)
        self.assertLessEqual(abs(j - 0.5), 5 * se)

    def test_exact_expectations(self):
        profile = SettingsProfile(epsA=0.15, epsB=0.05)
        self.assertAlmostEqual(che_j(comm_pure_adversary(profile).exact_cond_probs()), 0.2, places=12)
        prbox = comm_prbox_adversary(profile).exact_cond_probs()
        self.assertAlmostEqual(che_j(prbox), 0.1, places=12)
        self.assertTrue(no_signaling_check(prbox, 1e-12).passed)
        self.assertFalse(no_signaling_check(comm_pure_adversary(profile).exact_cond_probs(), 1e-12).passed)

    def test_block_placement_leads(self):
        profile = SettingsProfile(epsA=0.1)
        generator = comm_pure_adversary(profile, Placement.BLOCK, n_trials=1000)
        block = next(simulate(generator, 1000, RngSeed(1)))
        self.assertEqual(generator.n_communicated, 100)
        self.assertTrue(np.all(block.A[:100] == 1))
        self.assertTrue(np.all(block.A[100:] == 0))

    def test_requires_communication_mode(self):
        with self.assertRaises(ValidationError):
            AdversaryConfig(kind="comm-pure", profile=SettingsProfile(mode="excess-predictability"))

    def test_base_strategy_must_be_local_zero(self):
        with self.assertRaises(ValidationError):
            comm_pure_adversary(SettingsProfile(epsA=0.1), base_strategy=1)


class PredictabilityAdversaryTests(unittest.TestCase):
    def profile(self, eps, mode=PredictabilityMode.EXCESS, **kwargs):
        return SettingsProfile(epsA=eps, epsB=eps, mode=mode, **kwargs)

    def test_bounds_hold_for_every_mu(self):
        for eps in (0.0, 0.01, 0.05, 0.2):
            for strategy in range(16):
                generator = predictability_adversary(self.profile(eps, kappaA=0.05), strategy)
                self.assertTrue(generator.predictability_bounds_hold())

    def test_bounds_tight_at_corner(self):
        generator = predictability_adversary(self.profile(0.05))
        eps_plus, _ = generator.profile.eps_pm
        top = generator.components[0].setting_probs().max()
        self.assertAlmostEqual(top, 0.25 * (1 + eps_plus), places=15)

    def test_exact_adapted_value_not_positive(self):
        for eps in (0.0, 0.05, 0.2):
            for strategy in range(16):
                generator = predictability_adversary(self.profile(eps), strategy)
                self.assertLessEqual(adapted_che_jeps(generator.exact_joint(), generator.profile), 1e-12)

    def test_zero_predictability_is_local(self):
        joint = predictability_adversary(self.profile(0.0)).exact_joint()
        cond = CondProbs(joint.p / joint.setting_probs[None, None, :, :])
        self.assertLessEqual(che_j(cond), 1e-12)

    def test_raw_violation_with_sound_adapted_value(self):
        profile = self.profile(0.05)
        config = AdversaryConfig(kind="predictability-skew", profile=profile)
        j, se, counts = empirical(simulate(config, FAST_N, RngSeed(21), block_size=SMALL_BLOCK))
        self.assertGreater(j, 5 * se)
        j_eps = adapted_che_jeps(JointProbs.from_counts(counts), profile)
        self.assertLessEqual(j_eps, 5 * 2 * se)

    def test_beyond_half_mode(self):
        generator = predictability_adversary(self.profile(0.1, PredictabilityMode.BEYOND_HALF, kappaA=0.02))
        self.assertTrue(generator.predictability_bounds_hold())
        self.assertLessEqual(adapted_che_jeps(generator.exact_joint(), generator.profile), 1e-12)

    def test_beyond_half_bias_too_large(self):
        with self.assertRaises(ValidationError):
            predictability_adversary(self.profile(0.1, PredictabilityMode.BEYOND_HALF, kappaA=0.2))

    def test_full_predictability_rejected(self):
        with self.assertRaises(ValidationError):
            predictability_adversary(self.profile(1.0))

    def test_requires_predictability_mode(self):
        with self.assertRaises(ValidationError):
            AdversaryConfig(kind="predictability-skew", profile=SettingsProfile())


@unittest.skipUnless(SLOW, "set BELL_AUDIT_SLOW=1 for full-size runs")
class FullSizeAdversaryTests(unittest.TestCase):
    N = 10_000_000

    def test_comm_pure(self):
        config = AdversaryConfig(kind="comm-pure", profile=SettingsProfile(epsA=0.1))
        j, se, counts = empirical(simulate(config, self.N, RngSeed(100), workers=4))
        self.assertLessEqual(abs(j - 0.1), 0.005)
        self.assertFalse(no_signaling_check(estimate_cond_probs(counts), binomial_tolerance(counts)).passed)

    def test_comm_prbox(self):
        config = AdversaryConfig(kind="comm-prbox", profile=SettingsProfile(epsA=0.1))
        j, se, counts = empirical(simulate(config, self.N, RngSeed(101), workers=4))
        self.assertLessEqual(abs(j - 0.05), 0.005)
        self.assertTrue(no_signaling_check(estimate_cond_probs(counts), binomial_tolerance(counts)).passed)

    def test_comm_prbox_fraction(self):
        config = AdversaryConfig(kind="comm-prbox", profile=SettingsProfile(epsA=0.2))
        j, se, _ = empirical(simulate(config, self.N, RngSeed(102), workers=4))
        self.assertLessEqual(abs(j - 0.1), 5 * se)

    def test_predictability_skew(self):
        profile = SettingsProfile(epsA=0.05, epsB=0.05, mode="excess-predictability")
        config = AdversaryConfig(kind="predictability-skew", profile=profile)
        j, se, counts = empirical(simulate(config, self.N, RngSeed(103), workers=4))
        self.assertGreater(j, 5 * se)
        self.assertLessEqual(adapted_che_jeps(JointProbs.from_counts(counts), profile), 5 * 2 * se)


if __name__ == "__main__":
    unittest.main()
