"""Design-criteria verification suite."""
import numpy as np
import pytest

from dosedesign.core import DoseGrid, ToxScenario, TrialState
from dosedesign.designs import CrmPrior, WorkingModel
from dosedesign.engines import (
    BiasedCoinDesign,
    CoherenceGuard,
    CrmDesign,
    DsaDesign,
    IsotonicDesign,
    LikelihoodCrmDesign,
    ThreePlusThreeDesign,
)
from dosedesign.properties import (
    BudgetExceededError,
    certify_dsa_rigidity,
    check_coherence,
    detect_rigidity_empirical,
    estimate_indifference,
    probe_unbiasedness,
    replay_witness,
    simulate_isotonic_batch,
)


def bayes_crm(target_p=0.2, start=None):
    model = WorkingModel(
        form="empiric", target_p=target_p, skeleton=(0.05, 0.12, 0.20, 0.35, 0.50)
    )
    return CrmDesign(model=model, prior=CrmPrior(), start_level=start, target_p=target_p)


class TestCheckCoherence:
    def test_one_stage_bayesian_crm_passes(self):
        report = check_coherence(bayes_crm(), n_cohorts=10, m=1, p=0.2, grid=DoseGrid(5))
        assert report.verdict == "pass"
        assert report.witnesses == []
        assert report.statistics["leaves"] == 2**9

    def test_planted_bug_fails_with_short_witness(self, broken_design):
        report = check_coherence(broken_design, n_cohorts=4, m=1, p=0.2, grid=DoseGrid(5))
        assert report.verdict == "fail"
        first = report.witnesses[0]
        assert first.label == "1"
        assert first.transition["kind"] == "escalate"
        assert first.transition["cohort"] == 2
        assert replay_witness(broken_design, first, DoseGrid(5), 1)

    def test_dsa_group_version_passes(self):
        design = DsaDesign(b=0.2, target_p=0.2)
        report = check_coherence(design, n_cohorts=12, m=2, p=0.2, grid=DoseGrid(5))
        assert report.verdict == "pass"
        assert report.statistics["leaves"] == 3**11

    def test_biased_coin_support_is_coherent(self):
        design = BiasedCoinDesign(target_p=0.2)
        report = check_coherence(design, n_cohorts=8, m=1, p=0.2, grid=DoseGrid(4))
        assert report.verdict == "pass"

    def test_budget_guard(self):
        design = DsaDesign(b=0.2, target_p=0.2)
        with pytest.raises(BudgetExceededError):
            check_coherence(design, n_cohorts=30, m=2, p=0.2, grid=DoseGrid(5), budget=1000)

    def test_guard_makes_every_catalog_design_coherent(self, broken_design):
        grid = DoseGrid(4)
        cases = [
            (ThreePlusThreeDesign(), 3, 4),
            (BiasedCoinDesign(target_p=0.2), 1, 6),
            (bayes_crm(), 1, 6),
            (LikelihoodCrmDesign(model=WorkingModel(form="logistic", target_p=0.2)), 1, 6),
            (IsotonicDesign(target_p=0.2), 2, 5),
            (DsaDesign(b=0.2, target_p=0.2), 2, 5),
            (broken_design, 1, 6),
        ]
        for design, m, horizon in cases:
            guarded = CoherenceGuard(design)
            report = check_coherence(
                guarded, n_cohorts=horizon, m=m, p=guarded.target_p, grid=grid
            )
            assert report.verdict == "pass", design.kind


class TestDsaRigidityCertificate:
    def test_two_cohort_trap_reproduced(self):
        report = certify_dsa_rigidity(b=0.2, p=0.2, n_levels=5, start=1, m=2)
        assert report.verdict == "fail"  # the design IS rigid
        assert report.statistics["freeze_index"] == 9
        witness = report.witnesses[0]
        assert witness.label == "0,0 | 1,0"
        assert witness.transition["dose_trajectory"] == [1, 2, 1]
        assert witness.transition["absorbed_level"] == 1

    def test_huge_gain_freezes_at_once(self):
        report = certify_dsa_rigidity(b=1e9, p=0.2, n_levels=5, start=3)
        assert report.statistics["freeze_index"] == 1
        assert report.witnesses[0].outcomes == []

    def test_witness_replays_through_engine(self):
        report = certify_dsa_rigidity(b=0.2, p=0.2, n_levels=5, start=1, m=2)
        witness = report.witnesses[0]
        design = DsaDesign(b=0.2, target_p=0.2)
        grid = DoseGrid(5)
        state = TrialState(grid, 2)
        decision = design.initial_decision(grid, 2)
        levels = [decision.next_level]
        for outcomes in witness.outcomes:
            state.record(decision.next_level, outcomes)
            decision = design.decide(state)
            levels.append(decision.next_level)
        assert levels == witness.transition["dose_trajectory"]


class TestEmpiricalRigidity:
    def test_isotonic_trap_statistics(self, scenario_isotonic_trap):
        design = IsotonicDesign(target_p=0.2)
        report = detect_rigidity_empirical(
            design, scenario_isotonic_trap, p_lo=0.15, p_hi=0.25,
            horizon=12, reps=20_000, seed=7, m=2,
        )
        assert report.verdict == "fail"
        stats = report.statistics
        # triggering event: >= 1 toxicity in the first cohort of 2 at level 2
        assert stats["trigger_prob"] == pytest.approx(0.36, abs=0.01)
        assert stats["confinement_prob"] >= 0.36 - 0.02

    def test_vectorized_batch_matches_engine_decisions(self, scenario_isotonic_trap):
        """Drive the scalar engine with the exact outcomes the vectorized
        batch drew and compare dose trajectories."""
        design = IsotonicDesign(target_p=0.2)
        reps, horizon, m, seed = 64, 8, 2, 123
        batch = simulate_isotonic_batch(
            scenario_isotonic_trap, m, 0.2, horizon, reps, seed
        )
        rng = np.random.default_rng(seed)
        probs = np.asarray(scenario_isotonic_trap.probs)
        grid = DoseGrid(5)
        states = [TrialState(grid, m) for _ in range(reps)]
        current = np.full(reps, 1)
        for t in range(horizon):
            assert np.array_equal(batch["trajectories"][:, t], current)
            tox = rng.binomial(m, probs[current - 1])
            if t == horizon - 1:
                break
            for r in range(reps):
                states[r].record(int(current[r]), [1.0] * int(tox[r]) + [0.0] * (m - int(tox[r])))
                current[r] = design.decide(states[r]).next_level

    def test_constant_design_never_exits(self, scenario_standard, constant_design_cls):
        design = constant_design_cls(level=3, target_p=0.2)
        report = detect_rigidity_empirical(
            design, scenario_standard, p_lo=0.15, p_hi=0.25,
            horizon=10, reps=300, seed=5, m=1,
        )
        assert report.verdict == "pass"
        assert report.statistics["exit_prob"] == 0.0

    def test_crm_exit_probability_decays_with_horizon(self, scenario_standard):
        design = bayes_crm(start=1)
        estimates = []
        for horizon in (6, 24):
            report = detect_rigidity_empirical(
                design, scenario_standard, p_lo=0.12, p_hi=0.35,
                horizon=horizon, reps=400, seed=11, m=1,
            )
            estimates.append(report.statistics["exit_prob"])
        assert estimates[1] <= estimates[0]


class TestIndifference:
    def test_constant_at_mtd_gets_smallest_delta(self, scenario_standard, constant_design_cls):
        design = constant_design_cls(level=3, target_p=0.2)
        report = estimate_indifference(
            design, [scenario_standard], delta_grid=[0.02, 0.05, 0.1],
            n_long=12, reps=50, seed=3, m=1,
        )
        assert report.verdict == "pass"
        assert report.statistics["delta_hat"] == 0.02

    def test_steep_curve_shrinks_delta(self):
        """Steeper neighbors around the same MTD shrink the estimated
        half-width (the criterion is asymptotic, so the window sits late in a
        long trial and the tolerance is loose)."""
        shallow = ToxScenario([0.10, 0.15, 0.20, 0.26, 0.33])
        steep = ToxScenario([0.02, 0.05, 0.20, 0.48, 0.70])
        design = bayes_crm(start=1)
        grid = [0.01, 0.03, 0.06, 0.10, 0.14, 0.19]
        kw = dict(delta_grid=grid, n_long=60, reps=100, seed=21, m=2,
                  epsilon=0.15, settle_at=48)
        d_shallow = estimate_indifference(design, [shallow], **kw)
        d_steep = estimate_indifference(design, [steep], **kw)
        assert d_steep.verdict == "pass"
        assert d_steep.statistics["delta_hat"] < d_shallow.statistics.get("delta_hat", max(grid))

    def test_delta_nonincreasing_in_horizon(self, scenario_standard):
        design = bayes_crm(start=1)
        grid = [0.01, 0.03, 0.06, 0.10, 0.14, 0.19]
        short = estimate_indifference(
            design, [scenario_standard], delta_grid=grid, n_long=10, reps=120,
            seed=9, m=1, epsilon=0.05,
        )
        long = estimate_indifference(
            design, [scenario_standard], delta_grid=grid, n_long=40, reps=120,
            seed=9, m=1, epsilon=0.05,
        )
        d_short = short.statistics.get("delta_hat", max(grid) + 1)
        d_long = long.statistics.get("delta_hat", max(grid) + 1)
        assert d_long <= d_short

    def test_inconclusive_when_nothing_qualifies(self, constant_design_cls):
        scenario = ToxScenario([0.05, 0.50])
        design = constant_design_cls(level=2, target_p=0.2)
        report = estimate_indifference(
            design, [scenario], delta_grid=[0.01, 0.05], n_long=8, reps=20, seed=1, m=1
        )
        assert report.verdict == "inconclusive"


class TestUnbiasedness:
    def test_raising_above_mtd_helps(self, scenario_standard):
        design = DsaDesign(b=0.2, target_p=0.2)
        report = probe_unbiasedness(
            design, scenario_standard, k=3,
            perturbations=[{"level": 4, "prob": 0.45}, {"level": 5, "prob": 0.70}],
            n_cohorts=12, m=2, reps=800, seed=13,
        )
        assert report.verdict == "pass"

    def test_identical_perturbation_within_noise(self, scenario_standard):
        design = DsaDesign(b=0.2, target_p=0.2)
        report = probe_unbiasedness(
            design, scenario_standard, k=3,
            perturbations=[{"level": 4, "prob": 0.35}],  # unchanged value
            n_cohorts=10, m=2, reps=600, seed=19,
        )
        assert report.verdict == "pass"
        comp = report.statistics["comparisons"][0]
        tol = 2 * np.hypot(comp["se"], report.statistics["base_se"])
        assert abs(comp["estimate"] - report.statistics["base_estimate"]) <= tol

    def test_monotonicity_rejected(self, scenario_standard):
        design = DsaDesign(b=0.2, target_p=0.2)
        with pytest.raises(ValueError):
            probe_unbiasedness(
                design, scenario_standard, k=3,
                perturbations=[{"level": 4, "prob": 0.10}],  # below level 3's 0.20
                n_cohorts=8, m=2, reps=50, seed=2,
            )

    def test_weak_mode_stepwise_trend(self):
        # steepening family around a level-2 MTD: 3+3 selects it more often
        design = ThreePlusThreeDesign()
        base = ToxScenario([0.15, 0.33, 0.45, 0.60])
        family = [
            [0.10, 0.33, 0.52, 0.70],
            [0.05, 0.33, 0.60, 0.80],
            [0.02, 0.33, 0.70, 0.90],
        ]
        report = probe_unbiasedness(
            design, base, k=2, perturbations=family,
            n_cohorts=12, m=3, reps=800, seed=29, mode="weak",
        )
        assert report.verdict == "pass"
        estimates = [c["estimate"] for c in report.statistics["comparisons"]]
        assert estimates[-1] >= report.statistics["base_estimate"]
