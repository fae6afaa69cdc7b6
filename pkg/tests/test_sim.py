"""Trial simulator, metrics, and asymptotic validation harness."""
import json
import math
from pathlib import Path

import numpy as np
import pytest

from dosedesign.core import BiomarkerModel, DoseGrid, ToxScenario
from dosedesign.designs import CrmPrior, WorkingModel
from dosedesign.engines import (
    CrmDesign,
    DsaDesign,
    LikelihoodCrmDesign,
    ThreePlusThreeDesign,
    VirtualObservationDesign,
)
from dosedesign.sim import (
    IncompatiblePairingError,
    check_asymptotics,
    design_cost,
    design_cost_continuous,
    run_mc,
    run_trial,
    simulate_logit_mle_batch,
    simulate_vo_batch,
)

DATA = Path(__file__).parent / "data"


def bayes_crm():
    model = WorkingModel(form="empiric", target_p=0.2, skeleton=(0.05, 0.12, 0.20, 0.35, 0.50))
    return CrmDesign(model=model, prior=CrmPrior(), start_level=1, target_p=0.2)


class TestRunTrial:
    def test_three_plus_three_never_toxic_walks_to_top(self):
        scenario = ToxScenario([0.0] * 5)
        traj = run_trial(ThreePlusThreeDesign(), scenario, 8, 3, seed=1)
        assert traj.levels == [1, 2, 3, 4, 5, 5, 5, 5]
        assert not traj.stopped

    def test_three_plus_three_all_toxic_stops_immediately(self):
        scenario = ToxScenario([1.0] * 5)
        traj = run_trial(ThreePlusThreeDesign(), scenario, 8, 3, seed=1)
        assert traj.levels == [1]
        assert traj.stopped and traj.mtd_declared is None
        assert traj.final_recommendation is None

    def test_golden_crm_trajectory(self, scenario_standard):
        traj = run_trial(bayes_crm(), scenario_standard, 10, 1, seed=2027)
        golden = json.loads((DATA / "golden_crm_trajectory.json").read_text())
        assert traj.to_dict() == golden

    def test_replay_is_bit_exact(self, scenario_standard):
        a = run_trial(DsaDesign(b=0.2, target_p=0.2), scenario_standard, 12, 2, seed=5)
        b = run_trial(DsaDesign(b=0.2, target_p=0.2), scenario_standard, 12, 2, seed=5)
        assert a.to_dict() == b.to_dict()

    def test_incompatible_pairings_rejected(self, scenario_standard):
        vo = VirtualObservationDesign(b=1.0, t0=3.0, target_p=0.2)
        with pytest.raises(IncompatiblePairingError):
            run_trial(vo, scenario_standard, 5, 2, seed=0)
        model = BiomarkerModel(mean=lambda x: x, sd=lambda x: 0.2, t0=3.2, p=0.2)
        with pytest.raises(IncompatiblePairingError):
            run_trial(DsaDesign(b=0.2, target_p=0.2), model, 5, 2, seed=0, grid=DoseGrid(5))
        with pytest.raises(IncompatiblePairingError):
            run_trial(vo, model, 5, 1, seed=0, grid=DoseGrid(5))  # m < 2


class TestRunMc:
    def test_constant_design_has_perfect_selection(self, scenario_standard, constant_design_cls):
        report = run_mc(
            constant_design_cls(level=3, target_p=0.2), scenario_standard,
            n_cohorts=6, m=1, reps=50, seed=3,
        )
        assert report.pcs == 1.0 and report.nu == 3

    def test_determinism_and_thread_independence(self, scenario_standard):
        kw = dict(truth=scenario_standard, n_cohorts=10, m=2, reps=60, seed=11)
        a = run_mc(DsaDesign(b=0.2, target_p=0.2), **kw)
        b = run_mc(DsaDesign(b=0.2, target_p=0.2), **kw)
        c = run_mc(DsaDesign(b=0.2, target_p=0.2), threads=2, **kw)
        assert a.to_dict() == b.to_dict() == c.to_dict()

    def test_allocation_conserved(self, scenario_standard):
        report = run_mc(
            ThreePlusThreeDesign(), scenario_standard, n_cohorts=10, m=3,
            reps=80, seed=7, keep_replicates=True,
        )
        assert sum(report.allocation) == sum(r["subjects"] for r in report.per_rep)
        for rec in report.per_rep:
            assert sum(rec["allocation"]) == rec["subjects"]

    def test_biased_coin_allocation_mode_near_mtd(self, scenario_standard):
        from dosedesign.engines import BiasedCoinDesign

        report = run_mc(
            BiasedCoinDesign(target_p=0.2), scenario_standard,
            n_cohorts=60, m=1, reps=300, seed=13,
        )
        mode = int(np.argmax(report.allocation)) + 1
        assert mode in (report.nu - 1, report.nu, report.nu + 1)

    def test_pcs_se_matches_batch_split(self, scenario_standard):
        report = run_mc(
            DsaDesign(b=0.2, target_p=0.2), scenario_standard,
            n_cohorts=10, m=2, reps=2000, seed=17, keep_replicates=True,
        )
        correct = np.array([r["correct"] for r in report.per_rep], dtype=float)
        batches = correct.reshape(100, 20).mean(axis=1)
        batch_se = batches.std(ddof=1) / math.sqrt(len(batches))
        assert abs(batch_se - report.pcs_se) / report.pcs_se < 0.20


class TestDesignCost:
    def test_on_target_is_free(self):
        traj = run_trial(ThreePlusThreeDesign(), ToxScenario([0.0] * 3), 1, 3, seed=0)
        assert design_cost(traj, 1) == 0.0

    def test_arithmetic(self):
        # doses (1, 2, 1) at nu = 2 cost 1 + 0 + 1
        from dosedesign.sim import CohortRecord, TrialTrajectory

        records = [
            CohortRecord(i + 1, level, float(level), (0.0,), "stay", level)
            for i, level in enumerate((1, 2, 1))
        ]
        traj = TrialTrajectory("stub", 0, records, 2, False, None)
        assert design_cost(traj, 2) == 2.0
        assert design_cost_continuous([1.0, 2.0, 1.0], 2.0) == 2.0

    def test_rigid_dsa_cost_grows_linearly(self):
        """After the two-cohort trap the dose is absorbed one level below the
        MTD, so the cost grows by one per cohort."""
        scenario = ToxScenario([0.05, 0.20, 0.40, 0.60, 0.80])
        design = DsaDesign(b=0.2, target_p=0.2)
        # outcome sequence forcing the trap: (0,0) then (1,0), then all clean
        from dosedesign.core import TrialState

        grid = DoseGrid(5)
        state = TrialState(grid, 2)
        decision = design.initial_decision(grid, 2)
        levels = []
        forced = [(0.0, 0.0), (1.0, 0.0)] + [(0.0, 0.0)] * 28
        for outcomes in forced:
            levels.append(decision.next_level)
            state.record(decision.next_level, outcomes)
            decision = design.decide(state)
        assert levels[:3] == [1, 2, 1]
        assert set(levels[3:]) == {1}
        costs = np.cumsum([(l - 2) ** 2 for l in levels])
        late = np.diff(costs[3:])
        assert np.all(late == 1)

    def test_mean_relative_cost_decreases_for_consistent_designs(self, scenario_standard):
        # C'_n / n at n in {50, 200, 800} from the same trajectories
        checkpoints = (50, 200, 800)
        model = WorkingModel(form="logistic", target_p=0.2, slope=1.0)
        crm_mle = LikelihoodCrmDesign(model=model, start_level=1, target_p=0.2)
        rel = {n: [] for n in checkpoints}
        children = np.random.SeedSequence(23).spawn(60)
        for r in range(60):
            traj = run_trial(crm_mle, scenario_standard, 800, 1, seed=children[r])
            sq = np.cumsum([(l - 3) ** 2 for l in traj.levels])
            for n in checkpoints:
                rel[n].append(sq[n - 1] / n)
        means = [np.mean(rel[n]) for n in checkpoints]
        assert means[0] > means[1] > means[2]

        vo_rel = {n: [] for n in checkpoints}
        batch_levels = None
        from dosedesign.sim import simulate_vo_batch

        batch = simulate_vo_batch(
            n=800, reps=60, seed=29, model_slope=1.0, sigma0=0.2,
            t0=3.0 + 0.8416212335729143 * 0.2, p=0.2, b=1.0, n_levels=5,
        )
        sq = np.cumsum((batch["trajectories"] - 3) ** 2, axis=1)
        vo_means = [np.mean(sq[:, n - 1] / n) for n in checkpoints]
        assert vo_means[0] > vo_means[1] > vo_means[2]


class TestAsymptotics:
    def test_rm_matches_closed_form_smoke(self):
        record = check_asymptotics("rm", n=400, reps=400, seed=31, sigma=1.0, beta=1.0)
        assert 0.8 < record.ratio < 1.25

    def test_rejects_unknown_recursion(self):
        with pytest.raises(ValueError):
            check_asymptotics("bogus", n=10, reps=10, seed=0)

    def test_vectorized_logit_mle_matches_scalar_op(self):
        """Single-replicate vectorized trajectory equals the bisection op."""
        from dosedesign.designs import logit_mle_update

        n, m, p = 30, 3, 0.12
        sigma0, theta, slope = 0.5, 2.0, 1.0
        z_p = 1.1749867920660904
        bt = slope * math.exp(-z_p**2 / 2) / math.sqrt(2 * math.pi) / sigma0
        t0 = slope * theta + z_p * sigma0
        x_vec = simulate_logit_mle_batch(
            n, 1, seed=37, theta=theta, slope=slope, sigma0=sigma0, m=m, p=p, b_tilde=bt
        )
        # replay the same draws through the scalar operation; the working
        # model's rate parameter makes its slope at the root equal bt
        from scipy import stats

        rng = np.random.default_rng(37)
        model = WorkingModel(form="logistic", target_p=p, slope=bt / (p * (1 - p)))
        x = theta
        doses, fracs = [], []
        for i in range(1, n + 1):
            pi = float(stats.norm.sf((t0 - slope * x) / sigma0))
            tbar = float(rng.binomial(m, np.asarray([pi]))[0]) / m
            doses.append(x)
            fracs.append(tbar)
            total = sum(fracs)
            if 1e-12 < total < len(fracs) - 1e-12:
                x = logit_mle_update(doses, fracs, model)
            else:
                x = x - (tbar - p) / (i * bt)
        assert x_vec[0] == pytest.approx(x, abs=1e-7)
