"""Engine-level behavior: catalog, start rules, stepping, guards."""
import numpy as np
import pytest

from dosedesign.core import DoseGrid, TrialState
from dosedesign.designs import CrmPrior, WorkingModel
from dosedesign.engines import (
    CoherenceGuard,
    CrmDesign,
    DsaDesign,
    IsotonicDesign,
    LikelihoodCrmDesign,
    ThreePlusThreeDesign,
    VirtualObservationDesign,
    build_design,
    design_catalog,
)


def make_state(grid_size, m, cohorts):
    state = TrialState(DoseGrid(grid_size), m)
    for level, outcomes in cohorts:
        state.record(level, outcomes)
    return state


class TestCatalog:
    def test_every_design_has_schema(self):
        entries = design_catalog()
        assert {e["kind"] for e in entries} == {
            "biased_coin", "crm", "crm_mle", "dsa", "isotonic",
            "three_plus_three", "virtual_observation",
        }
        for e in entries:
            assert "properties" in e["parameters"]

    def test_build_design_rejects_unknown(self):
        with pytest.raises(ValueError):
            build_design("nope", {})
        with pytest.raises(ValueError):
            build_design("dsa", {"b": 0.2, "target_p": 0.2, "bogus": 1})

    def test_build_design_requires_parameters(self):
        with pytest.raises(ValueError):
            build_design("dsa", {"target_p": 0.2})  # missing b

    def test_guard_wraps_binary_only(self):
        vo = VirtualObservationDesign(b=1.0, t0=3.0, target_p=0.2)
        with pytest.raises(ValueError):
            CoherenceGuard(vo)


class TestCrmEngine:
    def test_prior_based_start_hits_skeleton_target(self):
        model = WorkingModel(form="empiric", target_p=0.2,
                             skeleton=(0.05, 0.12, 0.20, 0.35, 0.50))
        design = CrmDesign(model=model, prior=CrmPrior(), target_p=0.2)
        decision = design.initial_decision(DoseGrid(5), 1)
        assert decision.next_level == 3  # skeleton exactly hits p at level 3

    def test_explicit_start_respected(self):
        model = WorkingModel(form="empiric", target_p=0.2,
                             skeleton=(0.05, 0.12, 0.20, 0.35, 0.50))
        design = CrmDesign(model=model, prior=CrmPrior(), start_level=1, target_p=0.2)
        assert design.initial_decision(DoseGrid(5), 1).next_level == 1

    def test_memo_reuse_is_consistent(self):
        model = WorkingModel(form="logistic", target_p=0.25, slope=1.0)
        design = CrmDesign(model=model, prior=CrmPrior(mean=3, sd=1.5),
                           start_level=2, target_p=0.25)
        state = make_state(5, 2, [(2, [0, 1]), (2, [0, 0])])
        first = design.decide(state)
        second = design.decide(state)
        assert first == second


class TestLikelihoodCrmStartup:
    def setup_method(self):
        model = WorkingModel(form="logistic", target_p=0.2, slope=1.0)
        self.design = LikelihoodCrmDesign(model=model, start_level=1, target_p=0.2)

    def test_clean_cohort_escalates_one_level(self):
        state = make_state(5, 2, [(1, [0, 0])])
        d = self.design.decide(state)
        assert d.kind == "escalate" and d.next_level == 2

    def test_toxic_cohort_stays(self):
        state = make_state(5, 2, [(1, [1, 1])])
        d = self.design.decide(state)
        assert d.kind == "stay" and d.next_level == 1

    def test_escalation_caps_at_top(self):
        state = make_state(3, 2, [(3, [0, 0])])
        assert self.design.decide(state).next_level == 3

    def test_switches_to_mle_once_estimable(self):
        state = make_state(5, 2, [(1, [0, 0]), (2, [1, 0])])
        d = self.design.decide(state)
        assert "MLE" in d.rationale and "not estimable" not in d.rationale


class TestVirtualObservationEngine:
    def test_known_step_arithmetic(self):
        # m=2 identical outcomes: S=0, O=ybar, V=O (on grid), so
        # x*_2 = 1 - (y - t0)/b with i=1
        design = VirtualObservationDesign(b=1.0, t0=3.0, target_p=0.2, start_level=1)
        state = TrialState(DoseGrid(5), 2)
        state.record(1, [1.0, 1.0], assigned_dose=1.0)
        d = design.decide(state)
        assert d.assigned_dose == pytest.approx(1.0 - (1.0 - 3.0) / 1.0)
        assert d.next_level == 3

    def test_requires_group_of_two(self):
        design = VirtualObservationDesign(b=1.0, t0=3.0, target_p=0.2)
        with pytest.raises(ValueError):
            design.validate_trial(DoseGrid(5), 1)


class TestThreePlusThreeEngine:
    def test_requires_triplets(self):
        from dosedesign.designs import DesignStateError

        design = ThreePlusThreeDesign()
        state = make_state(5, 2, [(1, [0, 0])])
        with pytest.raises(DesignStateError):
            design.decide(state)

    def test_final_recommendation_tracks_stop(self):
        design = ThreePlusThreeDesign()
        state = make_state(5, 3, [(1, [0, 0, 0]), (2, [1, 1, 0])])
        assert design.final_recommendation(state) == 1


class TestDsaEngine:
    def test_escalate_then_snap_back(self):
        design = DsaDesign(b=0.2, target_p=0.2)
        state = make_state(5, 2, [(1, [0, 0])])
        d1 = design.decide(state)
        assert d1.next_level == 2
        state.record(2, [1, 0])
        assert design.decide(state).next_level == 1


class TestIsotonicEngine:
    def test_untried_level_escalation_rule(self):
        design = IsotonicDesign(target_p=0.2)
        state = make_state(5, 2, [(1, [0, 0])])
        d = design.decide(state)
        assert d.next_level == 2 and d.kind == "escalate"

    def test_trap_state_stays_low(self):
        design = IsotonicDesign(target_p=0.2)
        state = make_state(5, 2, [(1, [0, 0]), (2, [1, 0])])
        assert design.decide(state).next_level == 1
