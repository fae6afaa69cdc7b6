"""Shared fixtures: deliberately broken and trivial designs, standard scenarios."""
import numpy as np
import pytest

from dosedesign.core import ToxScenario, TrialState, decision_from_move
from dosedesign.engines import Design


class BrokenEscalator(Design):
    """Planted bug: escalates when the last cohort was toxic, stays otherwise."""

    kind = "broken_escalator"

    def decide(self, state: TrialState, rng=None):
        if not state.cohorts:
            return self.initial_decision(state.grid, state.m)
        current = state.current_level
        if state.last.mean >= self.target_p:
            nxt = min(current + 1, state.grid.n_levels)
        else:
            nxt = current
        return decision_from_move(current, nxt, rationale="deliberately incoherent")


class ConstantDesign(Design):
    """Treats every cohort at one fixed level."""

    kind = "constant"

    def __init__(self, level: int, target_p: float = 0.2):
        super().__init__(start_level=level, target_p=target_p)

    def decide(self, state: TrialState, rng=None):
        return decision_from_move(state.current_level, self.start_level,
                                  rationale="fixed-dose design")


@pytest.fixture
def broken_design():
    return BrokenEscalator(start_level=2, target_p=0.2)


@pytest.fixture
def constant_design_cls():
    return ConstantDesign


@pytest.fixture
def scenario_standard():
    """Interior-MTD scenario with the target at level 3 for p = 0.2."""
    return ToxScenario([0.05, 0.12, 0.20, 0.35, 0.50])


@pytest.fixture
def scenario_isotonic_trap():
    """Level 2 is the true MTD at exactly 0.20, as in the rigidity example."""
    return ToxScenario([0.05, 0.20, 0.40, 0.60, 0.80])
