"""Verification suite for the four design criteria: coherence / group
coherence, rigidity, indifference interval, and (weak) unbiasedness.

Exhaustive enumeration gives exact verdicts where the path space is finite;
the Monte Carlo detectors report estimates with standard errors and never
assert beyond 2-SE resolution.  Verdicts are uniformly "does the desirable
criterion hold": a rigid design FAILS the rigidity check.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .core import DoseGrid, ToxScenario, TrialState
from .engines import Design, IsotonicDesign
from .sa import dsa_freeze_index, dsa_step

__all__ = [
    "BudgetExceededError",
    "Witness",
    "PropertyReport",
    "check_coherence",
    "replay_witness",
    "certify_dsa_rigidity",
    "detect_rigidity_empirical",
    "estimate_indifference",
    "probe_unbiasedness",
]

# Treats near-half-level updates as exactly half a level; same role as the
# freeze-index snap (decimal configs hit the boundary exactly in real math).
_HALF_SNAP = 1e-12


class BudgetExceededError(RuntimeError):
    """The enumeration horizon implies more paths than the configured budget."""


@dataclass
class Witness:
    """A replayable counterexample: the outcome path (per-cohort tuples)
    and the flagged transition."""

    outcomes: list[tuple[float, ...]]
    transition: dict[str, Any]
    seed: int | None = None

    @property
    def label(self) -> str:
        return " | ".join(
            ",".join(f"{y:g}" for y in cohort) for cohort in self.outcomes
        )

    def to_dict(self) -> dict:
        return {
            "outcomes": [list(c) for c in self.outcomes],
            "label": self.label,
            "transition": self.transition,
            "seed": self.seed,
        }


@dataclass
class PropertyReport:
    """Verdict plus witness traces and Monte Carlo statistics."""

    property: str
    verdict: str  # "pass" | "fail" | "inconclusive"
    witnesses: list[Witness] = field(default_factory=list)
    statistics: dict[str, Any] = field(default_factory=dict)
    notes: str = ""

    def __post_init__(self) -> None:
        if self.verdict not in ("pass", "fail", "inconclusive"):
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if self.verdict == "fail" and not self.witnesses:
            raise ValueError("fail verdicts must carry at least one witness")

    def to_dict(self) -> dict:
        return {
            "property": self.property,
            "verdict": self.verdict,
            "witnesses": [w.to_dict() for w in self.witnesses],
            "statistics": self.statistics,
            "notes": self.notes,
        }


# ---------------------------------------------------------------------------
# Coherence by exhaustive enumeration
# ---------------------------------------------------------------------------


def _outcome_tuple(z: int, m: int) -> tuple[float, ...]:
    return tuple([1.0] * z + [0.0] * (m - z))


def _incoherent(ybar: float, p: float, kind: str) -> bool:
    if kind == "escalate":
        return ybar >= p - _HALF_SNAP
    if kind == "deescalate":
        return ybar <= p + _HALF_SNAP
    return False


def check_coherence(
    design: Design,
    n_cohorts: int,
    m: int,
    p: float,
    grid: DoseGrid,
    budget: int = 2**22,
    max_witnesses: int = 25,
) -> PropertyReport:
    """Exhaustively enumerate every outcome path (and, for randomized
    designs, every decision in the support) and flag group-incoherent moves:
    escalation after a cohort toxicity fraction >= p, or de-escalation after
    a fraction <= p.  With m=1 this is exactly subject-level coherence.
    """
    if n_cohorts < 1:
        raise ValueError("need at least one cohort")
    support_factor = 2 if design.randomized else 1
    estimated = ((m + 1) * support_factor) ** max(n_cohorts - 1, 0)
    if estimated > budget:
        raise BudgetExceededError(
            f"≈{estimated} paths exceed the budget of {budget}; lower the horizon"
        )

    design.validate_trial(grid, m)
    witnesses: list[Witness] = []
    counters = {"leaves": 0, "decision_nodes": 0, "transitions_checked": 0}
    path: list[tuple[float, ...]] = []

    def walk(state: TrialState) -> None:
        depth = state.n_cohorts
        counters["decision_nodes"] += 1
        if depth == 0:
            decisions = [design.initial_decision(grid, m)]
        else:
            decisions = design.decision_support(state)
        for decision in decisions:
            if depth >= 1 and decision.kind in ("escalate", "deescalate"):
                counters["transitions_checked"] += 1
                ybar = state.last.mean
                if _incoherent(ybar, p, decision.kind) and len(witnesses) < max_witnesses:
                    witnesses.append(
                        Witness(
                            outcomes=list(path),
                            transition={
                                "cohort": depth + 1,
                                "from_level": state.current_level,
                                "to_level": decision.next_level,
                                "kind": decision.kind,
                                "last_fraction": ybar,
                                "target_p": p,
                            },
                        )
                    )
            if decision.kind == "stop" or depth + 1 == n_cohorts:
                counters["leaves"] += 1
                continue
            for z in range(m + 1):
                outcomes = _outcome_tuple(z, m)
                state.record(decision.next_level, outcomes, decision.assigned_dose)
                path.append(outcomes)
                walk(state)
                path.pop()
                state.cohorts.pop()

    walk(TrialState(grid, m))
    witnesses.sort(key=lambda w: len(w.outcomes))  # shortest counterexample first
    verdict = "pass" if not witnesses else "fail"
    return PropertyReport(
        property="coherence",
        verdict=verdict,
        witnesses=witnesses,
        statistics=dict(counters, horizon=n_cohorts, m=m, target_p=p),
        notes="group coherence (subject-level when m=1), exhaustive over the path space",
    )


def replay_witness(design: Design, witness: Witness, grid: DoseGrid, m: int) -> bool:
    """Re-run the witness path through the engine and confirm the flagged
    transition is reproduced (within the decision support for randomized
    designs)."""
    state = TrialState(grid, m)
    decision = design.initial_decision(grid, m)
    for outcomes in witness.outcomes:
        state.record(decision.next_level, outcomes)
        support = design.decision_support(state)
        match = [
            d
            for d in support
            if d.kind == witness.transition["kind"]
            and d.next_level == witness.transition["to_level"]
        ]
        if state.n_cohorts == len(witness.outcomes):
            return bool(match) and state.current_level == witness.transition["from_level"]
        decision = support[0] if len(support) == 1 else match[0] if match else support[0]
    return False


# ---------------------------------------------------------------------------
# Rigidity: analytic certificate for the rounded recursion
# ---------------------------------------------------------------------------


def _dsa_absorbed(i: int, level: int, b: float, p: float, n_levels: int) -> bool:
    """True when no outcome can move the rounded recursion from this state at
    cohort index i (and hence at any later index)."""
    max_up = p / (i * b)
    max_down = (1.0 - p) / (i * b)
    can_up = level < n_levels and max_up >= 0.5 - _HALF_SNAP
    can_down = level > 1 and max_down > 0.5 + _HALF_SNAP
    return not can_up and not can_down


def certify_dsa_rigidity(
    b: float,
    p: float,
    n_levels: int,
    start: int = 1,
    m: int = 2,
) -> PropertyReport:
    """Analytic rigidity certificate for the grid-rounded recursion.

    The freeze index bounds the cohort from which every state is absorbing;
    a breadth-first search over reachable (cohort, level) states returns the
    shortest outcome path into an absorbing state as a witness.
    """
    freeze = dsa_freeze_index(b, p)
    grid_fracs = [z / m for z in range(m + 1)]
    start_state = (1, start)
    seen = {start_state}
    queue: deque[tuple[tuple[int, int], list[int]]] = deque([(start_state, [])])
    witness: Witness | None = None
    trajectory: list[int] | None = None
    while queue:
        (i, level), z_path = queue.popleft()
        if _dsa_absorbed(i, level, b, p, n_levels):
            outcomes = [_outcome_tuple(z, m) for z in z_path]
            levels = [start]
            st = start
            for step_i, z in enumerate(z_path, start=1):
                st = dsa_step(st, z / m, step_i, b, p, n_levels)
                levels.append(st)
            witness = Witness(
                outcomes=outcomes,
                transition={
                    "absorbed_level": level,
                    "absorbed_at_cohort": i,
                    "dose_trajectory": levels,
                },
            )
            trajectory = levels
            break
        if i > freeze + 1:  # unreachable: freeze guarantees absorption by then
            break
        for z, frac in enumerate(grid_fracs):
            nxt = (i + 1, dsa_step(level, frac, i, b, p, n_levels))
            if nxt not in seen:
                seen.add(nxt)
                queue.append((nxt, z_path + [z]))
    assert witness is not None, "freeze index guarantees an absorbing state"
    return PropertyReport(
        property="rigidity",
        verdict="fail",  # the design IS rigid: nonrigidity fails
        witnesses=[witness],
        statistics={
            "freeze_index": freeze,
            "absorbed_level": witness.transition["absorbed_level"],
            "absorbed_at_cohort": witness.transition["absorbed_at_cohort"],
            "dose_trajectory": trajectory,
            "b": b,
            "target_p": p,
        },
        notes=(
            "rounded recursion is provably frozen for every bounded outcome from "
            f"cohort {freeze}; witness reaches an absorbing state earlier"
        ),
    )


# ---------------------------------------------------------------------------
# Rigidity: bounded-horizon empirical detection
# ---------------------------------------------------------------------------


def _window_levels(scenario: ToxScenario, p_lo: float, p_hi: float) -> set[int]:
    return {
        k + 1 for k, prob in enumerate(scenario.probs) if p_lo <= prob <= p_hi
    }


def simulate_isotonic_batch(
    scenario: ToxScenario,
    m: int,
    target_p: float,
    horizon: int,
    reps: int,
    seed: int,
    start_level: int = 1,
) -> dict[str, np.ndarray]:
    """Vectorized lockstep simulation of the isotonic design.

    Isotonic estimates come from the weighted minimax formula
    max_{i<=k} min_{j>=k} of interval-pooled rates, which equals PAVA; a
    cross-check against the scalar engine lives in the test suite.  Returns
    the dose trajectories plus the first-visit toxicity trigger indicators
    for the level closest to the target.
    """
    rng = np.random.default_rng(seed)
    K = scenario.n_levels
    probs = np.asarray(scenario.probs)
    nu = int(np.argmin(np.round(np.abs(probs - target_p) * 1e12)) + 1)
    n = np.zeros((reps, K), dtype=np.int64)
    z = np.zeros((reps, K), dtype=np.int64)
    current = np.full(reps, start_level, dtype=np.int64)
    traj = np.zeros((reps, horizon), dtype=np.int64)
    visited_nu = np.zeros(reps, dtype=bool)
    trigger = np.zeros(reps, dtype=bool)
    rows = np.arange(reps)
    for t in range(horizon):
        traj[:, t] = current
        tox = rng.binomial(m, probs[current - 1])
        at_nu_first = (current == nu) & ~visited_nu
        trigger |= at_nu_first & (tox / m >= 0.5)
        visited_nu |= current == nu
        n[rows, current - 1] += m
        z[rows, current - 1] += tox
        if t == horizon - 1:
            break
        cn = np.concatenate([np.zeros((reps, 1)), np.cumsum(n, axis=1)], axis=1)
        cz = np.concatenate([np.zeros((reps, 1)), np.cumsum(z, axis=1)], axis=1)
        est = np.full((reps, K), np.nan)
        for k in range(K):
            best = np.full(reps, -np.inf)
            for i in range(k + 1):
                inner = np.full(reps, np.inf)
                for j in range(k, K):
                    den = cn[:, j + 1] - cn[:, i]
                    with np.errstate(invalid="ignore", divide="ignore"):
                        ratio = np.where(den > 0, (cz[:, j + 1] - cz[:, i]) / den, np.inf)
                    inner = np.minimum(inner, ratio)
                best = np.maximum(best, np.where(np.isinf(inner), -np.inf, inner))
            est[:, k] = np.where((n[:, k] > 0) & np.isfinite(best), best, np.nan)
        dist = np.abs(est - target_p)
        dist = np.where(np.isnan(dist), np.inf, dist)
        pick = np.argmin(np.round(dist * 1e12), axis=1)  # first index wins ties
        pick_est = est[rows, pick]
        next_unobserved = np.zeros(reps, dtype=bool)
        can_up = pick + 1 < K
        next_unobserved[can_up] = n[rows[can_up], pick[can_up] + 1] == 0
        escalate = (pick_est < target_p) & next_unobserved
        current = np.where(escalate, pick + 2, pick + 1).astype(np.int64)
    return {
        "trajectories": traj,
        "trigger": trigger,
        "visited_nu": visited_nu,
        "nu": np.int64(nu),
    }


def detect_rigidity_empirical(
    design: Design,
    scenario: ToxScenario,
    p_lo: float,
    p_hi: float,
    horizon: int,
    reps: int,
    seed: int,
    m: int = 2,
    threshold: float = 0.05,
) -> PropertyReport:
    """Estimate the probability that the trajectory sits outside the
    toxicity window I(p_lo, p_hi) at the horizon, with binomial standard
    errors, plus the first-visit trap statistics for the isotonic design.

    This is bounded-horizon evidence, not a proof: the verdict is "fail"
    (rigid) only when the exit probability is clearly above ``threshold``
    and not decaying between half and full horizon, "pass" when clearly
    below, otherwise "inconclusive".
    """
    window = _window_levels(scenario, p_lo, p_hi)
    if not window:
        raise ValueError("no level lies inside the probability window")
    half = max(horizon // 2, 1)
    statistics: dict[str, Any] = {
        "horizon": horizon,
        "reps": reps,
        "window_levels": sorted(window),
    }
    witness: Witness | None = None

    if isinstance(design, IsotonicDesign):
        batch = simulate_isotonic_batch(
            scenario, m, design.target_p, horizon, reps, seed,
            start_level=design.start_level,
        )
        traj = batch["trajectories"]
        outside_half = ~np.isin(traj[:, half - 1], sorted(window))
        outside_full = ~np.isin(traj[:, horizon - 1], sorted(window))
        nu = int(batch["nu"])
        confined = np.all(traj[:, min(2, horizon - 1):] == 1, axis=1)
        visited = batch["visited_nu"]
        statistics["confinement_prob"] = float(np.mean(confined))
        statistics["confinement_se"] = float(
            math.sqrt(max(statistics["confinement_prob"] * (1 - statistics["confinement_prob"]), 0.0) / reps)
        )
        n_visited = int(np.sum(visited))
        if n_visited:
            trig = float(np.sum(batch["trigger"]) / n_visited)
            statistics["trigger_prob"] = trig
            statistics["trigger_se"] = float(math.sqrt(max(trig * (1 - trig), 0.0) / n_visited))
            statistics["trigger_reps"] = n_visited
        trapped = np.flatnonzero(outside_full)
        if trapped.size:
            statistics["witness_rep"] = int(trapped[0])
    else:
        from .sim import run_trial  # local import: sim depends on engines only

        outside_half = np.zeros(reps, dtype=bool)
        outside_full = np.zeros(reps, dtype=bool)
        children = np.random.SeedSequence(seed).spawn(reps)
        first_outside: tuple[int, list[tuple[float, ...]]] | None = None
        for r in range(reps):
            traj = run_trial(design, scenario, horizon, m, seed=children[r])
            levels = traj.levels
            outside_half[r] = levels[min(half, len(levels)) - 1] not in window
            outside_full[r] = levels[-1] not in window
            if outside_full[r] and first_outside is None:
                first_outside = (r, [c.outcomes for c in traj.cohorts])
        if first_outside is not None:
            witness = Witness(
                outcomes=first_outside[1],
                transition={"replicate": first_outside[0], "horizon": horizon},
                seed=seed,
            )

    exit_half = float(np.mean(outside_half))
    exit_full = float(np.mean(outside_full))
    se_full = math.sqrt(max(exit_full * (1 - exit_full), 1e-12) / reps)
    se_half = math.sqrt(max(exit_half * (1 - exit_half), 1e-12) / reps)
    statistics.update(
        exit_prob=exit_full,
        exit_se=se_full,
        exit_prob_half_horizon=exit_half,
        exit_ci=[max(exit_full - 2 * se_full, 0.0), min(exit_full + 2 * se_full, 1.0)],
    )

    if isinstance(design, IsotonicDesign) and "witness_rep" in statistics:
        witness = Witness(
            outcomes=[],
            transition={
                "replicate": statistics["witness_rep"],
                "note": "replay simulate_isotonic_batch with this seed to regenerate",
            },
            seed=seed,
        )

    # headed-to-zero trend (consistent design), not a persistent trap: require
    # a substantial drop between half and full horizon, beyond Monte Carlo noise
    decaying = exit_full < 0.75 * exit_half - 2 * math.hypot(se_full, se_half)
    if exit_full - 2 * se_full > threshold and not decaying and witness is not None:
        verdict = "fail"
    elif exit_full + 2 * se_full < threshold:
        verdict = "pass"
    else:
        verdict = "inconclusive"
    return PropertyReport(
        property="rigidity",
        verdict=verdict,
        witnesses=[witness] if (witness and verdict == "fail") else [],
        statistics=statistics,
        notes="bounded-horizon Monte Carlo detection; not a proof of Property-2 rigidity",
    )


# ---------------------------------------------------------------------------
# Indifference interval (empirical)
# ---------------------------------------------------------------------------


def estimate_indifference(
    design: Design,
    scenarios: Sequence[ToxScenario],
    delta_grid: Sequence[float],
    n_long: int,
    reps: int,
    seed: int,
    m: int = 1,
    settle_at: int | None = None,
    epsilon: float = 0.01,
) -> PropertyReport:
    """Smallest grid half-width delta such that trajectories stay inside the
    toxicity window p +/- delta from the settle point through the long
    horizon in at least 1-epsilon of runs, pooled over the scenario family.

    The underlying criterion is asymptotic; this is a finite-horizon
    estimate and the report says so.
    """
    from .sim import run_trial

    p = design.target_p
    deltas = sorted(float(d) for d in delta_grid)
    settle = settle_at if settle_at is not None else max(n_long // 2, 1)
    stats: list[float] = []
    for s_idx, scenario in enumerate(scenarios):
        children = np.random.SeedSequence([seed, s_idx]).spawn(reps)
        probs = np.asarray(scenario.probs)
        for r in range(reps):
            traj = run_trial(design, scenario, n_long, m, seed=children[r])
            levels = np.asarray(traj.levels)[settle - 1:]
            stats.append(float(np.max(np.abs(probs[levels - 1] - p))))
    stats_arr = np.asarray(stats)
    fractions = {d: float(np.mean(stats_arr <= d + 1e-12)) for d in deltas}
    delta_hat = next(
        (d for d in deltas if fractions[d] >= 1.0 - epsilon and d < p), None
    )
    statistics = {
        "delta_grid": deltas,
        "inside_fractions": fractions,
        "settle_at": settle,
        "n_long": n_long,
        "reps_per_scenario": reps,
        "scenarios": len(scenarios),
        "epsilon": epsilon,
        "max_exceedance_quantile": float(np.quantile(stats_arr, 1.0 - epsilon)),
    }
    if delta_hat is None:
        return PropertyReport(
            property="indifference",
            verdict="inconclusive",
            statistics=statistics,
            notes="no grid half-width below the target qualified at this horizon",
        )
    statistics["delta_hat"] = delta_hat
    return PropertyReport(
        property="indifference",
        verdict="pass",
        statistics=statistics,
        notes="empirical finite-horizon estimate of an asymptotic criterion",
    )


# ---------------------------------------------------------------------------
# (Weak) unbiasedness probes
# ---------------------------------------------------------------------------


def _selection_estimate(
    design: Design,
    scenario: ToxScenario,
    k: int,
    n_cohorts: int,
    m: int,
    reps: int,
    seed_seq: np.random.SeedSequence,
) -> tuple[float, float]:
    from .sim import run_trial

    children = seed_seq.spawn(reps)
    hits = 0
    for r in range(reps):
        traj = run_trial(design, scenario, n_cohorts, m, seed=children[r])
        if len(traj.levels) >= n_cohorts:
            value = traj.levels[n_cohorts - 1]
        else:
            value = traj.final_recommendation
        hits += int(value == k)
    est = hits / reps
    return est, math.sqrt(max(est * (1 - est), 1e-12) / reps)


def probe_unbiasedness(
    design: Design,
    base: ToxScenario,
    k: int,
    perturbations: Sequence[dict],
    n_cohorts: int,
    m: int,
    reps: int,
    seed: int,
    mode: str = "perturbation",
) -> PropertyReport:
    """Monte Carlo probe of the selection-probability orderings.

    mode="perturbation": each perturbation is {"level": i, "prob": v},
    changing exactly one coordinate while preserving monotonicity; the
    estimated P(x_N = d_k) must move in the stated direction within 2
    combined standard errors.  The statistic is the dose at cohort N, or the
    final recommendation when the design stopped earlier.

    mode="weak": perturbations are full probability vectors ordered by
    increasing separation around the target dose k; the estimates must be
    nondecreasing within 2 SE.
    """
    if not 1 <= k <= base.n_levels:
        raise ValueError(f"level {k} outside the scenario")
    ss = np.random.SeedSequence(seed)
    base_est, base_se = _selection_estimate(design, base, k, n_cohorts, m, reps, ss)
    results: list[dict[str, Any]] = []
    witnesses: list[Witness] = []

    if mode == "weak":
        prev_est, prev_se, prev_label = base_est, base_se, "base"
        for idx, probs in enumerate(perturbations):
            scenario = ToxScenario(probs)
            est, se = _selection_estimate(
                design, scenario, k, n_cohorts, m, reps,
                np.random.SeedSequence([seed, idx + 1]),
            )
            ok = est >= prev_est - 2 * math.hypot(se, prev_se)
            results.append({"scenario": list(scenario.probs), "estimate": est, "se": se, "ok": ok})
            if not ok:
                witnesses.append(
                    Witness(
                        outcomes=[],
                        transition={
                            "mode": "weak",
                            "previous": prev_label,
                            "previous_estimate": prev_est,
                            "scenario": list(scenario.probs),
                            "estimate": est,
                        },
                        seed=seed,
                    )
                )
            prev_est, prev_se, prev_label = est, se, f"step {idx}"
    elif mode == "perturbation":
        for idx, pert in enumerate(perturbations):
            level = int(pert["level"])
            new_p = float(pert["prob"])
            if not 1 <= level <= base.n_levels:
                raise ValueError(f"perturbation level {level} outside the scenario")
            probs = list(base.probs)
            old_p = probs[level - 1]
            probs[level - 1] = new_p
            scenario = ToxScenario(probs)  # raises if monotonicity breaks
            est, se = _selection_estimate(
                design, scenario, k, n_cohorts, m, reps,
                np.random.SeedSequence([seed, idx + 1]),
            )
            tol = 2 * math.hypot(se, base_se)
            raised = new_p > old_p
            if level <= k:
                ok = est <= base_est + tol if raised else est >= base_est - tol
                direction = "nonincreasing in lower-or-equal levels"
            else:
                ok = est >= base_est - tol if raised else est <= base_est + tol
                direction = "nondecreasing in higher levels"
            results.append(
                {
                    "level": level,
                    "prob": new_p,
                    "estimate": est,
                    "se": se,
                    "expected": direction,
                    "ok": ok,
                }
            )
            if not ok:
                witnesses.append(
                    Witness(
                        outcomes=[],
                        transition={
                            "mode": "perturbation",
                            "level": level,
                            "prob": new_p,
                            "base_estimate": base_est,
                            "estimate": est,
                            "expected": direction,
                        },
                        seed=seed,
                    )
                )
    else:
        raise ValueError(f"unknown mode {mode!r}")

    verdict = "pass" if not witnesses else "fail"
    return PropertyReport(
        property="unbiasedness",
        verdict=verdict,
        witnesses=witnesses,
        statistics={
            "base_estimate": base_est,
            "base_se": base_se,
            "level": k,
            "comparisons": results,
            "reps": reps,
        },
        notes="Monte Carlo ordering check within 2 combined standard errors",
    )
