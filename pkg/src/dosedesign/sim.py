"""Monte Carlo trial engine and metrics.

Replicates run on pre-split seed streams so every trajectory is replayable
bit-exactly from (design, truth, seed); aggregation is performed in
replicate order with exact summation, so reports are deterministic and
independent of worker scheduling.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .core import (
    BiomarkerModel,
    DoseGrid,
    ToxScenario,
    TrialState,
    draw_binary_outcomes,
    draw_biomarker_outcomes,
    true_mtd,
)
from .engines import Design
from .core import get_noise
from .sa import beta_tilde, rm_asymptotic_variance, v_o, v_t

__all__ = [
    "IncompatiblePairingError",
    "CohortRecord",
    "TrialTrajectory",
    "SimReport",
    "run_trial",
    "run_mc",
    "design_cost",
    "design_cost_continuous",
    "check_asymptotics",
    "AsymptoticsRecord",
    "simulate_rm_batch",
    "simulate_osa_batch",
    "simulate_logit_mle_batch",
    "simulate_vo_batch",
]


class IncompatiblePairingError(ValueError):
    """Design and ground truth cannot be simulated together."""


@dataclass(frozen=True)
class CohortRecord:
    index: int
    level: int
    assigned_dose: float
    outcomes: tuple[float, ...]
    decision_kind: str
    next_level: int | None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "level": self.level,
            "assigned_dose": self.assigned_dose,
            "outcomes": list(self.outcomes),
            "decision_kind": self.decision_kind,
            "next_level": self.next_level,
        }


@dataclass
class TrialTrajectory:
    design_kind: str
    seed: Any
    cohorts: list[CohortRecord]
    final_recommendation: int | None
    stopped: bool
    mtd_declared: int | None

    @property
    def levels(self) -> list[int]:
        return [c.level for c in self.cohorts]

    @property
    def n_subjects(self) -> int:
        return sum(len(c.outcomes) for c in self.cohorts)

    def to_dict(self) -> dict:
        return {
            "design": self.design_kind,
            "cohorts": [c.to_dict() for c in self.cohorts],
            "final_recommendation": self.final_recommendation,
            "stopped": self.stopped,
            "mtd_declared": self.mtd_declared,
        }


def _tox_indicator(truth, outcomes: Sequence[float]) -> int:
    if isinstance(truth, BiomarkerModel):
        return int(sum(1 for y in outcomes if y > truth.t0))
    return int(sum(1 for y in outcomes if y == 1))


def run_trial(
    design: Design,
    truth: ToxScenario | BiomarkerModel,
    n_cohorts: int,
    m: int,
    seed: int | np.random.SeedSequence,
    grid: DoseGrid | None = None,
) -> TrialTrajectory:
    """Simulate up to n_cohorts cohorts (or until the design stops),
    recording every decision."""
    if isinstance(truth, ToxScenario):
        if design.outcome_kind != "binary":
            raise IncompatiblePairingError(
                f"{design.kind} consumes biomarker outcomes; pair it with a biomarker truth"
            )
        grid = grid or truth.grid()
        if grid.n_levels != truth.n_levels:
            raise IncompatiblePairingError("grid size does not match scenario")
    elif isinstance(truth, BiomarkerModel):
        if design.outcome_kind != "biomarker":
            raise IncompatiblePairingError(
                f"{design.kind} consumes binary outcomes; pair it with a toxicity scenario"
            )
        if m < 2:
            raise IncompatiblePairingError("biomarker designs need cohorts of m >= 2")
        if grid is None:
            raise IncompatiblePairingError("biomarker truths need an explicit dose grid")
    else:
        raise IncompatiblePairingError(f"unsupported truth type {type(truth).__name__}")

    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    outcome_stream, design_stream = ss.spawn(2)
    outcome_rng = np.random.default_rng(outcome_stream)
    design_rng = np.random.default_rng(design_stream)

    state = TrialState(grid, m)
    decision = design.initial_decision(grid, m)
    records: list[CohortRecord] = []
    stopped = False
    mtd: int | None = None
    for i in range(1, n_cohorts + 1):
        level = decision.next_level
        dose = decision.assigned_dose if decision.assigned_dose is not None else float(level)
        if isinstance(truth, ToxScenario):
            outcomes = draw_binary_outcomes(truth, level, m, outcome_rng)
        else:
            outcomes = draw_biomarker_outcomes(truth, float(level), m, outcome_rng)
        state.record(level, outcomes, decision.assigned_dose)
        decision = design.decide(state, design_rng)
        records.append(
            CohortRecord(
                index=i,
                level=level,
                assigned_dose=dose,
                outcomes=tuple(float(y) for y in outcomes),
                decision_kind=decision.kind,
                next_level=decision.next_level,
            )
        )
        if decision.kind == "stop":
            stopped = True
            mtd = decision.mtd_declared
            break
    final = mtd if stopped else design.final_recommendation(state)
    return TrialTrajectory(
        design_kind=design.kind,
        seed=ss.entropy,
        cohorts=records,
        final_recommendation=final,
        stopped=stopped,
        mtd_declared=mtd,
    )


def design_cost(traj: TrialTrajectory, nu: int) -> float:
    """Cumulative squared level distance to the target dose."""
    return float(sum((c.level - nu) ** 2 for c in traj.cohorts))


def design_cost_continuous(doses: Sequence[float], theta: float) -> float:
    return float(sum((x - theta) ** 2 for x in doses))


@dataclass
class SimReport:
    design_kind: str
    reps: int
    n_cohorts: int
    m: int
    seed: int
    nu: int
    pcs: float
    pcs_se: float
    allocation: list[int]
    allocation_fraction: list[float]
    mean_toxicities: float
    mean_subjects: float
    cost_mean: float
    cost_sd: float
    stopped_fraction: float
    no_mtd_fraction: float
    per_rep: list[dict] = field(default_factory=list, repr=False)

    def to_dict(self, include_reps: bool = False) -> dict:
        out = {
            "design": self.design_kind,
            "reps": self.reps,
            "n_cohorts": self.n_cohorts,
            "m": self.m,
            "seed": self.seed,
            "nu": self.nu,
            "pcs": self.pcs,
            "pcs_se": self.pcs_se,
            "allocation": self.allocation,
            "allocation_fraction": self.allocation_fraction,
            "mean_toxicities": self.mean_toxicities,
            "mean_subjects": self.mean_subjects,
            "cost_mean": self.cost_mean,
            "cost_sd": self.cost_sd,
            "stopped_fraction": self.stopped_fraction,
            "no_mtd_fraction": self.no_mtd_fraction,
        }
        if include_reps:
            out["replicates"] = self.per_rep
        return out


def _run_replicate(args) -> dict:
    design, truth, n_cohorts, m, seed_seq, grid, nu = args
    traj = run_trial(design, truth, n_cohorts, m, seed_seq, grid)
    alloc = [0] * (grid.n_levels if grid else truth.n_levels)
    tox = 0
    for c in traj.cohorts:
        alloc[c.level - 1] += len(c.outcomes)
        tox += _tox_indicator(truth, c.outcomes)
    return {
        "recommendation": traj.final_recommendation,
        "correct": int(traj.final_recommendation == nu),
        "allocation": alloc,
        "toxicities": tox,
        "subjects": traj.n_subjects,
        "cost": design_cost(traj, nu),
        "stopped": int(traj.stopped),
        "no_mtd": int(traj.stopped and traj.mtd_declared is None),
    }


def run_mc(
    design: Design,
    truth: ToxScenario | BiomarkerModel,
    n_cohorts: int,
    m: int,
    reps: int,
    seed: int,
    grid: DoseGrid | None = None,
    target_p: float | None = None,
    threads: int = 1,
    keep_replicates: bool = False,
) -> SimReport:
    """Independent replicates on spawned seed streams, aggregated with
    exact sums in replicate order (deterministic for any thread count)."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if isinstance(truth, ToxScenario):
        grid = grid or truth.grid()
        p = target_p if target_p is not None else design.target_p
        nu = true_mtd(truth, p)
    else:
        if grid is None:
            raise IncompatiblePairingError("biomarker truths need an explicit dose grid")
        p = target_p if target_p is not None else design.target_p
        nu = true_mtd(truth.implied_scenario(grid.n_levels), p)

    children = np.random.SeedSequence(seed).spawn(reps)
    jobs = [(design, truth, n_cohorts, m, children[r], grid, nu) for r in range(reps)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_replicate, jobs, chunksize=max(1, reps // (4 * threads))))
    else:
        results = [_run_replicate(j) for j in jobs]

    correct = [r["correct"] for r in results]
    pcs = math.fsum(correct) / reps
    alloc = [int(sum(r["allocation"][k] for r in results)) for k in range(grid.n_levels)]
    total_subjects = math.fsum(r["subjects"] for r in results)
    costs = [r["cost"] for r in results]
    cost_mean = math.fsum(costs) / reps
    cost_sd = math.sqrt(max(math.fsum((c - cost_mean) ** 2 for c in costs) / max(reps - 1, 1), 0.0))
    return SimReport(
        design_kind=design.kind,
        reps=reps,
        n_cohorts=n_cohorts,
        m=m,
        seed=seed,
        nu=nu,
        pcs=pcs,
        pcs_se=math.sqrt(max(pcs * (1 - pcs), 1e-12) / reps),
        allocation=alloc,
        allocation_fraction=[a / total_subjects if total_subjects else 0.0 for a in alloc],
        mean_toxicities=math.fsum(r["toxicities"] for r in results) / reps,
        mean_subjects=total_subjects / reps,
        cost_mean=cost_mean,
        cost_sd=cost_sd,
        stopped_fraction=math.fsum(r["stopped"] for r in results) / reps,
        no_mtd_fraction=math.fsum(r["no_mtd"] for r in results) / reps,
        per_rep=results if keep_replicates else [],
    )


# ---------------------------------------------------------------------------
# Vectorized recursion simulators (lockstep across replicates)
# ---------------------------------------------------------------------------


def simulate_rm_batch(
    n: int,
    reps: int,
    seed: int,
    theta: float,
    beta: float,
    sigma: float,
    b: float,
    alpha: float = 0.0,
    x1: float | None = None,
) -> np.ndarray:
    """Plain recursion on a linear regression truth; returns the estimate
    after n observations for each replicate."""
    rng = np.random.default_rng(seed)
    x = np.full(reps, theta if x1 is None else x1, dtype=float)
    for i in range(1, n + 1):
        y = alpha + beta * (x - theta) + sigma * rng.standard_normal(reps)
        x -= (y - alpha) / (i * b)
    return x


def simulate_osa_batch(
    n: int,
    reps: int,
    seed: int,
    theta: float,
    slope: float,
    sigma0: float,
    m: int,
    p: float,
    b: float,
    x1: float | None = None,
) -> np.ndarray:
    """O-statistic recursion on the location-scale truth M(x) = slope*x,
    sigma(x) = sigma0, normal noise; returns the estimate after n cohorts."""
    noise = get_noise("normal")
    z_p = noise.upper_quantile(p)
    c4m = noise.expected_sd_ratio(m)
    t0 = slope * theta + z_p * sigma0
    rng = np.random.default_rng(seed)
    x = np.full(reps, theta if x1 is None else x1, dtype=float)
    for i in range(1, n + 1):
        draws = slope * x[:, None] + sigma0 * rng.standard_normal((reps, m))
        ybar = draws.mean(axis=1)
        s = draws.std(axis=1, ddof=1)
        o = ybar + z_p * s / c4m
        x -= (o - t0) / (i * b)
    return x


def simulate_logit_mle_batch(
    n: int,
    reps: int,
    seed: int,
    theta: float,
    slope: float,
    sigma0: float,
    m: int,
    p: float,
    b_tilde: float,
    x1: float | None = None,
    newton_tol: float = 1e-8,
) -> np.ndarray:
    """Maximum-likelihood recursion on dichotomized outcomes from the same
    location-scale truth (T = 1{Y > t0}, so pi(x) = Phi((slope*x - t0)/sigma0)).

    ``b_tilde`` is the working curve's slope AT the root, the quantity the
    closed-form variance is stated in; the logistic rate parameter is
    b_tilde/(p(1-p)) so that dF/dx at F=p equals b_tilde.

    Re-solving the estimating equation each cohort is O(history), so the
    root is found by a warm-started, bracket-safeguarded Newton iteration
    restricted to the not-yet-converged replicates, with the per-cohort
    exponentials cached; a test pins single-replicate trajectories to the
    scalar bisection operation.  Until both outcome kinds appear the update
    falls back to a plain recursion step, which a.s. ends after finitely
    many cohorts and does not affect the asymptotics.
    """
    from scipy import stats

    noise = get_noise("normal")
    z_p = noise.upper_quantile(p)
    t0 = slope * theta + z_p * sigma0
    rate = b_tilde / (p * (1.0 - p))
    rng = np.random.default_rng(seed)
    q_over_p = (1.0 - p) / p
    x = np.full(reps, theta if x1 is None else x1, dtype=float)
    # history cache in float32: the root tolerance is far above float32
    # noise and this loop is memory-bandwidth bound; exponentials are
    # centered at the start dose and capped where F saturates to zero
    x_ref = float(x[0])
    cj = np.empty((reps, n), dtype=np.float32)
    work = np.empty((reps, n), dtype=np.float32)
    sum_t = np.zeros(reps)
    lo_edge = x_ref - 60.0
    hi_edge = x_ref + 60.0
    for i in range(1, n + 1):
        pi = stats.norm.sf((t0 - slope * x) / sigma0)
        tbar = rng.binomial(m, pi) / m
        sum_t += tbar
        cj[:, i - 1] = q_over_p * np.exp(-rate * (x - x_ref))
        estimable = (sum_t > 1e-12) & (sum_t < i - 1e-12)
        fallback = x - (tbar - p) / (i * b_tilde)
        th = np.clip(x, lo_edge + 1e-9, hi_edge - 1e-9)
        if estimable.any():
            blo = np.full(reps, lo_edge)
            bhi = np.full(reps, hi_edge)
            active = estimable.copy()
            for _ in range(200):
                idx = np.flatnonzero(active)
                if idx.size == 0:
                    break
                f = work[: idx.size, :i]
                with np.errstate(over="ignore"):  # inf saturates F to 0 exactly
                    np.multiply(
                        cj[idx, :i],
                        np.exp(
                            np.minimum(rate * (th[idx] - x_ref), 85.0)
                        ).astype(np.float32)[:, None],
                        out=f,
                    )
                f += 1.0
                np.reciprocal(f, out=f)
                s1 = f.sum(axis=1, dtype=np.float64)
                np.multiply(f, f, out=f)
                s2 = f.sum(axis=1, dtype=np.float64)
                g = sum_t[idx] - s1
                gp = rate * (s1 - s2)
                blo[idx] = np.where(g < 0.0, th[idx], blo[idx])
                bhi[idx] = np.where(g > 0.0, th[idx], bhi[idx])
                nxt = th[idx] - g / np.maximum(gp, 1e-300)
                outside = (nxt <= blo[idx]) | (nxt >= bhi[idx])
                nxt = np.where(outside, 0.5 * (blo[idx] + bhi[idx]), nxt)
                active[idx] = np.abs(nxt - th[idx]) >= newton_tol
                th[idx] = nxt
        x = np.where(estimable, th, fallback)
    return x


def simulate_vo_batch(
    n: int,
    reps: int,
    seed: int,
    model_slope: float,
    sigma0: float,
    t0: float,
    p: float,
    b: float,
    n_levels: int,
    m: int = 2,
    start_level: int = 1,
) -> dict[str, np.ndarray]:
    """Virtual-observation recursion on the location-scale truth, lockstep
    across replicates; returns conceptual doses, given-dose trajectories and
    the final recommendation C(x*_{n+1})."""
    noise = get_noise("normal")
    z_p = noise.upper_quantile(p)
    c4m = noise.expected_sd_ratio(m)
    rng = np.random.default_rng(seed)
    x_star = np.full(reps, float(start_level))
    given = np.full(reps, start_level, dtype=np.int64)
    traj = np.zeros((reps, n), dtype=np.int64)
    for i in range(1, n + 1):
        traj[:, i - 1] = given
        draws = model_slope * given[:, None] + sigma0 * rng.standard_normal((reps, m))
        ybar = draws.mean(axis=1)
        s = draws.std(axis=1, ddof=1)
        o = ybar + z_p * s / c4m
        v = o + b * (x_star - given)
        x_star = x_star - (v - t0) / (i * b)
        given = np.clip(np.floor(x_star + 0.5), 1, n_levels).astype(np.int64)
    return {
        "x_star": x_star,
        "trajectories": traj,
        "recommendation": given,
    }


# ---------------------------------------------------------------------------
# Asymptotic-variance validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AsymptoticsRecord:
    recursion: str
    n: int
    reps: int
    empirical_var: float
    predicted_var: float

    @property
    def ratio(self) -> float:
        return self.empirical_var / self.predicted_var

    def to_dict(self) -> dict:
        return {
            "recursion": self.recursion,
            "n": self.n,
            "reps": self.reps,
            "empirical_var": self.empirical_var,
            "predicted_var": self.predicted_var,
            "ratio": self.ratio,
        }


def check_asymptotics(
    recursion: str,
    n: int,
    reps: int,
    seed: int,
    theta: float = 2.0,
    beta: float = 1.0,
    sigma: float = 0.5,
    m: int = 3,
    p: float = 0.12,
    b: float | None = None,
) -> AsymptoticsRecord:
    """Empirical variance of sqrt(n)(x_n - theta) against the closed form.

    recursion "rm": plain recursion, linear truth, predicted
    sigma^2/(b(2 beta - b)).  "osa": O-statistic recursion on the
    location-scale truth.  "logit_mle": dichotomized-data MLE recursion; the
    gain defaults to the optimal beta-tilde and the prediction is the
    p(1-p)/(m b~(2 beta~ - b~)) form.
    """
    if recursion == "rm":
        gain = beta if b is None else b
        predicted = rm_asymptotic_variance(sigma, gain, beta)
        x = simulate_rm_batch(n, reps, seed, theta=theta, beta=beta, sigma=sigma, b=gain)
    elif recursion == "osa":
        gain = beta if b is None else b
        z_p = get_noise("normal").upper_quantile(p)
        predicted = v_o(sigma, m, z_p, gain, beta)
        x = simulate_osa_batch(
            n, reps, seed, theta=theta, slope=beta, sigma0=sigma, m=m, p=p, b=gain
        )
    elif recursion == "logit_mle":
        z_p = get_noise("normal").upper_quantile(p)
        bt = beta_tilde(beta, sigma, z_p)
        gain = bt if b is None else b
        predicted = v_t(p, m, gain, bt)
        x = simulate_logit_mle_batch(
            n, reps, seed, theta=theta, slope=beta, sigma0=sigma, m=m, p=p, b_tilde=gain
        )
    else:
        raise ValueError(f"unknown recursion {recursion!r}")
    scaled = math.sqrt(n) * (x - theta)
    empirical = float(np.var(scaled, ddof=1))
    return AsymptoticsRecord(
        recursion=recursion,
        n=n,
        reps=reps,
        empirical_var=empirical,
        predicted_var=float(predicted),
    )
