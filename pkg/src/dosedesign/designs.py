"""Algorithmic and model-based discrete-dose design operations.

Pure step functions: given the accumulated history they return the next-dose
decision.  The engine classes in :mod:`dosedesign.engines` wrap these for the
simulator, the property checker, and the conduct service.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate, optimize

from .core import (
    DoseDecision,
    DoseGrid,
    TrialState,
    argmin_closest,
    decision_from_move,
)

__all__ = [
    "DesignStateError",
    "NotEstimableError",
    "CrmNumericalError",
    "WorkingModel",
    "CrmPrior",
    "DoseToxTable",
    "three_plus_three_step",
    "biased_coin_step",
    "crm_posterior_mean",
    "crm_next_dose",
    "crm_mle_estimate",
    "likelihood_crm_update",
    "logit_mle_update",
    "pava_isotonic",
    "isotonic_next_dose",
]


class DesignStateError(RuntimeError):
    """The design was asked to decide from a state its rules do not define."""


class NotEstimableError(RuntimeError):
    """The likelihood has no interior maximizer / the estimating equation has
    no root (e.g. all outcomes nontoxic); callers fall back to a start-up rule."""


class CrmNumericalError(ArithmeticError):
    """Posterior normalizing integral underflowed even after log-scale shifting."""


# ---------------------------------------------------------------------------
# Working models and priors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WorkingModel:
    """One-parameter dose-toxicity working model.

    form "logistic": F(x, theta) = p e^{b(x-theta)} / (1 - p + p e^{b(x-theta)})
    with fixed slope b > 0, so F(theta, theta) = p and the parameter is the
    continuous target dose itself.

    form "empiric": F(d_k, phi) = skeleton_k ** exp(phi), requiring a strictly
    increasing skeleton of prior toxicity guesses in (0, 1).
    """

    form: str = "logistic"
    target_p: float = 0.2
    slope: float = 1.0
    skeleton: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.form not in ("logistic", "empiric"):
            raise ValueError(f"unknown working model form {self.form!r}")
        if not 0.0 < self.target_p < 1.0:
            raise ValueError(f"target_p must be in (0, 1), got {self.target_p}")
        if self.slope <= 0.0:
            raise ValueError(f"slope must be positive, got {self.slope}")
        if self.form == "empiric":
            if self.skeleton is None:
                raise ValueError("empiric model requires a skeleton")
            object.__setattr__(self, "skeleton", tuple(float(s) for s in self.skeleton))
            for s in self.skeleton:
                if not 0.0 < s < 1.0:
                    raise ValueError(f"skeleton value {s} outside (0, 1)")
            for lo, hi in zip(self.skeleton, self.skeleton[1:]):
                if hi <= lo:
                    raise ValueError("skeleton must be strictly increasing")

    def prob(self, dose: float, param: float) -> float:
        """F(dose, param)."""
        if self.form == "logistic":
            t = self.slope * (dose - param)
            p = self.target_p
            # p / (p + (1-p) e^{-t}) is stable for large |t|
            if t < -700.0:
                return 0.0
            if t > 700.0:
                return 1.0
            return p / (p + (1.0 - p) * math.exp(-t))
        k = int(round(dose))
        if self.skeleton is None or not 1 <= k <= len(self.skeleton):
            raise ValueError(f"dose {dose} outside skeleton range")
        power = math.exp(min(param, 700.0))
        return self.skeleton[k - 1] ** power

    def prob_levels(self, n_levels: int, param: float) -> list[float]:
        return [self.prob(float(k), param) for k in range(1, n_levels + 1)]


@dataclass(frozen=True)
class CrmPrior:
    """Prior on the working-model parameter."""

    mean: float = 0.0
    sd: float = 1.34
    family: str = "normal"

    def __post_init__(self) -> None:
        if self.sd <= 0.0:
            raise ValueError(f"prior sd must be positive, got {self.sd}")
        if self.family != "normal":
            raise ValueError(f"unsupported prior family {self.family!r}")

    def logpdf(self, x: float) -> float:
        z = (x - self.mean) / self.sd
        return -0.5 * z * z - math.log(self.sd) - 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class DoseToxTable:
    """Per-level cumulative (enrolled, toxicity) counts."""

    n: tuple[int, ...]
    z: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.n) != len(self.z):
            raise ValueError("n and z must have equal length")
        for nk, zk in zip(self.n, self.z):
            if nk < 0 or zk < 0 or zk > nk:
                raise ValueError(f"invalid counts n={nk}, z={zk}")

    @classmethod
    def from_state(cls, state: TrialState) -> "DoseToxTable":
        n, z = state.level_counts()
        return cls(tuple(n), tuple(z))

    @property
    def n_levels(self) -> int:
        return len(self.n)

    def observed_levels(self) -> list[int]:
        return [k + 1 for k, nk in enumerate(self.n) if nk > 0]


# ---------------------------------------------------------------------------
# 3+3 and biased coin
# ---------------------------------------------------------------------------


def three_plus_three_step(table: DoseToxTable, current: int, n_levels: int) -> DoseDecision:
    """Classic cohort-of-three escalation rules on cumulative counts.

    Escalate when z/n < 0.33 (exact rational comparison, so 1/3 does not
    escalate), stay when z == 1 of 3, otherwise de-escalate -- which stops
    the trial and declares the next lower dose the MTD.  Boundary handling:
    escalation at the top level stays there; de-escalation at level 1 stops
    with no MTD.
    """
    if not 1 <= current <= n_levels:
        raise ValueError(f"level {current} outside 1..{n_levels}")
    n_k = table.n[current - 1]
    z_k = table.z[current - 1]
    if n_k < 3 or n_k % 3 != 0:
        raise DesignStateError(
            f"3+3 decisions need cumulative cohorts of 3 at the current dose, got n={n_k}"
        )
    counts = f"{z_k}/{n_k} toxicities at level {current}"
    if 100 * z_k < 33 * n_k:
        if current == n_levels:
            return DoseDecision(
                next_level=current,
                kind="stay",
                rationale=f"{counts}: escalation indicated but already at top level",
            )
        return DoseDecision(
            next_level=current + 1, kind="escalate", rationale=f"{counts}: escalate"
        )
    if z_k == 1 and n_k == 3:
        return DoseDecision(
            next_level=current, kind="stay", rationale=f"{counts}: enroll three more"
        )
    if z_k >= 2:
        if current == 1:
            return DoseDecision(
                next_level=None,
                kind="stop",
                rationale=f"{counts}: de-escalation off the grid, no MTD",
                mtd_declared=None,
            )
        return DoseDecision(
            next_level=None,
            kind="stop",
            rationale=f"{counts}: de-escalate; MTD declared at level {current - 1}",
            mtd_declared=current - 1,
        )
    raise DesignStateError(f"3+3 rules undefined for state {counts}")


def biased_coin_step(
    last_outcome: int,
    current: int,
    p: float,
    rng: np.random.Generator,
    n_levels: int,
) -> DoseDecision:
    """Up-and-down move: de-escalate on toxicity, otherwise escalate with
    probability p/(1-p), clamped at the grid edges."""
    if not 0.0 < p < 0.5:
        raise ValueError(f"biased coin requires target p in (0, 0.5), got {p}")
    if last_outcome not in (0, 1):
        raise ValueError(f"binary outcome expected, got {last_outcome}")
    if last_outcome == 1:
        nxt = max(current - 1, 1)
        return decision_from_move(current, nxt, rationale="toxicity: step down")
    if rng.random() < p / (1.0 - p):
        nxt = min(current + 1, n_levels)
        return decision_from_move(
            current, nxt, rationale=f"no toxicity: coin (prob {p/(1-p):.4g}) escalates"
        )
    return decision_from_move(current, current, rationale="no toxicity: coin stays")


# ---------------------------------------------------------------------------
# CRM (Bayesian and likelihood variants)
# ---------------------------------------------------------------------------


def _binomial_loglik(table: DoseToxTable, model: WorkingModel, param: float) -> float:
    ll = 0.0
    for k, (nk, zk) in enumerate(zip(table.n, table.z), start=1):
        if nk == 0:
            continue
        f = model.prob(float(k), param)
        if zk > 0:
            if f <= 0.0:
                return -math.inf
            ll += zk * math.log(f)
        if nk - zk > 0:
            if f >= 1.0:
                return -math.inf
            ll += (nk - zk) * math.log(1.0 - f)
    return ll


def _as_table(history: TrialState | DoseToxTable, n_levels: int | None = None) -> DoseToxTable:
    if isinstance(history, DoseToxTable):
        return history
    table = DoseToxTable.from_state(history)
    if n_levels is not None and table.n_levels != n_levels:
        raise ValueError("history grid size does not match model")
    return table


def crm_posterior_mean(
    history: TrialState | DoseToxTable,
    prior: CrmPrior,
    model: WorkingModel,
) -> float:
    """Posterior mean of the working-model parameter under a binomial
    likelihood, by deterministic quadrature on [mean - 10 sd, mean + 10 sd].

    The integrand is exponentiated in shifted log space, so the normalizer
    cannot underflow unless the likelihood is -inf everywhere on the range.
    """
    table = _as_table(history)
    if sum(table.n) == 0:
        return prior.mean
    lo = prior.mean - 10.0 * prior.sd
    hi = prior.mean + 10.0 * prior.sd

    def logpost(x: float) -> float:
        return _binomial_loglik(table, model, x) + prior.logpdf(x)

    grid = np.linspace(lo, hi, 257)
    shift = max(logpost(float(x)) for x in grid)
    if not math.isfinite(shift):
        raise CrmNumericalError(
            "posterior mass vanished on the prior range even in log scale"
        )

    def weight(x: float) -> float:
        return math.exp(logpost(x) - shift)

    norm, _ = integrate.quad(weight, lo, hi, epsabs=0.0, epsrel=1e-9, limit=200)
    if norm <= 0.0 or not math.isfinite(norm):
        raise CrmNumericalError("posterior normalizing integral underflowed")
    num, _ = integrate.quad(lambda x: x * weight(x), lo, hi, epsabs=0.0, epsrel=1e-9, limit=200)
    return num / norm


def crm_next_dose(phi_hat: float, model: WorkingModel, grid: DoseGrid, p: float) -> int:
    """Level whose modeled toxicity is closest to the target, ties low."""
    return argmin_closest(model.prob_levels(grid.n_levels, phi_hat), p)


def crm_mle_estimate(
    history: TrialState | DoseToxTable,
    model: WorkingModel,
    n_levels: int,
) -> float:
    """Binomial MLE of the working-model parameter by bounded 1-D search.

    Raises NotEstimableError while the data contain no toxicity or no
    non-toxicity (monotone likelihood, no interior MLE).
    """
    table = _as_table(history, n_levels)
    total_n = sum(table.n)
    total_z = sum(table.z)
    if total_z == 0 or total_z == total_n or total_n == 0:
        raise NotEstimableError(
            f"MLE needs both outcome kinds; saw {total_z} toxicities of {total_n}"
        )
    span = 30.0 / model.slope if model.form == "logistic" else 15.0
    center = (n_levels + 1) / 2.0 if model.form == "logistic" else 0.0
    result = optimize.minimize_scalar(
        lambda x: -_binomial_loglik(table, model, x),
        bounds=(center - span, center + span),
        method="bounded",
        options={"xatol": 1e-9},
    )
    if not result.success:
        raise NotEstimableError(f"likelihood maximization failed: {result.message}")
    return float(result.x)


def likelihood_crm_update(
    history: TrialState | DoseToxTable,
    model: WorkingModel,
    p: float,
    grid: DoseGrid,
) -> int:
    """Maximum-likelihood CRM step: 1-D likelihood maximization in the model
    parameter, then the closest-to-target level."""
    return crm_next_dose(
        crm_mle_estimate(history, model, grid.n_levels), model, grid, p
    )


# ---------------------------------------------------------------------------
# Logit-MLE recursion (continuous dose scale)
# ---------------------------------------------------------------------------


def logit_mle_update(
    doses: Sequence[float],
    tox_fractions: Sequence[float],
    model: WorkingModel,
    tol: float = 1e-8,
) -> float:
    """Root of sum_j {tox_fraction_j - F(dose_j, theta)} = 0 in theta.

    The sum is strictly increasing in theta under the logistic working model,
    so the root is unique; it is bracketed by expansion and found by
    bisection to ``tol`` on theta.
    """
    if model.form != "logistic":
        raise ValueError("logit-MLE requires the logistic working model")
    xs = [float(x) for x in doses]
    ts = [float(t) for t in tox_fractions]
    if len(xs) != len(ts) or not xs:
        raise ValueError("doses and tox_fractions must be equal-length and nonempty")
    total = sum(ts)
    if total <= 1e-12 or total >= len(ts) - 1e-12:
        raise NotEstimableError(
            "estimating equation has no root: all cohort toxicity fractions are 0 or 1"
        )

    def g(theta: float) -> float:
        return total - sum(model.prob(x, theta) for x in xs)

    lo = min(xs) - 1.0
    hi = max(xs) + 1.0
    for _ in range(200):
        if g(lo) < 0.0:
            break
        lo -= (hi - lo)
    else:
        raise NotEstimableError("failed to bracket the estimating equation root")
    for _ in range(200):
        if g(hi) > 0.0:
            break
        hi += (hi - lo)
    else:
        raise NotEstimableError("failed to bracket the estimating equation root")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if g(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Isotonic (nonparametric) estimation
# ---------------------------------------------------------------------------


def pava_isotonic(table: DoseToxTable) -> list[float | None]:
    """Weighted pool-adjacent-violators estimates of per-level toxicity.

    Levels with no enrollment carry no estimate (None).  Weights are the
    per-level sample sizes.
    """
    observed = table.observed_levels()
    if not observed:
        raise ValueError("PAVA needs at least one observed level")
    # blocks of (value, weight, member count), pooled left-to-right
    values: list[float] = []
    weights: list[float] = []
    counts: list[int] = []
    for k in observed:
        values.append(table.z[k - 1] / table.n[k - 1])
        weights.append(float(table.n[k - 1]))
        counts.append(1)
        while len(values) > 1 and values[-2] > values[-1]:
            v = (values[-2] * weights[-2] + values[-1] * weights[-1]) / (
                weights[-2] + weights[-1]
            )
            w = weights[-2] + weights[-1]
            c = counts[-2] + counts[-1]
            values[-2:] = [v]
            weights[-2:] = [w]
            counts[-2:] = [c]
    estimates: list[float | None] = [None] * table.n_levels
    idx = 0
    for v, c in zip(values, counts):
        for _ in range(c):
            estimates[observed[idx] - 1] = v
            idx += 1
    return estimates


def isotonic_next_dose(estimates: Sequence[float | None], p: float, current: int) -> int:
    """Closest estimated level to the target; unestimated levels are
    excluded; ties go to the lower level.  With no estimates at all the
    trial stays where it is."""
    candidates = [(k + 1, v) for k, v in enumerate(estimates) if v is not None]
    if not candidates:
        return current
    best_level, best = candidates[0][0], abs(candidates[0][1] - p)
    for level, v in candidates[1:]:
        d = abs(v - p)
        if d < best - 1e-12:
            best = d
            best_level = level
    return best_level
