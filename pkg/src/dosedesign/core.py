"""Shared domain types and numeric primitives for discrete dose-finding.

The working dose scale is the integer level index 1..K; real-world schedule
tags are display metadata only (there is no natural continuous dosage scale
for multi-drug schedules).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np
from scipy import stats

__all__ = [
    "BracketError",
    "DoseGrid",
    "ToxScenario",
    "BiomarkerModel",
    "Cohort",
    "TrialState",
    "DoseDecision",
    "decision_from_move",
    "NormalNoise",
    "UniformNoise",
    "get_noise",
    "argmin_closest",
    "round_to_grid",
    "true_mtd",
    "continuous_root",
    "draw_binary_outcomes",
    "draw_biomarker_outcomes",
]

# Distances within this of the minimum count as ties; without the snap,
# binary-float noise (|0.1-0.2| != |0.3-0.2|) silently breaks tie rules.
_TIE_ATOL = 1e-12


class BracketError(ValueError):
    """Root bracket does not satisfy f(lo) <= target <= f(hi)."""


# ---------------------------------------------------------------------------
# Noise models for biomarker outcomes (standardized: mean 0, variance 1)
# ---------------------------------------------------------------------------


class NormalNoise:
    """Standard normal error distribution."""

    name = "normal"

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.standard_normal(size)

    def upper_quantile(self, p: float) -> float:
        """z_p such that P(eps > z_p) = p."""
        return float(stats.norm.ppf(1.0 - p))

    def pdf(self, x: float) -> float:
        return float(stats.norm.pdf(x))

    def expected_sd_ratio(self, m: int) -> float:
        """E(S/sigma) for the sample sd of m iid draws; exact for normal."""
        if m < 2:
            raise ValueError(f"sample sd needs m >= 2, got m={m}")
        return c4(m)


class UniformNoise:
    """Uniform on [-sqrt(3), sqrt(3)], standardized to unit variance.

    E(S/sigma) has no convenient closed form here, so it is estimated once
    per cohort size by a large seeded Monte Carlo run and cached together
    with its standard error.
    """

    name = "uniform"
    _MC_DRAWS = 10_000_000
    _MC_SEED = 20260810

    def __init__(self) -> None:
        self._sd_ratio_cache: dict[int, tuple[float, float]] = {}

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return (rng.random(size) * 2.0 - 1.0) * math.sqrt(3.0)

    def upper_quantile(self, p: float) -> float:
        return math.sqrt(3.0) * (1.0 - 2.0 * p)

    def pdf(self, x: float) -> float:
        return 1.0 / (2.0 * math.sqrt(3.0)) if abs(x) <= math.sqrt(3.0) else 0.0

    def expected_sd_ratio(self, m: int) -> float:
        value, _se = self.sd_ratio_with_error(m)
        return value

    def sd_ratio_with_error(self, m: int) -> tuple[float, float]:
        if m < 2:
            raise ValueError(f"sample sd needs m >= 2, got m={m}")
        if m not in self._sd_ratio_cache:
            rng = np.random.default_rng([self._MC_SEED, m])
            chunk = max(1, self._MC_DRAWS // m // 10)
            sums = 0.0
            sq_sums = 0.0
            count = 0
            for _ in range(10):
                s = np.std(self.sample(rng, chunk * m).reshape(chunk, m), axis=1, ddof=1)
                sums += float(np.sum(s))
                sq_sums += float(np.sum(s * s))
                count += chunk
            mean = sums / count
            var = sq_sums / count - mean * mean
            self._sd_ratio_cache[m] = (mean, math.sqrt(max(var, 0.0) / count))
        return self._sd_ratio_cache[m]


def c4(m: int) -> float:
    """E(S/sigma) for the sample sd of m iid normal draws."""
    if m < 2:
        raise ValueError(f"sample sd needs m >= 2, got m={m}")
    return math.sqrt(2.0 / (m - 1)) * math.exp(math.lgamma(m / 2.0) - math.lgamma((m - 1) / 2.0))


_NOISES: dict[str, Any] = {"normal": NormalNoise(), "uniform": UniformNoise()}


def get_noise(name: str):
    try:
        return _NOISES[name]
    except KeyError:
        raise ValueError(f"unknown noise model {name!r}; known: {sorted(_NOISES)}") from None


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DoseGrid:
    """Ordered panel of K dose levels; the working scale is the index 1..K."""

    n_levels: int
    tags: tuple[str, ...] | None = None  # display-only schedule labels

    def __post_init__(self) -> None:
        if self.n_levels < 2:
            raise ValueError(f"dose grid needs K >= 2 levels, got {self.n_levels}")
        if self.tags is not None and len(self.tags) != self.n_levels:
            raise ValueError("tags length must match n_levels")

    @property
    def levels(self) -> range:
        return range(1, self.n_levels + 1)


@dataclass(frozen=True)
class ToxScenario:
    """Ground-truth toxicity probabilities per level.

    Real scenarios are strictly increasing inside (0, 1); degenerate fixtures
    (all 0, all 1) are accepted for simulator edge-case tests, so validation
    only rejects decreasing or out-of-range values.
    """

    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if len(self.probs) < 2:
            raise ValueError("scenario needs at least 2 levels")
        for p in self.probs:
            if not 0.0 <= p <= 1.0 or math.isnan(p):
                raise ValueError(f"toxicity probability {p} outside [0, 1]")
        for lo, hi in zip(self.probs, self.probs[1:]):
            if hi < lo:
                raise ValueError("toxicity probabilities must be nondecreasing")

    @property
    def n_levels(self) -> int:
        return len(self.probs)

    def grid(self) -> DoseGrid:
        return DoseGrid(self.n_levels)


@dataclass(frozen=True)
class BiomarkerModel:
    """Location-scale ground truth Y = M(x) + sigma(x) * eps.

    ``mean`` must be strictly increasing and ``sd`` nonnegative and
    nondecreasing over the dose range used (callable preconditions; the
    config layer enforces them for its parametric forms).
    """

    mean: Callable[[float], float]
    sd: Callable[[float], float]
    t0: float
    p: float
    noise: str = "normal"

    def __post_init__(self) -> None:
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"target p must be in (0, 1), got {self.p}")
        get_noise(self.noise)

    @property
    def noise_model(self):
        return get_noise(self.noise)

    @property
    def z_p(self) -> float:
        return self.noise_model.upper_quantile(self.p)

    def objective(self, x: float) -> float:
        """f(x) = M(x) + z_p * sigma(x); the target dose solves f(x) = t0."""
        return float(self.mean(x)) + self.z_p * float(self.sd(x))

    def tox_prob(self, x: float) -> float:
        """P(Y > t0) at dose x."""
        s = float(self.sd(x))
        mu = float(self.mean(x))
        if s == 0.0:
            return 1.0 if mu > self.t0 else 0.0
        if self.noise == "normal":
            return float(stats.norm.sf((self.t0 - mu) / s))
        if self.noise == "uniform":
            return float(np.clip(0.5 - (self.t0 - mu) / s / (2 * math.sqrt(3.0)), 0.0, 1.0))
        raise ValueError(f"tox_prob not implemented for noise {self.noise!r}")

    def implied_scenario(self, n_levels: int) -> ToxScenario:
        return ToxScenario([self.tox_prob(float(k)) for k in range(1, n_levels + 1)])

    def theta(self, lo: float, hi: float, tol: float = 1e-10) -> float:
        """Continuous target dose: the root of f(x) = t0 on [lo, hi]."""
        return continuous_root(self.objective, self.t0, lo, hi, tol)


@dataclass(frozen=True)
class Cohort:
    """One treated group: the level given, the conceptual-scale assigned
    dose (equal to the level unless the design carries a continuous x*),
    and the m observed outcomes."""

    level: int
    outcomes: tuple[float, ...]
    assigned_dose: float | None = None

    @property
    def dose(self) -> float:
        return float(self.level) if self.assigned_dose is None else self.assigned_dose

    @property
    def tox_count(self) -> int:
        return int(sum(1 for y in self.outcomes if y == 1))

    @property
    def mean(self) -> float:
        return float(np.mean(self.outcomes))


class TrialState:
    """Append-only observation history plus opaque per-design carry state."""

    def __init__(self, grid: DoseGrid, m: int, carry: Any = None) -> None:
        if m < 1:
            raise ValueError(f"cohort size m must be >= 1, got {m}")
        self.grid = grid
        self.m = m
        self.cohorts: list[Cohort] = []
        self.carry = carry

    def record(
        self,
        level: int,
        outcomes: Sequence[float],
        assigned_dose: float | None = None,
    ) -> Cohort:
        if not 1 <= level <= self.grid.n_levels:
            raise ValueError(f"level {level} outside 1..{self.grid.n_levels}")
        values = tuple(float(y) for y in outcomes)
        if len(values) != self.m:
            raise ValueError(f"expected {self.m} outcomes, got {len(values)}")
        cohort = Cohort(level=level, outcomes=values, assigned_dose=assigned_dose)
        self.cohorts.append(cohort)
        return cohort

    @property
    def n_cohorts(self) -> int:
        return len(self.cohorts)

    @property
    def n_subjects(self) -> int:
        return len(self.cohorts) * self.m

    @property
    def last(self) -> Cohort | None:
        return self.cohorts[-1] if self.cohorts else None

    @property
    def current_level(self) -> int | None:
        return self.cohorts[-1].level if self.cohorts else None

    def level_counts(self) -> tuple[list[int], list[int]]:
        """Per-level (enrolled, toxicities) for binary outcome histories."""
        n = [0] * self.grid.n_levels
        z = [0] * self.grid.n_levels
        for c in self.cohorts:
            n[c.level - 1] += len(c.outcomes)
            z[c.level - 1] += c.tox_count
        return n, z


_KINDS = ("escalate", "stay", "deescalate", "stop")


@dataclass(frozen=True)
class DoseDecision:
    """Next-dose decision with an audit rationale.

    ``mtd_declared`` may only be set when kind == "stop"; a stop with
    mtd_declared=None is a "no MTD" verdict (de-escalation off the bottom
    of the grid).
    """

    next_level: int | None
    kind: str
    rationale: str = ""
    assigned_dose: float | None = None  # continuous x* for VO-style designs
    mtd_declared: int | None = None
    coherence_clamped: bool = False

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown decision kind {self.kind!r}")
        if self.kind == "stop":
            if self.next_level is not None:
                raise ValueError("stop decisions carry no next level")
        else:
            if self.next_level is None:
                raise ValueError(f"{self.kind} decision needs a next level")
            if self.mtd_declared is not None:
                raise ValueError("mtd_declared is only valid on stop decisions")

    @property
    def dose(self) -> float:
        if self.assigned_dose is not None:
            return self.assigned_dose
        if self.next_level is None:
            raise ValueError("stop decision has no dose")
        return float(self.next_level)

    def to_dict(self) -> dict:
        return {
            "next_level": self.next_level,
            "kind": self.kind,
            "rationale": self.rationale,
            "assigned_dose": self.assigned_dose,
            "mtd_declared": self.mtd_declared,
            "coherence_clamped": self.coherence_clamped,
        }


def decision_from_move(
    current: int | None,
    next_level: int,
    rationale: str = "",
    assigned_dose: float | None = None,
    coherence_clamped: bool = False,
) -> DoseDecision:
    """Build a decision whose kind is consistent with the move by construction."""
    if current is None or next_level == current:
        kind = "stay"
    elif next_level > current:
        kind = "escalate"
    else:
        kind = "deescalate"
    return DoseDecision(
        next_level=next_level,
        kind=kind,
        rationale=rationale,
        assigned_dose=assigned_dose,
        coherence_clamped=coherence_clamped,
    )


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def argmin_closest(values: Sequence[float], target: float) -> int:
    """1-based index of the value closest to target, ties to the lowest index."""
    best_idx = 0
    best = abs(float(values[0]) - target)
    for i, v in enumerate(values[1:], start=1):
        d = abs(float(v) - target)
        if d < best - _TIE_ATOL:
            best = d
            best_idx = i
    return best_idx + 1


def round_to_grid(x: float, n_levels: int) -> int:
    """Clamped half-up rounding of a conceptual dose onto levels 1..K.

    Values in [0.5, K+0.5) round half-up; anything below/above clamps to
    1/K.  Half-integers round up, which keeps rounding monotone and maps
    [0.5, K+0.5) exactly onto 1..K.
    """
    if n_levels < 2:
        raise ValueError(f"dose grid needs K >= 2 levels, got {n_levels}")
    if x < 0.5:
        return 1
    if x >= n_levels + 0.5:
        return n_levels
    return int(math.floor(x + 0.5))


def true_mtd(scenario: ToxScenario, p: float) -> int:
    """Level whose toxicity probability is closest to the target, ties low."""
    return argmin_closest(scenario.probs, p)


def continuous_root(
    f: Callable[[float], float],
    target: float,
    lo: float,
    hi: float,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> float:
    """Bisection root of a continuous increasing f on [lo, hi].

    Returns x with |f(x) - target| <= tol.
    """
    if not lo <= hi:
        raise BracketError(f"invalid interval [{lo}, {hi}]")
    f_lo = float(f(lo))
    f_hi = float(f(hi))
    if not (f_lo <= target <= f_hi):
        raise BracketError(
            f"bracket invalid: f({lo})={f_lo}, f({hi})={f_hi} do not straddle {target}"
        )
    if abs(f_lo - target) <= tol:
        return lo
    if abs(f_hi - target) <= tol:
        return hi
    a, b = lo, hi
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        f_mid = float(f(mid))
        if abs(f_mid - target) <= tol:
            return mid
        if f_mid < target:
            a = mid
        else:
            b = mid
    raise ArithmeticError(
        f"bisection did not reach |f(x) - target| <= {tol} in {max_iter} iterations"
    )


def draw_binary_outcomes(
    scenario: ToxScenario, level: int, m: int, rng: np.random.Generator
) -> np.ndarray:
    """m independent Bernoulli toxicity outcomes at the given level."""
    if not 1 <= level <= scenario.n_levels:
        raise ValueError(f"level {level} outside 1..{scenario.n_levels}")
    if m < 1:
        raise ValueError(f"need m >= 1 outcomes, got {m}")
    return rng.binomial(1, scenario.probs[level - 1], size=m)


def draw_biomarker_outcomes(
    model: BiomarkerModel, dose: float, m: int, rng: np.random.Generator
) -> np.ndarray:
    """m biomarker values Y = M(dose) + sigma(dose) * eps."""
    if m < 1:
        raise ValueError(f"need m >= 1 outcomes, got {m}")
    eps = model.noise_model.sample(rng, m)
    return float(model.mean(dose)) + float(model.sd(dose)) * eps
