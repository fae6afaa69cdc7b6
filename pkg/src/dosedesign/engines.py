"""Design engines: a uniform decide-next-dose interface over the catalog.

Every engine is a pure function of the trial history (plus an explicit RNG
for randomized rules), so replaying an outcome sequence reproduces the
decision sequence bit-exactly.  The simulator, the property checker, the CLI
and the conduct service all consume this interface.
"""
from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Any, ClassVar

import numpy as np

from . import designs, sa
from .core import (
    DoseDecision,
    DoseGrid,
    TrialState,
    decision_from_move,
    get_noise,
)
from .designs import CrmPrior, DoseToxTable, NotEstimableError, WorkingModel

__all__ = [
    "Param",
    "Design",
    "ThreePlusThreeDesign",
    "BiasedCoinDesign",
    "CrmDesign",
    "LikelihoodCrmDesign",
    "IsotonicDesign",
    "DsaDesign",
    "VirtualObservationDesign",
    "CoherenceGuard",
    "DESIGN_KINDS",
    "build_design",
    "design_catalog",
]


@dataclass(frozen=True)
class Param:
    """One configurable design parameter; the single source of truth for the
    JSON schema, the CLI help text, and the conduct catalog endpoint."""

    name: str
    type: str  # "number" | "integer" | "boolean" | "array" | "string"
    description: str
    default: Any = None
    required: bool = False
    minimum: float | None = None
    exclusive_minimum: float | None = None
    maximum: float | None = None
    exclusive_maximum: float | None = None
    choices: tuple[str, ...] | None = None

    def json_schema(self) -> dict:
        out: dict[str, Any] = {"description": self.description}
        if self.type == "array":
            out["type"] = "array"
            out["items"] = {"type": "number"}
        else:
            out["type"] = self.type
        if self.default is not None:
            out["default"] = self.default
        if self.minimum is not None:
            out["minimum"] = self.minimum
        if self.exclusive_minimum is not None:
            out["exclusiveMinimum"] = self.exclusive_minimum
        if self.maximum is not None:
            out["maximum"] = self.maximum
        if self.exclusive_maximum is not None:
            out["exclusiveMaximum"] = self.exclusive_maximum
        if self.choices is not None:
            out["enum"] = list(self.choices)
        return out


class Design(abc.ABC):
    """Base class for dose-assignment engines on a discrete grid."""

    kind: ClassVar[str] = ""
    outcome_kind: ClassVar[str] = "binary"  # "binary" | "biomarker"
    randomized: ClassVar[bool] = False
    required_m: ClassVar[int | None] = None
    min_m: ClassVar[int] = 1
    PARAMS: ClassVar[tuple[Param, ...]] = ()

    def __init__(self, start_level: int = 1, target_p: float = 0.2) -> None:
        self.start_level = int(start_level)
        self.target_p = float(target_p)

    # -- trial wiring ------------------------------------------------------

    def validate_trial(self, grid: DoseGrid, m: int) -> None:
        if self.required_m is not None and m != self.required_m:
            raise ValueError(f"{self.kind} requires cohorts of exactly {self.required_m}")
        if m < self.min_m:
            raise ValueError(f"{self.kind} requires cohort size m >= {self.min_m}")
        if not 1 <= self.start_level <= grid.n_levels:
            raise ValueError(f"start level {self.start_level} outside 1..{grid.n_levels}")

    def initial_decision(self, grid: DoseGrid, m: int) -> DoseDecision:
        self.validate_trial(grid, m)
        return DoseDecision(
            next_level=self.start_level,
            kind="stay",
            rationale="starting dose",
            assigned_dose=self.initial_assigned_dose(grid),
        )

    def initial_assigned_dose(self, grid: DoseGrid) -> float | None:
        return None

    @abc.abstractmethod
    def decide(self, state: TrialState, rng: np.random.Generator | None = None) -> DoseDecision:
        """Next-dose decision given the full history."""

    def decision_support(self, state: TrialState) -> list[DoseDecision]:
        """All decisions the design can issue from this state (deterministic
        designs have a single one); used by exhaustive coherence checks."""
        return [self.decide(state)]

    def final_recommendation(self, state: TrialState) -> int | None:
        """Dose recommended when the trial ends: the declared MTD for
        stopping rules, otherwise the dose that would be assigned next."""
        decision = self.decide(state)
        if decision.kind == "stop":
            return decision.mtd_declared
        return decision.next_level

    def level_estimates(self, state: TrialState) -> list[float | None] | None:
        """Per-level toxicity estimates for display, when the design keeps
        them (model-based and isotonic designs); None otherwise."""
        return None

    # -- catalog -----------------------------------------------------------

    @classmethod
    def param_schema(cls) -> dict:
        props = {p.name: p.json_schema() for p in cls.PARAMS}
        required = [p.name for p in cls.PARAMS if p.required]
        schema: dict[str, Any] = {"type": "object", "properties": props}
        if required:
            schema["required"] = required
        return schema

    @classmethod
    def from_params(cls, params: dict, start_level: int = 1) -> "Design":
        known = {p.name for p in cls.PARAMS}
        unknown = set(params) - known
        if unknown:
            raise ValueError(f"unknown {cls.kind} parameters: {sorted(unknown)}")
        kwargs = {p.name: params.get(p.name, p.default) for p in cls.PARAMS}
        missing = [p.name for p in cls.PARAMS if p.required and kwargs[p.name] is None]
        if missing:
            raise ValueError(f"missing required {cls.kind} parameters: {missing}")
        return cls(start_level=start_level, **{k: v for k, v in kwargs.items() if v is not None})


DESIGN_KINDS: dict[str, type[Design]] = {}


def _register(cls: type[Design]) -> type[Design]:
    DESIGN_KINDS[cls.kind] = cls
    return cls


# ---------------------------------------------------------------------------
# Algorithm-based designs
# ---------------------------------------------------------------------------


@_register
class ThreePlusThreeDesign(Design):
    """Cohort-of-three escalation with stop-on-de-escalation."""

    kind = "three_plus_three"
    required_m = 3
    PARAMS = (
        Param("target_p", "number", "implied target toxicity rate", default=0.33,
              exclusive_minimum=0.0, exclusive_maximum=1.0),
    )

    def __init__(self, start_level: int = 1, target_p: float = 0.33) -> None:
        super().__init__(start_level=start_level, target_p=target_p)

    def decide(self, state: TrialState, rng: np.random.Generator | None = None) -> DoseDecision:
        if state.m != 3:
            raise designs.DesignStateError("3+3 requires cohorts of exactly 3")
        if not state.cohorts:
            return self.initial_decision(state.grid, state.m)
        table = DoseToxTable.from_state(state)
        return designs.three_plus_three_step(
            table, state.current_level, state.grid.n_levels
        )


@_register
class BiasedCoinDesign(Design):
    """Randomized up-and-down walk targeting the p-th toxicity percentile."""

    kind = "biased_coin"
    required_m = 1
    randomized = True
    PARAMS = (
        Param("target_p", "number", "target toxicity probability (< 0.5)",
              default=0.2, exclusive_minimum=0.0, exclusive_maximum=0.5, required=True),
    )

    def __init__(self, start_level: int = 1, target_p: float = 0.2) -> None:
        if not 0.0 < target_p < 0.5:
            raise ValueError(f"biased coin requires target p in (0, 0.5), got {target_p}")
        super().__init__(start_level=start_level, target_p=target_p)

    def decide(self, state: TrialState, rng: np.random.Generator | None = None) -> DoseDecision:
        if not state.cohorts:
            return self.initial_decision(state.grid, state.m)
        if rng is None:
            raise ValueError("biased coin is randomized and needs an RNG")
        last = state.last
        return designs.biased_coin_step(
            int(last.outcomes[0]), last.level, self.target_p, rng, state.grid.n_levels
        )

    def decision_support(self, state: TrialState) -> list[DoseDecision]:
        if not state.cohorts:
            return [self.initial_decision(state.grid, state.m)]
        last = state.last
        current = last.level
        if last.outcomes[0] == 1:
            return [decision_from_move(current, max(current - 1, 1),
                                       rationale="toxicity: step down")]
        moves = {current, min(current + 1, state.grid.n_levels)}
        return [decision_from_move(current, nxt, rationale="no toxicity: coin support")
                for nxt in sorted(moves)]

    def final_recommendation(self, state: TrialState) -> int | None:
        # a spreading walk recommends its modal allocation, ties to the
        # lower level, rather than one more random coin flip
        n, _ = state.level_counts()
        if not state.cohorts:
            return self.start_level
        return max(range(1, state.grid.n_levels + 1), key=lambda k: (n[k - 1], -k))


# ---------------------------------------------------------------------------
# Model-based designs
# ---------------------------------------------------------------------------


class _ModelBasedDesign(Design):
    """Shared plumbing for CRM variants: a working model and a posterior/MLE
    memo keyed by the sufficient per-level count table."""

    def __init__(
        self,
        model: WorkingModel,
        start_level: int | None = None,
        target_p: float | None = None,
    ) -> None:
        p = model.target_p if target_p is None else target_p
        super().__init__(start_level=start_level or 1, target_p=p)
        self.model = model
        self._explicit_start = start_level is not None
        self._memo: dict[tuple, float] = {}

    def __getstate__(self) -> dict:
        state = self.__dict__.copy()
        state["_memo"] = {}
        return state


@_register
class CrmDesign(_ModelBasedDesign):
    """Bayesian continual-reassessment: treat at the level whose posterior
    toxicity estimate is closest to the target."""

    kind = "crm"
    PARAMS = (
        Param("target_p", "number", "target toxicity probability", default=0.2,
              exclusive_minimum=0.0, exclusive_maximum=1.0),
        Param("model_form", "string", "working model form", default="empiric",
              choices=("empiric", "logistic")),
        Param("skeleton", "array", "prior toxicity guesses per level (empiric form)"),
        Param("slope", "number", "fixed working-model slope (logistic form)",
              default=1.0, exclusive_minimum=0.0),
        Param("prior_mean", "number", "normal prior mean", default=0.0),
        Param("prior_sd", "number", "normal prior sd", default=1.34,
              exclusive_minimum=0.0),
    )

    def __init__(
        self,
        model: WorkingModel | None = None,
        prior: CrmPrior | None = None,
        start_level: int | None = None,
        target_p: float | None = None,
    ) -> None:
        if model is None:
            raise ValueError("CRM requires a working model")
        super().__init__(model, start_level=start_level, target_p=target_p)
        self.prior = prior if prior is not None else CrmPrior()

    @classmethod
    def from_params(cls, params: dict, start_level: int = 1) -> "CrmDesign":
        params = dict(params)
        target_p = params.pop("target_p", 0.2)
        form = params.pop("model_form", "empiric")
        skeleton = params.pop("skeleton", None)
        slope = params.pop("slope", 1.0)
        prior = CrmPrior(mean=params.pop("prior_mean", 0.0), sd=params.pop("prior_sd", 1.34))
        if params:
            raise ValueError(f"unknown crm parameters: {sorted(params)}")
        model = WorkingModel(
            form=form, target_p=target_p, slope=slope,
            skeleton=tuple(skeleton) if skeleton is not None else None,
        )
        return cls(model=model, prior=prior, start_level=start_level, target_p=target_p)

    def posterior_mean(self, state_or_table: TrialState | DoseToxTable) -> float:
        table = (
            state_or_table
            if isinstance(state_or_table, DoseToxTable)
            else DoseToxTable.from_state(state_or_table)
        )
        key = (table.n, table.z)
        if key not in self._memo:
            self._memo[key] = designs.crm_posterior_mean(table, self.prior, self.model)
        return self._memo[key]

    def initial_decision(self, grid: DoseGrid, m: int) -> DoseDecision:
        self.validate_trial(grid, m)
        if self._explicit_start:
            return super().initial_decision(grid, m)
        level = designs.crm_next_dose(self.prior.mean, self.model, grid, self.target_p)
        return DoseDecision(
            next_level=level,
            kind="stay",
            rationale=f"prior-based start (parameter {self.prior.mean:.6g})",
        )

    def decide(self, state: TrialState, rng: np.random.Generator | None = None) -> DoseDecision:
        if not state.cohorts:
            return self.initial_decision(state.grid, state.m)
        phi_hat = self.posterior_mean(state)
        level = designs.crm_next_dose(phi_hat, self.model, state.grid, self.target_p)
        return decision_from_move(
            state.current_level, level,
            rationale=f"posterior mean parameter {phi_hat:.6g}",
        )

    def level_estimates(self, state: TrialState) -> list[float | None] | None:
        phi_hat = self.posterior_mean(state) if state.cohorts else self.prior.mean
        return list(self.model.prob_levels(state.grid.n_levels, phi_hat))


@_register
class LikelihoodCrmDesign(_ModelBasedDesign):
    """Maximum-likelihood CRM with a coherent start-up rule while the MLE
    does not exist: stay after any toxicity, escalate one level after a
    toxicity-free cohort."""

    kind = "crm_mle"
    PARAMS = (
        Param("target_p", "number", "target toxicity probability", default=0.2,
              exclusive_minimum=0.0, exclusive_maximum=1.0),
        Param("model_form", "string", "working model form", default="logistic",
              choices=("empiric", "logistic")),
        Param("skeleton", "array", "prior toxicity guesses per level (empiric form)"),
        Param("slope", "number", "fixed working-model slope (logistic form)",
              default=1.0, exclusive_minimum=0.0),
    )

    @classmethod
    def from_params(cls, params: dict, start_level: int = 1) -> "LikelihoodCrmDesign":
        params = dict(params)
        target_p = params.pop("target_p", 0.2)
        form = params.pop("model_form", "logistic")
        skeleton = params.pop("skeleton", None)
        slope = params.pop("slope", 1.0)
        if params:
            raise ValueError(f"unknown crm_mle parameters: {sorted(params)}")
        model = WorkingModel(
            form=form, target_p=target_p, slope=slope,
            skeleton=tuple(skeleton) if skeleton is not None else None,
        )
        return cls(model=model, start_level=start_level, target_p=target_p)

    def _mle_level(self, state: TrialState) -> int:
        table = DoseToxTable.from_state(state)
        key = (table.n, table.z)
        if key not in self._memo:
            self._memo[key] = designs.likelihood_crm_update(
                table, self.model, self.target_p, state.grid
            )
        return self._memo[key]

    def decide(self, state: TrialState, rng: np.random.Generator | None = None) -> DoseDecision:
        if not state.cohorts:
            return self.initial_decision(state.grid, state.m)
        current = state.current_level
        try:
            level = self._mle_level(state)
            return decision_from_move(current, level, rationale="binomial MLE step")
        except NotEstimableError:
            if state.last.tox_count > 0:
                return decision_from_move(
                    current, current, rationale="MLE not estimable: stay after toxicity"
                )
            nxt = min(current + 1, state.grid.n_levels)
            return decision_from_move(
                current, nxt, rationale="MLE not estimable: escalate after clean cohort"
            )

    def level_estimates(self, state: TrialState) -> list[float | None] | None:
        if not state.cohorts:
            return None
        try:
            theta_hat = designs.crm_mle_estimate(state, self.model, state.grid.n_levels)
        except NotEstimableError:
            return None
        return list(self.model.prob_levels(state.grid.n_levels, theta_hat))


@_register
class IsotonicDesign(Design):
    """CRM-like rule on isotonic (PAVA) estimates.

    The pure argmin excludes unobserved levels, so the engine adds the one
    escalation rule the construction needs: when the chosen level's estimate
    is below target and the next level up is unobserved, escalate to it.
    """

    kind = "isotonic"
    PARAMS = (
        Param("target_p", "number", "target toxicity probability", default=0.2,
              exclusive_minimum=0.0, exclusive_maximum=1.0, required=True),
    )

    def decide(self, state: TrialState, rng: np.random.Generator | None = None) -> DoseDecision:
        if not state.cohorts:
            return self.initial_decision(state.grid, state.m)
        table = DoseToxTable.from_state(state)
        estimates = designs.pava_isotonic(table)
        current = state.current_level
        level = designs.isotonic_next_dose(estimates, self.target_p, current)
        est = estimates[level - 1]
        if (
            est is not None
            and est < self.target_p
            and level < state.grid.n_levels
            and table.n[level] == 0
        ):
            return decision_from_move(
                current, level + 1,
                rationale=f"isotonic estimate {est:.4g} below target and next level untried",
            )
        label = "none" if est is None else f"{est:.4g}"
        return decision_from_move(
            current, level, rationale=f"closest isotonic estimate {label}"
        )

    def level_estimates(self, state: TrialState) -> list[float | None] | None:
        if not state.cohorts:
            return None
        return designs.pava_isotonic(DoseToxTable.from_state(state))


# ---------------------------------------------------------------------------
# Stochastic-approximation designs
# ---------------------------------------------------------------------------


@_register
class DsaDesign(Design):
    """Grid-rounded stochastic approximation (subject to the discrete barrier)."""

    kind = "dsa"
    PARAMS = (
        Param("b", "number", "recursion gain constant", required=True,
              exclusive_minimum=0.0),
        Param("target_p", "number", "target toxicity probability", default=0.2,
              exclusive_minimum=0.0, exclusive_maximum=1.0, required=True),
    )

    def __init__(self, b: float | None = None, start_level: int = 1, target_p: float = 0.2) -> None:
        if b is None or b <= 0.0:
            raise ValueError(f"recursion constant b must be positive, got {b}")
        super().__init__(start_level=start_level, target_p=target_p)
        self.b = float(b)

    def decide(self, state: TrialState, rng: np.random.Generator | None = None) -> DoseDecision:
        if not state.cohorts:
            return self.initial_decision(state.grid, state.m)
        last = state.last
        i = state.n_cohorts
        nxt = sa.dsa_step(last.level, last.mean, i, self.b, self.target_p, state.grid.n_levels)
        return decision_from_move(
            last.level, nxt,
            rationale=f"rounded recursion step at i={i} with cohort fraction {last.mean:.4g}",
        )


@_register
class VirtualObservationDesign(Design):
    """O-statistic recursion on virtual observations; the conceptual dose
    keeps full precision so the discrete barrier never freezes it."""

    kind = "virtual_observation"
    outcome_kind = "biomarker"
    min_m = 2
    PARAMS = (
        Param("b", "number", "recursion gain and virtual-observation slope",
              required=True, exclusive_minimum=0.0),
        Param("t0", "number", "biomarker safety threshold", required=True),
        Param("target_p", "number", "target exceedance probability", default=0.2,
              exclusive_minimum=0.0, exclusive_maximum=1.0, required=True),
        Param("noise", "string", "standardized error distribution", default="normal",
              choices=("normal", "uniform")),
    )

    def __init__(
        self,
        b: float | None = None,
        t0: float | None = None,
        start_level: int = 1,
        target_p: float = 0.2,
        noise: str = "normal",
    ) -> None:
        if b is None or b <= 0.0:
            raise ValueError(f"recursion constant b must be positive, got {b}")
        if t0 is None:
            raise ValueError("virtual-observation design requires the threshold t0")
        super().__init__(start_level=start_level, target_p=target_p)
        self.b = float(b)
        self.t0 = float(t0)
        self.noise = noise
        self.z_p = get_noise(noise).upper_quantile(target_p)

    def initial_assigned_dose(self, grid: DoseGrid) -> float:
        return float(self.start_level)

    def decide(self, state: TrialState, rng: np.random.Generator | None = None) -> DoseDecision:
        if not state.cohorts:
            return self.initial_decision(state.grid, state.m)
        if state.m < 2:
            raise ValueError("virtual-observation design needs m >= 2 for the sample sd")
        last = state.last
        i = state.n_cohorts
        ybar = last.mean
        s = float(np.std(last.outcomes, ddof=1))
        o = sa.o_statistic(ybar, s, state.m, self.z_p, self.noise)
        x_star = last.dose
        v = sa.virtual_observation(o, self.b, x_star, last.level, state.grid.n_levels)
        new = sa.vo_step(
            sa.VirtualState(x_star=x_star, x_given=last.level),
            v, i, self.b, self.t0, state.grid.n_levels,
        )
        return decision_from_move(
            last.level,
            new.x_given,
            rationale=(
                f"virtual observation {v:.6g} (O={o:.6g}) moves conceptual dose to "
                f"{new.x_star:.6g}"
            ),
            assigned_dose=new.x_star,
        )


# ---------------------------------------------------------------------------
# Coherence restriction wrapper
# ---------------------------------------------------------------------------


class CoherenceGuard(Design):
    """Clamps escalations after a cohort toxicity fraction >= p and
    de-escalations after a fraction <= p, flagging the clamp.  Off by
    default in every engine so raw designs stay auditable.  Binary designs
    only: the proportion threshold has no analogue for biomarker cohorts.
    """

    kind = "coherence_guard"

    def __init__(self, inner: Design) -> None:
        if inner.outcome_kind != "binary":
            raise ValueError("coherence guard applies to binary-outcome designs only")
        super().__init__(start_level=inner.start_level, target_p=inner.target_p)
        self.inner = inner
        self.randomized = inner.randomized
        self.required_m = inner.required_m
        self.min_m = inner.min_m

    def validate_trial(self, grid: DoseGrid, m: int) -> None:
        self.inner.validate_trial(grid, m)

    def initial_decision(self, grid: DoseGrid, m: int) -> DoseDecision:
        return self.inner.initial_decision(grid, m)

    def _clamp(self, state: TrialState, decision: DoseDecision) -> DoseDecision:
        if not state.cohorts or decision.kind in ("stay", "stop"):
            return decision
        ybar = state.last.mean
        current = state.current_level
        p = self.target_p
        if decision.kind == "escalate" and ybar >= p:
            return DoseDecision(
                next_level=current, kind="stay",
                rationale=f"coherence guard: escalation clamped ({decision.rationale})",
                coherence_clamped=True,
            )
        if decision.kind == "deescalate" and ybar <= p:
            return DoseDecision(
                next_level=current, kind="stay",
                rationale=f"coherence guard: de-escalation clamped ({decision.rationale})",
                coherence_clamped=True,
            )
        return decision

    def decide(self, state: TrialState, rng: np.random.Generator | None = None) -> DoseDecision:
        return self._clamp(state, self.inner.decide(state, rng))

    def decision_support(self, state: TrialState) -> list[DoseDecision]:
        seen: list[DoseDecision] = []
        for d in self.inner.decision_support(state):
            clamped = self._clamp(state, d)
            if all(clamped.next_level != s.next_level or clamped.kind != s.kind for s in seen):
                seen.append(clamped)
        return seen

    def final_recommendation(self, state: TrialState) -> int | None:
        return self.inner.final_recommendation(state)

    def level_estimates(self, state: TrialState) -> list[float | None] | None:
        return self.inner.level_estimates(state)


# ---------------------------------------------------------------------------
# Catalog helpers
# ---------------------------------------------------------------------------


def build_design(kind: str, params: dict, start_level: int = 1,
                 coherence_guard: bool = False) -> Design:
    if kind not in DESIGN_KINDS:
        raise ValueError(f"unknown design kind {kind!r}; known: {sorted(DESIGN_KINDS)}")
    design = DESIGN_KINDS[kind].from_params(params, start_level=start_level)
    if coherence_guard:
        return CoherenceGuard(design)
    return design


def design_catalog() -> list[dict]:
    """Catalog entries with parameter schemas, served by GET /designs."""
    entries = []
    for kind, cls in sorted(DESIGN_KINDS.items()):
        entries.append(
            {
                "kind": kind,
                "outcome_kind": cls.outcome_kind,
                "randomized": cls.randomized,
                "required_m": cls.required_m,
                "min_m": cls.min_m,
                "parameters": cls.param_schema(),
            }
        )
    return entries
