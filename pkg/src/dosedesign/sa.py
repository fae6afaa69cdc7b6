"""Stochastic-approximation recursions and their asymptotic-variance algebra.

Covers the plain root-finding recursion, its grid-rounded (and therefore
rigid) variant, the biomarker O-statistic recursion, and the
virtual-observation recursion that defeats the discrete barrier, plus the
closed-form variance and efficiency formulas used to validate them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .core import c4, get_noise, round_to_grid

__all__ = [
    "SaConfig",
    "AsymptoticInputs",
    "VirtualState",
    "rm_step",
    "dsa_step",
    "dsa_freeze_index",
    "o_statistic",
    "osa_step",
    "virtual_observation",
    "vo_step",
    "lambda_m",
    "rm_asymptotic_variance",
    "v_o",
    "v_t",
    "beta_tilde",
    "efficiency_ratio",
    "c4",
]

# Absorbs binary-float noise when 2*max(p,1-p)/b lands exactly on an integer
# (e.g. b=0.2, p=0.2 -> 8), where the strict < in the freeze rule must fail.
_BOUNDARY_SNAP = 1e-9


@dataclass(frozen=True)
class SaConfig:
    """Recursion constants shared by the SA-family designs."""

    b: float
    target: float  # alpha, p, or t0 depending on the outcome scale
    start: float = 1.0
    m: int = 1

    def __post_init__(self) -> None:
        if self.b <= 0.0:
            raise ValueError(f"recursion constant b must be positive, got {self.b}")
        if self.m < 1:
            raise ValueError(f"cohort size must be >= 1, got {self.m}")


@dataclass(frozen=True)
class VirtualState:
    """Conceptual-scale assigned dose and the grid dose actually given."""

    x_star: float
    x_given: int

    def check(self, n_levels: int) -> None:
        expected = round_to_grid(self.x_star, n_levels)
        if expected != self.x_given:
            raise ValueError(
                f"inconsistent virtual state: C({self.x_star}) = {expected} != {self.x_given}"
            )


def rm_step(x_i: float, y: float, i: int, b: float, alpha: float) -> float:
    """x_{i+1} = x_i - (y - alpha) / (i b)."""
    if i < 1:
        raise ValueError(f"step index must be >= 1, got {i}")
    if b <= 0.0:
        raise ValueError(f"recursion constant b must be positive, got {b}")
    return x_i - (y - alpha) / (i * b)


def dsa_step(x_i: int, ybar: float, i: int, b: float, p: float, n_levels: int) -> int:
    """Grid-rounded recursion step: round the plain update onto 1..K."""
    if not 1 <= x_i <= n_levels:
        raise ValueError(f"level {x_i} outside 1..{n_levels}")
    return round_to_grid(rm_step(float(x_i), ybar, i, b, p), n_levels)


def dsa_freeze_index(b: float, p: float) -> int:
    """Smallest cohort index from which the rounded recursion is provably
    frozen for any bounded toxicity fraction in [0, 1].

    The update magnitude is at most max(p, 1-p)/(i b); once that is
    strictly below half a level, rounding returns the current level for
    every outcome.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"target p must be in (0, 1), got {p}")
    if b <= 0.0:
        raise ValueError(f"recursion constant b must be positive, got {b}")
    q = 2.0 * max(p, 1.0 - p) / b
    return int(math.floor(q + _BOUNDARY_SNAP)) + 1


def o_statistic(ybar: float, s: float, m: int, z_p: float, noise: str = "normal") -> float:
    """Unbiased one-cohort realization of M(x) + z_p sigma(x):
    O = ybar + z_p * s / E(S/sigma)."""
    if m < 2:
        raise ValueError(f"O-statistic needs m >= 2 for a sample sd, got m={m}")
    if s < 0.0:
        raise ValueError(f"sample sd must be nonnegative, got {s}")
    return ybar + z_p * s / get_noise(noise).expected_sd_ratio(m)


def osa_step(x_i: float, o: float, i: int, b: float, t0: float) -> float:
    """Recursion step on the O-statistic scale."""
    return rm_step(x_i, o, i, b, t0)


def virtual_observation(
    o: float, b: float, x_star: float, x_given: int, n_levels: int
) -> float:
    """V = O + b (x* - x_given), the constructed response whose mean has a
    known local slope b across the grid."""
    VirtualState(x_star=x_star, x_given=x_given).check(n_levels)
    return o + b * (x_star - x_given)


def vo_step(
    state: VirtualState, v: float, i: int, b: float, t0: float, n_levels: int
) -> VirtualState:
    """Advance the virtual-observation recursion; only the given dose is
    rounded, the conceptual dose keeps full precision."""
    x_star = rm_step(state.x_star, v, i, b, t0)
    return VirtualState(x_star=x_star, x_given=round_to_grid(x_star, n_levels))


# ---------------------------------------------------------------------------
# Asymptotic variance formulas (normal noise)
# ---------------------------------------------------------------------------


def lambda_m(m: int) -> float:
    """(m-1) Gamma^2((m-1)/2) / (2 Gamma^2(m/2)); equals 1/c4(m)^2."""
    if m < 2:
        raise ValueError(f"lambda_m needs m >= 2, got {m}")
    return math.exp(
        math.log(m - 1.0)
        + 2.0 * math.lgamma((m - 1) / 2.0)
        - math.log(2.0)
        - 2.0 * math.lgamma(m / 2.0)
    )


def _check_gain(b: float, beta: float) -> None:
    if beta <= 0.0:
        raise ValueError(f"objective slope must be positive, got {beta}")
    if not 0.0 < b < 2.0 * beta:
        raise ValueError(
            f"variance formula needs 0 < b < 2*beta, got b={b}, beta={beta}"
        )


def rm_asymptotic_variance(sigma: float, b: float, beta: float) -> float:
    """Limit variance of sqrt(n)(x_n - theta) for the plain recursion:
    sigma^2 / (b (2 beta - b))."""
    _check_gain(b, beta)
    return sigma * sigma / (b * (2.0 * beta - b))


def v_o(sigma_theta: float, m: int, z_p: float, b: float, beta: float) -> float:
    """Limit variance for the O-statistic recursion with normal noise:
    sigma^2(theta) {1 + m z_p^2 (lambda_m - 1)} / (m b (2 beta - b))."""
    _check_gain(b, beta)
    if m < 2:
        raise ValueError(f"O-statistic recursions need m >= 2, got {m}")
    num = sigma_theta * sigma_theta * (1.0 + m * z_p * z_p * (lambda_m(m) - 1.0))
    return num / (m * b * (2.0 * beta - b))


def v_t(p: float, m: int, b_tilde: float, beta_tilde_value: float) -> float:
    """Limit variance for the dichotomized-data MLE recursion:
    p(1-p) / (m b~ (2 beta~ - b~))."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"target p must be in (0, 1), got {p}")
    if m < 1:
        raise ValueError(f"cohort size must be >= 1, got {m}")
    _check_gain(b_tilde, beta_tilde_value)
    return p * (1.0 - p) / (m * b_tilde * (2.0 * beta_tilde_value - b_tilde))


def beta_tilde(beta: float, sigma_theta: float, z_p: float, noise: str = "normal") -> float:
    """Slope of the dichotomized objective: pi'(theta) = beta G'(z_p) / sigma(theta)."""
    if sigma_theta <= 0.0:
        raise ValueError(f"sigma(theta) must be positive, got {sigma_theta}")
    return beta * get_noise(noise).pdf(z_p) / sigma_theta


def efficiency_ratio(p: float, m: int, noise: str = "normal") -> float:
    """v_T / v_O at the respective optimal gains, for standardized noise:
    p(1-p) / [G'(z_p)^2 {1 + m z_p^2 (lambda_m - 1)}]."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"target p must be in (0, 1), got {p}")
    model = get_noise(noise)
    z_p = model.upper_quantile(p)
    dens = model.pdf(z_p)
    return p * (1.0 - p) / (dens * dens * (1.0 + m * z_p * z_p * (lambda_m(m) - 1.0)))


@dataclass(frozen=True)
class AsymptoticInputs:
    """Everything the closed-form variance formulas need in one place."""

    beta: float
    sigma_theta: float
    z_p: float
    m: int
    b: float
    b_tilde: float | None = None
    noise: str = "normal"

    def __post_init__(self) -> None:
        _check_gain(self.b, self.beta)

    def predicted_v_o(self) -> float:
        return v_o(self.sigma_theta, self.m, self.z_p, self.b, self.beta)

    def beta_tilde(self) -> float:
        return beta_tilde(self.beta, self.sigma_theta, self.z_p, self.noise)

    def predicted_v_t(self, p: float) -> float:
        bt = self.b_tilde if self.b_tilde is not None else self.beta_tilde()
        return v_t(p, self.m, bt, self.beta_tilde())
