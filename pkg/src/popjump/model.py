"""Model parameters and the jump / intensity primitives of the popularity process.

Popularity X(t) of one influencer decays at rate ``gamma`` and jumps up at
posts (intensity ``lambda0 + lambda1 * x**phi``) and at exogenous events
(Poisson rate ``mu``).  A post made at popularity ``x`` adds
``(epsilon + beta * x**theta) * V_hat`` where ``V_hat`` is a positive,
unit-mean random multiplier.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
from scipy import optimize, special

FAMILIES = ("lognormal", "exponential", "powerlaw", "deterministic")

_SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# Jump distributions
# ---------------------------------------------------------------------------


class JumpDistribution:
    """Positive jump-size law.  Subclasses provide closed-form moments."""

    family: str = ""

    def mean(self) -> float:
        raise NotImplementedError

    def cv(self) -> float:
        raise NotImplementedError

    def sf(self, v):
        """Survival function P(V > v)."""
        raise NotImplementedError

    def cdf(self, v):
        return 1.0 - self.sf(v)

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError

    def __repr__(self):
        body = ", ".join(f"{k}={v:.6g}" for k, v in self.params().items())
        return f"{type(self).__name__}({body})"

    def __eq__(self, other):
        return type(self) is type(other) and self.params() == other.params()

    def __hash__(self):
        return hash((type(self).__name__, tuple(self.params().items())))


class LognormalJump(JumpDistribution):
    family = "lognormal"

    def __init__(self, log_mean: float, log_sd: float):
        if not log_sd > 0:
            raise ValueError(f"lognormal log_sd must be > 0, got {log_sd}")
        self.log_mean = float(log_mean)
        self.log_sd = float(log_sd)

    def mean(self):
        return math.exp(self.log_mean + 0.5 * self.log_sd**2)

    def cv(self):
        return math.sqrt(math.expm1(self.log_sd**2))

    def sf(self, v):
        v = np.asarray(v, dtype=float)
        with np.errstate(divide="ignore"):
            z = (np.log(np.maximum(v, 0.0)) - self.log_mean) / (self.log_sd * _SQRT2)
        return 0.5 * special.erfc(z)

    def sample(self, rng, size=None):
        return rng.lognormal(self.log_mean, self.log_sd, size)

    def params(self):
        return {"log_mean": self.log_mean, "log_sd": self.log_sd}


class ExponentialJump(JumpDistribution):
    family = "exponential"

    def __init__(self, rate: float):
        if not rate > 0:
            raise ValueError(f"exponential rate must be > 0, got {rate}")
        self.rate = float(rate)

    def mean(self):
        return 1.0 / self.rate

    def cv(self):
        return 1.0

    def sf(self, v):
        v = np.asarray(v, dtype=float)
        return np.exp(-self.rate * np.maximum(v, 0.0))

    def sample(self, rng, size=None):
        return rng.exponential(1.0 / self.rate, size)

    def params(self):
        return {"rate": self.rate}


class ParetoJump(JumpDistribution):
    """Power law with density proportional to ``v**-exponent`` above ``cutoff``."""

    family = "powerlaw"

    def __init__(self, exponent: float, cutoff: float):
        if not exponent > 1:
            raise ValueError(f"power-law exponent must be > 1, got {exponent}")
        if not cutoff > 0:
            raise ValueError(f"power-law cutoff must be > 0, got {cutoff}")
        self.exponent = float(exponent)
        self.cutoff = float(cutoff)

    @property
    def tail_index(self) -> float:
        return self.exponent - 1.0

    def mean(self):
        a = self.tail_index
        if a <= 1:
            return math.inf
        return a * self.cutoff / (a - 1.0)

    def cv(self):
        a = self.tail_index
        if a <= 2:
            return math.inf
        return 1.0 / math.sqrt(a * (a - 2.0))

    def sf(self, v):
        v = np.asarray(v, dtype=float)
        with np.errstate(divide="ignore"):
            tail = (self.cutoff / np.maximum(v, self.cutoff)) ** self.tail_index
        return np.where(v < self.cutoff, 1.0, tail)

    def sample(self, rng, size=None):
        return self.cutoff * (1.0 + rng.pareto(self.tail_index, size))

    def params(self):
        return {"exponent": self.exponent, "cutoff": self.cutoff}


class PointMassJump(JumpDistribution):
    family = "deterministic"

    def __init__(self, value: float):
        if not value > 0:
            raise ValueError(f"deterministic jump must be > 0, got {value}")
        self.value = float(value)

    def mean(self):
        return self.value

    def cv(self):
        return 0.0

    def sf(self, v):
        v = np.asarray(v, dtype=float)
        return np.where(v < self.value, 1.0, 0.0)

    def sample(self, rng, size=None):
        if size is None:
            return self.value
        return np.full(size, self.value)

    def params(self):
        return {"value": self.value}


def jump_distribution(family: str, mean: float = 1.0, cv: float | None = None,
                      strict: bool = False) -> JumpDistribution:
    """Build a jump law of the given family with prescribed mean and CV.

    The exponential family has CV 1 by construction; any other requested CV
    is overridden with a warning, or rejected when ``strict`` is set.  The
    deterministic family ignores ``cv``.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown jump family {family!r}; expected one of {FAMILIES}")
    if not mean > 0:
        raise ValueError(f"jump mean must be > 0, got {mean}")
    if family == "deterministic":
        return PointMassJump(mean)
    if family == "exponential":
        if cv is not None and not math.isclose(cv, 1.0, rel_tol=1e-12):
            msg = f"exponential jumps have cv=1; requested cv={cv} is ignored"
            if strict:
                raise ValueError(msg)
            warnings.warn(msg, stacklevel=2)
        return ExponentialJump(1.0 / mean)
    if cv is None or not cv > 0:
        raise ValueError(f"{family} jumps need cv > 0, got {cv}")
    if family == "lognormal":
        s2 = math.log1p(cv * cv)
        return LognormalJump(math.log(mean) - 0.5 * s2, math.sqrt(s2))
    # Pareto: cv^2 = 1 / (a (a - 2)) with tail index a = exponent - 1 > 2.
    a = 1.0 + math.sqrt(1.0 + 1.0 / (cv * cv))
    return ParetoJump(a + 1.0, mean * (a - 1.0) / a)


def unit_mean_params(family: str, cv: float | None = None, strict: bool = False) -> JumpDistribution:
    """Unit-mean jump multiplier of the given family and coefficient of variation."""
    return jump_distribution(family, 1.0, cv, strict=strict)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


def _default_w() -> JumpDistribution:
    return jump_distribution("lognormal", 1.0, 1.0)


@dataclass(frozen=True)
class SystemParams:
    """Platform-level constants shared by all influencers."""

    gamma: float = 1 / 64
    theta: float = 0.6
    epsilon: float = 0.01
    mu: float = 0.0
    w_dist: JumpDistribution = field(default_factory=_default_w)

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if not self.theta >= 0:
            raise ValueError(f"theta must be >= 0, got {self.theta}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.mu >= 0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")


@dataclass(frozen=True)
class InfluencerParams:
    """Per-influencer posting and success parameters."""

    beta: float = 1.0
    lambda0: float = 4.0
    lambda1: float = 0.0
    phi: float = 0.0
    cv: float = 4.0
    v_family: str = "lognormal"

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.lambda0 < 0 or self.lambda1 < 0:
            raise ValueError("lambda0 and lambda1 must be >= 0")
        if not self.phi >= 0:
            raise ValueError(f"phi must be >= 0, got {self.phi}")
        if self.v_family not in FAMILIES:
            raise ValueError(f"unknown v_family {self.v_family!r}")
        if self.v_family != "deterministic" and not self.cv > 0:
            raise ValueError(f"cv must be > 0, got {self.cv}")

    @cached_property
    def v_hat(self) -> JumpDistribution:
        cv = 1.0 if self.v_family == "exponential" else self.cv
        return unit_mean_params(self.v_family, cv)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def conditional_jump_mean(x, sys: SystemParams, inf: InfluencerParams):
    """Mean post jump at popularity ``x``: epsilon + beta * x**theta."""
    return sys.epsilon + inf.beta * np.power(x, sys.theta)


def sample_jump(x, inf: InfluencerParams, sys: SystemParams, rng: np.random.Generator, size=None):
    return conditional_jump_mean(x, sys, inf) * inf.v_hat.sample(rng, size)


def posting_intensity(x, inf: InfluencerParams):
    """Posting rate lambda0 + lambda1 * x**phi (with 0**0 == 1)."""
    return inf.lambda0 + inf.lambda1 * np.power(x, inf.phi)


def moment_level(sys: SystemParams, inf: InfluencerParams) -> float:
    """Stationary mean when jumps do not depend on popularity (theta = phi = 0)."""
    rate = inf.lambda0 + inf.lambda1
    return (rate * (sys.epsilon + inf.beta) + sys.mu * sys.w_dist.mean()) / sys.gamma


def reference_level(sys: SystemParams, inf: InfluencerParams) -> float:
    """Level where decay balances mean jump inflow.

    Solves gamma*x = lambda(x) * (epsilon + beta*x**theta) + mu*E[W], the
    deterministic skeleton of the mean dynamics.  Reduces to
    :func:`moment_level` when theta = phi = 0.  Returns ``inf`` when inflow
    outgrows decay (theta + phi >= 1 with large enough coefficients).
    """
    ew = sys.w_dist.mean()

    def excess(x):
        return float(posting_intensity(x, inf) * conditional_jump_mean(x, sys, inf)
                     + sys.mu * ew - sys.gamma * x)

    lo = 0.0
    if excess(lo) <= 0:
        return 0.0
    hi = max(moment_level(sys, inf), 1.0)
    while excess(hi) > 0:
        hi *= 4.0
        if hi > 1e250:
            return math.inf
    return optimize.brentq(excess, lo, hi, xtol=1e-12 * hi, rtol=1e-14)


# ---------------------------------------------------------------------------
# Ergodicity
# ---------------------------------------------------------------------------


class Ergodicity(str, Enum):
    SUFFICIENT_STRICT = "SufficientStrict"
    SUFFICIENT_BOUNDARY = "SufficientBoundary"
    NOT_GUARANTEED = "NotGuaranteed"


@dataclass(frozen=True)
class ErgodicityVerdict:
    status: Ergodicity
    detail: dict

    @property
    def ok(self) -> bool:
        return self.status is not Ergodicity.NOT_GUARANTEED


BOUNDARY_TOL = 1e-9


def drift_constant(sys: SystemParams, inf: InfluencerParams, alpha: float = 2.0,
                   x_ref: float | None = None) -> float:
    """Drift constant c of the linear Lyapunov bound, evaluated at ``x_ref``.

    c = gamma / (lambda0 + lambda1 + gamma) * alpha**-phi * F_Z((alpha-1) x | x)
    where F_Z mixes the post-jump and exogenous-jump CDFs by their event
    probabilities at ``x``.
    """
    if x_ref is None:
        x_ref = moment_level(sys, inf)
    lam = float(posting_intensity(x_ref, inf))
    total = lam + sys.mu
    if total <= 0:
        return 0.0
    z = (alpha - 1.0) * x_ref
    scale = float(conditional_jump_mean(x_ref, sys, inf))
    f_z = (lam * float(inf.v_hat.cdf(z / scale)) + sys.mu * float(sys.w_dist.cdf(z))) / total
    return sys.gamma / (inf.lambda0 + inf.lambda1 + sys.gamma) * alpha ** (-inf.phi) * f_z


def check_ergodicity(sys: SystemParams, inf: InfluencerParams, alpha: float = 2.0) -> ErgodicityVerdict:
    """Sufficient-condition check for a unique stationary law.

    theta + phi < 1 is sufficient.  On the boundary theta + phi = 1 the
    drift constant must beat beta; the constant depends on a state, which is
    fixed here at the popularity-independent stationary mean with
    ``alpha = 2``, so the boundary verdict is a heuristic sufficient check.
    """
    s = sys.theta + inf.phi
    detail = {"theta_plus_phi": s}
    if s < 1.0 - BOUNDARY_TOL:
        return ErgodicityVerdict(Ergodicity.SUFFICIENT_STRICT, detail)
    if s > 1.0 + BOUNDARY_TOL:
        detail["reason"] = "theta + phi > 1"
        return ErgodicityVerdict(Ergodicity.NOT_GUARANTEED, detail)
    x_ref = moment_level(sys, inf)
    c = drift_constant(sys, inf, alpha, x_ref)
    margin = c / inf.beta
    detail.update(alpha=alpha, reference_state=x_ref, drift_constant=c, margin=margin,
                  note="heuristic sufficient check")
    status = Ergodicity.SUFFICIENT_BOUNDARY if margin > 1.0 else Ergodicity.NOT_GUARANTEED
    return ErgodicityVerdict(status, detail)
