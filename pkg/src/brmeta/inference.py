"""Wald and (penalized) likelihood-ratio inference.

The ratio statistic for a scalar target ``tau`` (one coefficient or
``psi``) is ``2 {l(theta_hat) - l(tau, lambda_hat_tau)}`` where ``l`` is the
log-likelihood or one of the bias-reducing penalized log-likelihoods and
``lambda_hat_tau`` maximises ``l`` with ``tau`` held fixed.  It is compared
with a chi-square(1) reference distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special
from scipy.optimize import brentq

from .errors import DomainError, ProfileError
from .estimation import FitOptions, FitResult, fit as fit_model, refit_options, two_step
from .model import (
    Dataset,
    Method,
    _check_likelihood_method,
    _penalized_loglik,
    _weights,
    _wls,
)

__all__ = [
    "chisq_cdf",
    "chisq_sf",
    "chisq_quantile",
    "norm_cdf",
    "norm_quantile",
    "ProfileTarget",
    "IntervalResult",
    "wald_ci",
    "wald_pvalue",
    "profile_statistic",
    "signed_root",
    "test_pvalue",
    "plr_ci",
    "STATISTIC_KIND",
]

STATISTIC_KIND = {
    Method.ML: "LR",
    Method.MEAN_BRPL: "MeanPLR",
    Method.MEDIAN_BRPL: "MedianPLR",
}

_EXPANSION_CAP = 60


def chisq_cdf(x, df) -> float:
    """Chi-square CDF via the regularized lower incomplete gamma function."""
    x = float(x)
    if x <= 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    return float(special.gammainc(df / 2.0, x / 2.0))


def chisq_sf(x, df) -> float:
    x = float(x)
    if x <= 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    return float(special.gammaincc(df / 2.0, x / 2.0))


def chisq_quantile(p, df) -> float:
    p = float(p)
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {p}")
    return 2.0 * float(special.gammaincinv(df / 2.0, p))


def norm_cdf(x) -> float:
    return float(special.ndtr(x))


def norm_quantile(p) -> float:
    p = float(p)
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {p}")
    return float(special.ndtri(p))


@dataclass(frozen=True)
class ProfileTarget:
    """Scalar parameter under test.

    ``which`` is ``"beta"`` (with 0-based coefficient ``index``) or
    ``"psi"``; ``value`` is the hypothesised value.
    """

    which: str
    value: float
    index: int = 0

    def __post_init__(self):
        if self.which not in ("beta", "psi"):
            raise DomainError(f"target must be 'beta' or 'psi', got {self.which!r}")
        if self.which == "psi" and not self.value >= 0:
            raise DomainError("psi target must be >= 0")

    @classmethod
    def beta(cls, index, value):
        return cls("beta", float(value), int(index))

    @classmethod
    def psi(cls, value):
        return cls("psi", float(value))

    def estimate(self, fit: FitResult) -> float:
        return float(fit.psi) if self.which == "psi" else float(fit.beta[self.index])


@dataclass
class IntervalResult:
    lower: float
    upper: float
    level: float
    statistic_kind: str
    estimate: float = float("nan")
    parameter: str = ""
    endpoint_diagnostics: dict = field(default_factory=dict)

    def contains(self, value) -> bool:
        return self.lower <= value <= self.upper

    def as_dict(self) -> dict:
        return {
            "parameter": self.parameter,
            "statistic": self.statistic_kind,
            "level": self.level,
            "estimate": self.estimate,
            "lower": self.lower,
            "upper": self.upper,
            "diagnostics": self.endpoint_diagnostics,
        }


def wald_ci(fit: FitResult, j: int = 0, level: float = 0.95) -> IntervalResult:
    """``beta_j +/- z se_j``."""
    est = float(fit.beta[j])
    se = float(fit.se_beta[j])
    if level <= 0:
        half = 0.0
    else:
        half = norm_quantile((1.0 + level) / 2.0) * se
    return IntervalResult(
        lower=est - half,
        upper=est + half,
        level=level,
        statistic_kind="Wald",
        estimate=est,
        parameter=f"beta[{j}]",
        endpoint_diagnostics={"se": se},
    )


def wald_pvalue(fit: FitResult, j: int = 0, value: float = 0.0) -> float:
    z = abs(float(fit.beta[j]) - value) / float(fit.se_beta[j])
    return 2.0 * float(special.ndtr(-z))


def _unconstrained(data, method, fit, opts):
    if fit is None:
        fit = fit_model(data, method, opts)
    elif fit.method is not method:
        raise DomainError(f"fit was produced by {fit.method.value}, not {method.value}")
    return fit


def _constrained_objective(data, method, target, fit, opts, strict):
    if target.which == "psi":
        ws = _weights(data, target.value)
        return _penalized_loglik(data, _wls(data, ws), ws, method), True
    if not 0 <= target.index < data.p:
        raise DomainError(f"coefficient index {target.index} out of range")
    c_opts = refit_options(opts, expand_upper=True, psi_start=fit.psi)
    res = two_step(data, method, c_opts, fixed={target.index: target.value})
    if not res.converged and strict:
        raise ProfileError(
            f"constrained fit at {target.which}[{target.index}]={target.value:g} did not converge",
            residual_score=res.max_abs_score,
        )
    return res.objective, res.converged


def profile_statistic(
    data: Dataset,
    method,
    target: ProfileTarget,
    fit: FitResult | None = None,
    opts: FitOptions | None = None,
    strict: bool = True,
) -> float:
    """Ratio statistic for ``target`` under ``method``'s objective.

    ``fit`` may carry a precomputed unconstrained fit for the same method.
    Tiny negative values produced by solver tolerance are clipped to 0.
    With ``strict=False`` a non-converged constrained fit is used as is.
    """
    method = _check_likelihood_method(method)
    fit = _unconstrained(data, method, fit, opts)
    constrained, _ = _constrained_objective(data, method, target, fit, opts, strict)
    return max(0.0, float(2.0 * (fit.objective - constrained)))


def signed_root(data, method, target: ProfileTarget, fit=None, opts=None, strict=True) -> float:
    """``sign(tau_hat - tau) * sqrt(statistic)``, decreasing in ``tau``."""
    method = _check_likelihood_method(method)
    fit = _unconstrained(data, method, fit, opts)
    stat = profile_statistic(data, method, target, fit, opts, strict)
    return math.copysign(math.sqrt(stat), target.estimate(fit) - target.value)


def test_pvalue(data, method, target: ProfileTarget, fit=None, opts=None, alternative="two-sided") -> float:
    """p-value of the ratio test of ``target``.

    ``alternative="two-sided"`` refers the statistic to chi-square(1);
    ``"greater"`` (true value above ``target.value``) and ``"less"`` refer the
    signed root to the standard normal.
    """
    if alternative == "two-sided":
        return chisq_sf(profile_statistic(data, method, target, fit, opts), 1)
    if alternative not in ("greater", "less"):
        raise DomainError(f"alternative must be 'two-sided', 'greater' or 'less', got {alternative!r}")
    r = signed_root(data, method, target, fit, opts)
    return norm_cdf(-r) if alternative == "greater" else norm_cdf(r)


test_pvalue.__test__ = False  # not a pytest test


def _expand(g, start, step, direction):
    """Step away from ``start`` doubling the step until ``g`` turns positive."""
    inner = start
    for n in range(_EXPANSION_CAP):
        outer = start + direction * step
        if g(outer) > 0:
            return inner, outer, n + 1
        inner = outer
        step *= 2.0
    return inner, None, _EXPANSION_CAP


def plr_ci(
    data: Dataset,
    method,
    which="psi",
    level: float = 0.95,
    fit: FitResult | None = None,
    opts: FitOptions | None = None,
    xtol: float = 1e-9,
) -> IntervalResult:
    """Interval ``{tau : statistic(tau) <= chisq_quantile(level, 1)}``.

    ``which`` is ``"psi"`` or a 0-based coefficient index.  Each endpoint is
    bracketed by doubling steps away from the estimate (at most 60) and
    then located by Brent's method.  An endpoint that cannot be bracketed
    is reported as infinite.  For ``psi`` the lower end is 0 whenever the
    statistic at 0 does not exceed the critical value.
    """
    method = _check_likelihood_method(method)
    fit = _unconstrained(data, method, fit, opts)
    crit = chisq_quantile(level, 1)
    diag = {"critical_value": crit}

    if which == "psi":
        est = float(fit.psi)

        def stat(v):
            return profile_statistic(data, method, ProfileTarget.psi(v), fit, opts)

        ws = _weights(data, est)
        step = max(est, math.sqrt(2.0 / ws.trW2))
        if est <= 0.0 or stat(0.0) <= crit:
            lower = 0.0
            diag["lower_bracket"] = None
        else:
            lower = brentq(lambda v: stat(v) - crit, 0.0, est, xtol=xtol)
            diag["lower_bracket"] = (0.0, est)
        inner, outer, n = _expand(lambda v: stat(v) - crit, est, step, +1)
        if outer is None:
            upper = math.inf
        else:
            upper = brentq(lambda v: stat(v) - crit, inner, outer, xtol=xtol)
        diag["upper_bracket"] = (inner, outer)
        diag["upper_expansions"] = n
        name = "psi"
    else:
        j = int(which)
        est = float(fit.beta[j])

        def stat(v):
            return profile_statistic(data, method, ProfileTarget.beta(j, v), fit, opts)

        g = lambda v: stat(v) - crit  # noqa: E731
        step = float(fit.se_beta[j])
        ends = []
        for direction, key in ((-1, "lower"), (+1, "upper")):
            inner, outer, n = _expand(g, est, step, direction)
            diag[f"{key}_bracket"] = (inner, outer)
            diag[f"{key}_expansions"] = n
            if outer is None:
                ends.append(direction * math.inf)
            else:
                a, b = sorted((inner, outer))
                ends.append(brentq(g, a, b, xtol=xtol))
        lower, upper = ends
        name = f"beta[{j}]"

    for key, v in (("lower", lower), ("upper", upper)):
        if math.isfinite(v) and not (key == "lower" and v == 0.0 and which == "psi"):
            diag[f"{key}_residual"] = stat(v) - crit
    return IntervalResult(
        lower=float(lower),
        upper=float(upper),
        level=level,
        statistic_kind=STATISTIC_KIND[method],
        estimate=est,
        parameter=name,
        endpoint_diagnostics=diag,
    )
