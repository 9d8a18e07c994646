"""Point estimation: DerSimonian-Laird and the two-step iterative fit.

The two-step fit alternates a weighted least squares update of ``beta`` at
the current ``psi`` with a bracketed root search of the (adjusted) psi-score
at the current ``beta``.  The same loop maximises the log-likelihood, the
mean bias-reducing penalized likelihood and the median bias-reducing
penalized likelihood; only the psi-score changes.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigurationError, InsufficientDataError
from .model import (
    Dataset,
    Method,
    _adjusted_score,
    _check_likelihood_method,
    _penalized_loglik,
    _trace_wh,
    _weights,
    _wls,
)

__all__ = ["FitOptions", "FitResult", "dl_estimate", "solve_psi", "fit", "default_psi_interval"]

# brentq's smallest admissible relative tolerance
_RTOL = 4 * np.finfo(float).eps
_EXPAND_CAP = 60
_SCAN_POINTS = 64


@dataclass(frozen=True)
class FitOptions:
    """Solver settings.

    ``psi_interval=None`` means :func:`default_psi_interval`.  With
    ``expand_upper`` the upper end of the interval is doubled (up to 60
    times) while the psi-score is still positive there.
    """

    psi_interval: tuple | None = None
    tol_score: float = 1e-6
    max_iter: int = 1000
    psi_start: float | None = None
    expand_upper: bool = False

    def __post_init__(self):
        if self.psi_interval is not None:
            lo, hi = (float(v) for v in self.psi_interval)
            if not (0 <= lo < hi) or not np.isfinite(hi):
                raise ConfigurationError(f"invalid psi interval ({lo}, {hi})")
            object.__setattr__(self, "psi_interval", (lo, hi))
        if not self.tol_score > 0:
            raise ConfigurationError("tol_score must be positive")
        if int(self.max_iter) < 1:
            raise ConfigurationError("max_iter must be a positive integer")
        if self.psi_start is not None and not self.psi_start >= 0:
            raise ConfigurationError("psi_start must be >= 0")


@dataclass
class FitResult:
    method: Method
    beta: np.ndarray
    psi: float
    se_beta: np.ndarray
    iterations: int = 0
    converged: bool = True
    at_boundary: bool = False
    runtime_seconds: float = 0.0
    max_abs_score: float = 0.0
    objective: float = float("nan")  # penalized log-likelihood at the fit
    fixed: dict = field(default_factory=dict)  # constrained coefficients, 0-based

    def as_dict(self) -> dict:
        return {
            "method": self.method.value,
            "beta": [float(b) for b in self.beta],
            "psi": float(self.psi),
            "se_beta": [float(s) for s in self.se_beta],
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "at_boundary": bool(self.at_boundary),
            "max_abs_score": float(self.max_abs_score),
            "runtime_seconds": float(self.runtime_seconds),
        }


def default_psi_interval(data: Dataset) -> tuple:
    """``[0, 10 (max sigma2 + var(y))]``."""
    hi = 10.0 * (float(np.max(data.sigma2)) + float(np.var(data.y, ddof=1)))
    return (0.0, hi if hi > 0 else 1.0)


def _se_beta(ws) -> np.ndarray:
    return np.sqrt(np.diag(ws.xtwx_inv()))


def dl_estimate(data: Dataset) -> FitResult:
    """DerSimonian-Laird moment estimate of ``psi``, with WLS ``beta``.

    Uses the residual Q statistic of the fixed-effects fit and the
    trace-based denominator ``tr(A) - tr[(X^T A X)^{-1} X^T A^2 X]``,
    ``A = diag(1/sigma2)``, which reduces to the usual formula when ``X`` is
    a column of ones.
    """
    start = time.perf_counter()
    K, p = data.K, data.p
    if K <= p:
        raise InsufficientDataError(f"need more studies than coefficients (K={K}, p={p})")
    ws0 = _weights(data, 0.0)
    a = ws0.w
    beta0 = _wls(data, ws0)
    r = data.y - data.X @ beta0
    Q = float(np.sum(a * r * r))
    denom = ws0.trW - _trace_wh(data, ws0)
    psi = max(0.0, (Q - (K - p)) / denom)
    ws = _weights(data, psi)
    beta = _wls(data, ws)
    return FitResult(
        method=Method.DL,
        beta=beta,
        psi=psi,
        se_beta=_se_beta(ws),
        iterations=0,
        converged=True,
        at_boundary=psi == 0.0,
        runtime_seconds=time.perf_counter() - start,
    )


def _psi_score_function(data: Dataset, beta, method: Method):
    """Adjusted psi-score at fixed ``beta`` as a fast scalar function."""
    s2 = data.sigma2
    r = data.y - data.X @ beta
    r2 = r * r
    X = data.X
    simple = X.shape[1] == 1
    x2 = X[:, 0] ** 2 if simple else None

    def f(psi):
        w = 1.0 / (s2 + psi)
        w2 = w * w
        val = 0.5 * (float(w2 @ r2) - float(w.sum()))
        if method is Method.ML:
            return val
        if simple:
            val += 0.5 * float(w2 @ x2) / float(w @ x2)
        else:
            M = X.T @ (w[:, None] * X)
            N = X.T @ (w2[:, None] * X)
            val += 0.5 * float(np.trace(np.linalg.solve(M, N)))
        if method is Method.MEDIAN_BRPL:
            val += float(w2 @ w) / (3.0 * float(w2.sum()))
        return val

    return f


def _psi_score_grid(data: Dataset, beta, method: Method, psis) -> np.ndarray:
    """Adjusted psi-score at fixed ``beta`` for every value in ``psis``."""
    r = data.y - data.X @ beta
    X = data.X
    W = 1.0 / (data.sigma2[None, :] + np.asarray(psis, dtype=float)[:, None])
    W2 = W * W
    val = 0.5 * (W2 @ (r * r) - W.sum(1))
    if method is Method.ML:
        return val
    if X.shape[1] == 1:
        x2 = X[:, 0] ** 2
        val += 0.5 * (W2 @ x2) / (W @ x2)
    else:
        M = np.einsum("gk,ki,kj->gij", W, X, X)
        N = np.einsum("gk,ki,kj->gij", W2, X, X)
        val += 0.5 * np.trace(np.linalg.solve(M, N), axis1=1, axis2=2)
    if method is Method.MEDIAN_BRPL:
        val += (W2 * W).sum(1) / (3.0 * W2.sum(1))
    return val


def _scan_grid(data: Dataset, lo, hi) -> np.ndarray:
    # geometric in the distance from lo, fine enough near lo to resolve the
    # scale of the smallest within-study variance
    first = min(1e-3 * float(np.min(data.sigma2)), 1e-3 * (hi - lo))
    return np.r_[lo, lo + np.geomspace(first, hi - lo, _SCAN_POINTS - 1)]


def _objective_at(data, beta, psi, method):
    return _penalized_loglik(data, beta, _weights(data, psi), method)


def _solve_psi(data, beta, method, lo, hi, expand_upper=False):
    """Global maximiser of the objective in psi at fixed ``beta``.

    The score is scanned on a grid; every downward crossing is refined by
    bracketed root finding and compared, by objective, with the lower end
    (score <= 0 there) and the upper end (score > 0 there).
    """
    f = _psi_score_function(data, beta, method)
    grid = _scan_grid(data, lo, hi)
    fg = _psi_score_grid(data, beta, method, grid)
    cands = []
    if fg[0] <= 0.0:
        cands.append((lo, True))
    for i in np.flatnonzero((fg[:-1] > 0.0) & (fg[1:] <= 0.0)):
        if fg[i + 1] == 0.0:
            cands.append((float(grid[i + 1]), False))
        else:
            root = brentq(f, grid[i], grid[i + 1], xtol=1e-14, rtol=_RTOL, maxiter=500)
            cands.append((float(root), False))
    if fg[-1] > 0.0:
        top, f_top = hi, fg[-1]
        n = 0
        while f_top > 0.0 and expand_upper and n < _EXPAND_CAP:
            lo_e, top = top, 2.0 * top
            f_top = f(top)
            n += 1
        if f_top > 0.0:
            cands.append((top, True))
        elif f_top == 0.0:
            cands.append((top, False))
        else:
            root = brentq(f, lo_e, top, xtol=1e-14, rtol=_RTOL, maxiter=500)
            cands.append((float(root), False))
    if len(cands) == 1:
        return cands[0]
    return max(cands, key=lambda c: _objective_at(data, beta, c[0], method))


def solve_psi(data: Dataset, beta, method, opts: FitOptions | None = None):
    """Maximiser of the penalized log-likelihood in psi at fixed ``beta``.

    Returns ``(psi, at_boundary)``.  Interior candidates are roots of the
    adjusted psi-score.  The lower end is a candidate when the score is
    non-positive there (the usual ML boundary fit at zero) and the upper end
    when the score is still positive there.  The candidate with the largest
    objective wins.
    """
    method = _check_likelihood_method(method)
    opts = opts or FitOptions()
    lo, hi = opts.psi_interval or default_psi_interval(data)
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    return _solve_psi(data, beta, method, lo, hi, opts.expand_upper)


def _constrained_wls(data, ws, fixed):
    if not fixed:
        return _wls(data, ws)
    p = data.p
    idx = sorted(fixed)
    free = [j for j in range(p) if j not in fixed]
    beta = np.empty(p)
    beta[idx] = [fixed[j] for j in idx]
    if free:
        yy = data.y - data.X[:, idx] @ beta[idx]
        Xf = data.X[:, free]
        wX = ws.w[:, None] * Xf
        beta[free] = np.linalg.solve(Xf.T @ wX, wX.T @ yy)
    return beta


def _profile_grid(data, method, psis, fixed):
    """Objective maximised over the free coefficients, at each ``psi``."""
    X, y = data.X, data.y
    W = 1.0 / (data.sigma2[None, :] + psis[:, None])
    idx = sorted(fixed)
    free = [j for j in range(data.p) if j not in fixed]
    yy = y - X[:, idx] @ np.array([fixed[j] for j in idx]) if idx else y
    r = np.broadcast_to(yy, W.shape)
    if free:
        Xf = X[:, free]
        A = np.einsum("gk,ki,kj->gij", W, Xf, Xf)
        b = np.einsum("gk,ki,k->gi", W, Xf, yy)
        bf = np.linalg.solve(A, b[..., None])[..., 0]
        r = yy[None, :] - bf @ Xf.T
    val = 0.5 * (np.log(W).sum(1) - (W * r * r).sum(1))
    if method is not Method.ML:
        val -= 0.5 * np.linalg.slogdet(np.einsum("gk,ki,kj->gij", W, X, X))[1]
    if method is Method.MEDIAN_BRPL:
        val -= np.log((W * W).sum(1)) / 6.0
    return val


def _iterate(data, method, opts, fixed, free, psi, lo, hi):
    converged = False
    boundary = False
    beta = None
    smax = np.inf
    it = 0
    for it in range(1, int(opts.max_iter) + 1):
        ws = _weights(data, psi)
        new_beta = _constrained_wls(data, ws, fixed)
        new_psi, boundary = _solve_psi(data, new_beta, method, lo, hi, opts.expand_upper)
        if new_psi > hi:
            hi = new_psi
        ws = _weights(data, new_psi)
        s = _adjusted_score(data, new_beta, ws, method)
        sb = np.max(np.abs(s[free])) if free.size else 0.0
        smax = sb if boundary else max(sb, abs(s[-1]))
        stalled = beta is not None and new_psi == psi and np.array_equal(new_beta, beta)
        beta, psi = new_beta, new_psi
        if sb < opts.tol_score and (boundary or abs(s[-1]) < opts.tol_score):
            converged = True
            break
        if stalled:
            break
    obj = _penalized_loglik(data, beta, _weights(data, psi), method)
    return beta, float(psi), boundary, converged, it, float(smax), obj, hi


def two_step(data: Dataset, method, opts: FitOptions | None = None, fixed=None) -> FitResult:
    """Two-step maximisation, optionally with some coefficients held fixed.

    ``fixed`` maps 0-based coefficient indices to values; used for profile
    likelihoods.  Convergence is declared when every free score component
    is below ``tol_score`` in absolute value (the psi component is exempt
    when psi sits at an interval end).  The profile objective is then
    scanned on a psi grid; if some grid point beats the fit (a second mode)
    the iteration is restarted there and the better of the two fits is kept.
    """
    start = time.perf_counter()
    method = _check_likelihood_method(method)
    opts = opts or FitOptions()
    fixed = dict(fixed or {})
    lo, hi = opts.psi_interval or default_psi_interval(data)
    if opts.psi_start is not None:
        psi = float(opts.psi_start)
    else:
        psi = dl_estimate(data).psi
    psi = min(max(psi, lo), hi)
    free = np.array([j for j in range(data.p) if j not in fixed], dtype=int)

    out = _iterate(data, method, opts, fixed, free, psi, lo, hi)
    iterations = out[4]
    hi = out[7]
    grid = _scan_grid(data, lo, hi)
    prof = _profile_grid(data, method, np.r_[grid, out[1]], fixed)
    if out[3] and np.max(prof[:-1]) > prof[-1] + 1e-12 * (1.0 + abs(prof[-1])):
        alt = _iterate(data, method, opts, fixed, free, float(grid[np.argmax(prof[:-1])]), lo, hi)
        iterations += alt[4]
        if alt[3] and alt[6] > out[6]:
            out = alt
    beta, psi, boundary, converged, _, smax, obj, hi = out
    ws = _weights(data, psi)
    if boundary and psi >= hi and psi > 0:
        warnings.warn(
            f"psi estimate pinned at the upper end of the search interval ({hi:g})",
            RuntimeWarning,
            stacklevel=2,
        )
    return FitResult(
        method=method,
        beta=beta,
        psi=psi,
        se_beta=_se_beta(ws),
        iterations=iterations,
        converged=converged,
        at_boundary=boundary,
        runtime_seconds=time.perf_counter() - start,
        max_abs_score=smax,
        objective=obj,
        fixed=fixed,
    )


def fit(data: Dataset, method, opts: FitOptions | None = None) -> FitResult:
    """Fit by ML, maximum mean BRPL or maximum median BRPL.

    ``method="dl"`` is routed to :func:`dl_estimate`.  Failure to converge
    within ``max_iter`` is reported through ``FitResult.converged``.
    """
    method = Method.parse(method)
    if method is Method.DL:
        return dl_estimate(data)
    return two_step(data, method, opts)


def refit_options(opts: FitOptions | None, **changes) -> FitOptions:
    return replace(opts or FitOptions(), **changes)
