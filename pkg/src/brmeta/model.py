"""Random-effects meta-regression model: likelihoods, scores and adjustments.

The model is ``y = X beta + u + e`` with ``u_i ~ N(0, psi)`` and
``e_i ~ N(0, sigma2_i)``, ``sigma2_i`` known.  Everything here is a pure
function of a :class:`Dataset` and a parameter point.  The weight matrix
``W(psi) = diag(1 / (sigma2_i + psi))`` is kept as a vector.

Three objective functions are supported:

* ``ML``           l(theta)
* ``MEAN_BRPL``    l(theta) - 1/2 log|X^T W X|
* ``MEDIAN_BRPL``  l(theta) - 1/2 log|X^T W X| - 1/6 log tr(W^2)

The penalties depend on ``psi`` only, so the beta block of every adjusted
score equals the ordinary beta score.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InvalidMethodError, RankDeficiencyError

__all__ = [
    "Dataset",
    "Theta",
    "Method",
    "WeightState",
    "weights",
    "wls_beta",
    "log_likelihood",
    "score",
    "expected_info",
    "observed_info",
    "median_adjustment_closed",
    "median_adjustment_general",
    "penalized_loglik",
    "adjusted_score_psi",
    "adjusted_score",
]


class Method(str, enum.Enum):
    ML = "ml"
    MEAN_BRPL = "mean-brpl"
    MEDIAN_BRPL = "median-brpl"
    DL = "dl"

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"mean": "mean-brpl", "median": "median-brpl"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise InvalidMethodError(f"unknown method {value!r}") from None


LIKELIHOOD_METHODS = (Method.ML, Method.MEAN_BRPL, Method.MEDIAN_BRPL)


def _check_likelihood_method(method) -> Method:
    method = Method.parse(method)
    if method is Method.DL:
        raise InvalidMethodError("DL is an estimator tag, not a likelihood penalty")
    return method


@dataclass(frozen=True, eq=False)
class Dataset:
    """Study effects ``y``, known variances ``sigma2`` and design ``X``.

    ``X`` defaults to a single column of ones (plain meta-analysis).  Arrays
    are copied and made read-only, so a Dataset can be shared freely.
    """

    y: np.ndarray
    sigma2: np.ndarray
    X: np.ndarray = None
    labels: tuple = field(default=None, compare=False)
    names: tuple = field(default=None, compare=False)

    def __post_init__(self):
        y = np.array(self.y, dtype=float).ravel()
        sigma2 = np.array(self.sigma2, dtype=float).ravel()
        K = y.shape[0]
        if self.X is None:
            X = np.ones((K, 1))
        else:
            X = np.array(self.X, dtype=float)
            if X.ndim == 1:
                X = X[:, None]
        if sigma2.shape[0] != K or X.shape[0] != K:
            raise DomainError("y, sigma2 and X must have the same number of rows")
        p = X.shape[1]
        if K < 2 or K <= p:
            raise DomainError(f"need K >= 2 and K > p (got K={K}, p={p})")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(X)):
            raise DomainError("y and X must be finite")
        if not np.all(sigma2 > 0) or not np.all(np.isfinite(sigma2)):
            raise DomainError("every within-study variance must be positive and finite")
        if np.linalg.matrix_rank(X) < p:
            raise RankDeficiencyError(f"design matrix has rank < {p}")
        for a in (y, sigma2, X):
            a.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sigma2", sigma2)
        object.__setattr__(self, "X", X)
        names = self.names
        if names is None:
            names = ("intercept",) if p == 1 else tuple(f"x{j + 1}" for j in range(p))
        object.__setattr__(self, "names", tuple(names))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def K(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def with_y(self, y) -> "Dataset":
        """Same variances and design, new responses."""
        return Dataset(y, self.sigma2, self.X, labels=self.labels, names=self.names)


@dataclass(frozen=True)
class Theta:
    beta: np.ndarray
    psi: float

    def __post_init__(self):
        beta = np.atleast_1d(np.array(self.beta, dtype=float))
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "psi", float(self.psi))
        if not self.psi >= 0:
            raise DomainError(f"psi must be >= 0, got {self.psi}")

    def as_vector(self) -> np.ndarray:
        return np.append(self.beta, self.psi)


@dataclass(frozen=True)
class WeightState:
    """Weights ``w_i = 1/(sigma2_i + psi)`` and the derived sums."""

    psi: float
    w: np.ndarray
    trW: float
    trW2: float
    trW3: float
    xtwx: np.ndarray
    chol: np.ndarray  # lower Cholesky factor of xtwx

    @property
    def logdet_xtwx(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def xtwx_inv(self) -> np.ndarray:
        Linv = np.linalg.inv(self.chol)
        return Linv.T @ Linv


def _check_psi(psi) -> float:
    psi = float(psi)
    if not psi >= 0:
        raise DomainError(f"psi must be >= 0, got {psi}")
    return psi


def _weights(data: Dataset, psi: float) -> WeightState:
    # No sign check on psi: root bracketing may probe (-min sigma2, 0).
    v = data.sigma2 + psi
    if np.any(v <= 0):
        raise DomainError("sigma2_i + psi must be positive for every study")
    w = 1.0 / v
    w2 = w * w
    X = data.X
    xtwx = X.T @ (w[:, None] * X)
    xtwx = 0.5 * (xtwx + xtwx.T)  # exact symmetry
    try:
        chol = np.linalg.cholesky(xtwx)
    except np.linalg.LinAlgError:
        raise RankDeficiencyError("X^T W X is not positive definite") from None
    return WeightState(
        psi=psi,
        w=w,
        trW=float(w.sum()),
        trW2=float(w2.sum()),
        trW3=float((w2 * w).sum()),
        xtwx=xtwx,
        chol=chol,
    )


def weights(data: Dataset, psi: float) -> WeightState:
    """Weight vector and trace sums at ``psi`` (``psi >= 0``)."""
    return _weights(data, _check_psi(psi))


def _wls(data: Dataset, ws: WeightState, y=None) -> np.ndarray:
    y = data.y if y is None else y
    rhs = data.X.T @ (ws.w * y)
    z = np.linalg.solve(ws.chol, rhs)
    return np.linalg.solve(ws.chol.T, z)


def wls_beta(data: Dataset, psi: float) -> np.ndarray:
    """Weighted least squares ``(X^T W X)^{-1} X^T W y`` at ``psi``."""
    return _wls(data, weights(data, psi))


def _residuals(data: Dataset, beta) -> np.ndarray:
    return data.y - data.X @ np.atleast_1d(beta)


def _loglik(data, beta, ws):
    r = _residuals(data, beta)
    return 0.5 * (float(np.sum(np.log(ws.w))) - float(np.sum(ws.w * r * r)))


def log_likelihood(data: Dataset, theta: Theta) -> float:
    """``{log|W| - R^T W R} / 2`` (constants dropped)."""
    return _loglik(data, theta.beta, weights(data, theta.psi))


def _score(data, beta, ws):
    r = _residuals(data, beta)
    wr = ws.w * r
    s_beta = data.X.T @ wr
    s_psi = 0.5 * (float(wr @ wr) - ws.trW)
    return np.append(s_beta, s_psi)


def score(data: Dataset, theta: Theta) -> np.ndarray:
    """Gradient of :func:`log_likelihood` with respect to ``(beta, psi)``."""
    return _score(data, theta.beta, weights(data, theta.psi))


def expected_info(data: Dataset, psi: float) -> np.ndarray:
    """Block-diagonal Fisher information: ``X^T W X`` and ``tr(W^2)/2``."""
    ws = weights(data, psi)
    p = data.p
    info = np.zeros((p + 1, p + 1))
    info[:p, :p] = ws.xtwx
    info[p, p] = 0.5 * ws.trW2
    return info


def observed_info(data: Dataset, theta: Theta) -> np.ndarray:
    """Negative Hessian of the log-likelihood."""
    ws = weights(data, theta.psi)
    p = data.p
    r = _residuals(data, theta.beta)
    w2r = ws.w**2 * r
    info = np.empty((p + 1, p + 1))
    info[:p, :p] = ws.xtwx
    info[:p, p] = info[p, :p] = data.X.T @ w2r
    info[p, p] = float(np.sum(ws.w**3 * r * r)) - 0.5 * ws.trW2
    return info


def _trace_wh(data, ws) -> float:
    # tr(W H) = tr[(X^T W X)^{-1} X^T W^2 X]
    X = data.X
    if X.shape[1] == 1:
        return float(np.sum(ws.w**2 * X[:, 0] ** 2)) / float(ws.xtwx[0, 0])
    B = np.linalg.solve(ws.chol, X.T * ws.w)  # L^{-1} X^T W
    return float(np.sum(B * B))


def _psi_penalty_grad(data, ws, method) -> float:
    """d/dpsi of the method's penalty."""
    if method is Method.ML:
        return 0.0
    g = 0.5 * _trace_wh(data, ws)
    if method is Method.MEDIAN_BRPL:
        g += ws.trW3 / (3.0 * ws.trW2)
    return g


def _penalty(ws, method) -> float:
    if method is Method.ML:
        return 0.0
    pen = -0.5 * ws.logdet_xtwx
    if method is Method.MEDIAN_BRPL:
        pen -= np.log(ws.trW2) / 6.0
    return pen


def median_adjustment_closed(data: Dataset, psi: float) -> np.ndarray:
    """Median bias-reducing score adjustment in closed form.

    The beta block is zero; the psi entry is
    ``tr(W H)/2 + tr(W^3) / (3 tr(W^2))`` with ``H = X (X^T W X)^{-1} X^T W``.
    """
    ws = weights(data, psi)
    out = np.zeros(data.p + 1)
    out[-1] = _psi_penalty_grad(data, ws, Method.MEDIAN_BRPL)
    return out


def _pq_matrices(data, ws):
    """Cumulant matrices P_t and Q_t, t = 1..p+1, as dense arrays."""
    X = data.X
    p = data.p
    n = p + 1
    w2 = ws.w**2
    xtw2x = X.T @ (w2[:, None] * X)
    P = np.zeros((n, n, n))
    Q = np.zeros((n, n, n))
    for t in range(p):
        col = xtw2x[:, t]
        P[t, :p, p] = col
        P[t, p, :p] = col
        Q[t] = -P[t]
    P[p, :p, :p] = xtw2x
    P[p, p, p] = ws.trW3
    Q[p, p, p] = -ws.trW3
    return P, Q


def median_adjustment_general(data: Dataset, psi: float) -> np.ndarray:
    """Median bias-reducing adjustment assembled from its generic form.

    Builds ``A_t = tr[i^{-1}(P_t + Q_t)]/2 - i_t^T Kd`` with
    ``Kd_t = (i^t)^T K_t`` and
    ``K_tu = tr[i^t (i^t)^T / i^tt (P_u/3 + Q_u/2)]``, from dense
    information and cumulant matrices.  Slow; kept as an independent check
    of :func:`median_adjustment_closed`.
    """
    ws = weights(data, psi)
    info = expected_info(data, psi)
    try:
        inv = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise RankDeficiencyError("expected information is singular") from None
    P, Q = _pq_matrices(data, ws)
    n = info.shape[0]
    Kmat = np.empty((n, n))
    for t in range(n):
        col = inv[:, t]
        proj = np.outer(col, col) / inv[t, t]
        for u in range(n):
            Kmat[t, u] = np.trace(proj @ (P[u] / 3.0 + Q[u] / 2.0))
    Kdag = np.array([inv[:, t] @ Kmat[t] for t in range(n)])
    return np.array(
        [0.5 * np.trace(inv @ (P[t] + Q[t])) - info[:, t] @ Kdag for t in range(n)]
    )


def _penalized_loglik(data, beta, ws, method) -> float:
    return _loglik(data, beta, ws) + _penalty(ws, method)


def penalized_loglik(data: Dataset, theta: Theta, method) -> float:
    """Log-likelihood plus the penalty of ``method`` (ML has none)."""
    method = _check_likelihood_method(method)
    return _penalized_loglik(data, theta.beta, weights(data, theta.psi), method)


def _adjusted_score_psi(data, beta, ws, method) -> float:
    r = _residuals(data, beta)
    wr = ws.w * r
    return 0.5 * (float(wr @ wr) - ws.trW) + _psi_penalty_grad(data, ws, method)


def adjusted_score_psi(data: Dataset, theta: Theta, method) -> float:
    """Derivative of :func:`penalized_loglik` with respect to ``psi``."""
    method = _check_likelihood_method(method)
    return _adjusted_score_psi(data, theta.beta, weights(data, theta.psi), method)


def _adjusted_score(data, beta, ws, method) -> np.ndarray:
    s = _score(data, beta, ws)
    s[-1] += _psi_penalty_grad(data, ws, method)
    return s


def adjusted_score(data: Dataset, theta: Theta, method) -> np.ndarray:
    """Full gradient of :func:`penalized_loglik`; the beta block is ``s_beta``."""
    method = _check_likelihood_method(method)
    return _adjusted_score(data, theta.beta, weights(data, theta.psi), method)
