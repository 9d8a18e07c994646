"""Monte Carlo studies for the ML and bias-reduced estimators.

Two kinds of design are supported:

* :class:`BrockwellDesign` -- meta-analyses with ``beta = 0.5``, within-study
  variances ``0.25 chi2_1`` truncated to ``(0.009, 0.6)`` (drawn once per
  number of studies and held fixed), over a grid of ``psi`` and ``K``.
* :class:`BootstrapDesign` -- parametric bootstrap at a fitted model for a
  given dataset (variances and design held fixed).

Every replicate draws from its own random stream, derived from the master
seed and a key naming the study, the cell and the replicate index.  Results
therefore do not depend on the number of worker processes or on how the
replicates are chunked.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .estimation import FitOptions, fit as fit_model, two_step
from .inference import (
    ProfileTarget,
    _constrained_objective,
    chisq_quantile,
    chisq_sf,
    norm_cdf,
    norm_quantile,
)
from .model import Dataset, Method, Theta

__all__ = [
    "ALPHA_GRID",
    "METHODS",
    "BrockwellDesign",
    "BootstrapDesign",
    "SimMetrics",
    "replicate_rng",
    "brockwell_variances",
    "simulate_sample",
    "estimation_study",
    "coverage_study",
    "power_study",
    "pvalue_distribution_study",
]

ALTERNATIVES = ("two-sided", "greater", "less")
ALPHA_GRID = (0.01, 0.025, 0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95, 0.975, 0.99)
METHODS = (Method.ML, Method.MEAN_BRPL, Method.MEDIAN_BRPL)
CHUNK = 250

# first element of every spawn key
_VARIANCES, _ESTIMATION, _COVERAGE, _POWER, _CALIBRATION, _BOOTSTRAP = range(6)

# per-replicate record layout, one row per method
_FIELDS = (
    "psi_hat",
    "beta_hat",
    "converged",
    "boundary",
    "iterations",
    "stat_beta",
    "root_beta",
    "stat_psi",
    "profile_converged",
)
_F = {name: i for i, name in enumerate(_FIELDS)}


def _key(value: float) -> int:
    return int(round(float(value) * 1e9))


def replicate_rng(seed: int, *key) -> np.random.Generator:
    """Independent generator for ``(seed, key)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)


def brockwell_variances(K: int, rng: np.random.Generator, max_draws: int = 10**6) -> np.ndarray:
    """``K`` draws of ``0.25 Z^2`` accepted only inside ``(0.009, 0.6)``."""
    if K < 2:
        raise ConfigurationError("K must be at least 2")
    out = np.empty(0)
    drawn = 0
    while out.size < K:
        if drawn >= max_draws:
            raise RuntimeError("variance rejection sampler exceeded its draw budget")
        z = rng.standard_normal(K)
        drawn += K
        v = 0.25 * z * z
        out = np.concatenate([out, v[(v > 0.009) & (v < 0.6)]])
    return out[:K]


def simulate_sample(X, beta, psi, sigma2, rng: np.random.Generator) -> Dataset:
    """Draw ``y = X beta + u + e`` with ``u ~ N(0, psi)``, ``e ~ N(0, sigma2)``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    sigma2 = np.asarray(sigma2, dtype=float)
    K = sigma2.shape[0]
    if psi < 0:
        raise ConfigurationError("psi must be >= 0")
    u = rng.normal(0.0, math.sqrt(psi), K)
    e = rng.normal(0.0, 1.0, K) * np.sqrt(sigma2)
    y = X @ np.atleast_1d(np.asarray(beta, dtype=float)) + u + e
    return Dataset(y, sigma2, X)


@dataclass(frozen=True)
class BrockwellDesign:
    beta0: float = 0.5
    psi_grid: tuple = tuple(np.round(np.linspace(0.0, 0.1, 11), 4))
    K_list: tuple = (5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 100, 200)
    reps: int = 10000
    seed: int = 0
    psi_interval: tuple = (0.0, 3.0)
    level: float = 0.95
    deltas: tuple = tuple(np.round(np.linspace(0.0, 2.25, 10), 4))
    variance_law: str = field(default="0.25*chi2_1 truncated to (0.009, 0.6)", compare=False)

    def __post_init__(self):
        if self.reps < 1:
            raise ConfigurationError("reps must be >= 1")
        if any(p < 0 for p in self.psi_grid):
            raise ConfigurationError("psi_grid values must be >= 0")
        if any(int(k) < 2 for k in self.K_list):
            raise ConfigurationError("K_list values must be >= 2")

    @classmethod
    def power_default(cls, **kw):
        kw.setdefault("K_list", (5, 10, 15))
        kw.setdefault("psi_grid", (0.0, 0.025, 0.05))
        return cls(**kw)

    def variances(self, K: int) -> np.ndarray:
        return brockwell_variances(int(K), replicate_rng(self.seed, _VARIANCES, int(K)))


@dataclass(frozen=True)
class BootstrapDesign:
    """Parametric bootstrap at ``theta0`` (default: the ML fit of ``base``).

    ``test_index`` is the 0-based coefficient whose ratio test, p-values and
    coverage are recorded.  ``alternative`` selects the p-value: two-sided
    (chi-square reference) or one-sided ``"greater"``/``"less"`` (signed root
    against the standard normal).
    """

    base: Dataset
    theta0: Theta | None = None
    reps: int = 10000
    seed: int = 0
    name: str = "bootstrap"
    test_index: int | None = None
    level: float = 0.95
    psi_interval: tuple | None = None
    alternative: str = "two-sided"

    def __post_init__(self):
        if self.reps < 1:
            raise ConfigurationError("reps must be >= 1")
        if self.alternative not in ALTERNATIVES:
            raise ConfigurationError(f"alternative must be one of {', '.join(ALTERNATIVES)}")
        if self.theta0 is None:
            f = fit_model(self.base, Method.ML)
            object.__setattr__(self, "theta0", Theta(f.beta, f.psi))
        if self.test_index is None:
            object.__setattr__(self, "test_index", self.base.p - 1)
        if not 0 <= self.test_index < self.base.p:
            raise ConfigurationError("test_index out of range")


@dataclass
class SimMetrics:
    """Tidy metric rows plus the raw per-replicate records."""

    rows: list = field(default_factory=list)
    raw: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    COLUMNS = ("design", "K", "psi_true", "method", "metric", "value", "reps", "seed")

    def add(self, design, K, psi, method, metric, value, reps, seed):
        self.rows.append(
            {
                "design": design,
                "K": int(K),
                "psi_true": float(psi),
                "method": method.value if isinstance(method, Method) else str(method),
                "metric": metric,
                "value": float(value),
                "reps": int(reps),
                "seed": int(seed),
            }
        )

    def extend(self, other: "SimMetrics"):
        self.rows.extend(other.rows)
        self.raw.update(other.raw)
        self.notes.update(other.notes)
        return self

    def value(self, metric, method=None, K=None, psi=None, design=None) -> float:
        hits = [
            r
            for r in self.rows
            if r["metric"] == metric
            and (method is None or r["method"] == Method.parse(method).value)
            and (K is None or r["K"] == K)
            and (psi is None or abs(r["psi_true"] - psi) < 1e-12)
            and (design is None or r["design"] == design)
        ]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match metric={metric} method={method} K={K} psi={psi}")
        return hits[0]["value"]

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow(
                [
                    r["design"],
                    r["K"],
                    format(r["psi_true"], ".10g"),
                    r["method"],
                    r["metric"],
                    format(r["value"], ".10g"),
                    r["reps"],
                    r["seed"],
                ]
            )
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


# ---------------------------------------------------------------------------
# replicate workers
# ---------------------------------------------------------------------------


def _analyse(data, truth_beta, truth_psi, test_value, index, opts, profiles):
    rec = np.full((len(METHODS), len(_FIELDS)), np.nan)
    for i, m in enumerate(METHODS):
        f = two_step(data, m, opts)
        row = rec[i]
        row[_F["psi_hat"]] = f.psi
        row[_F["beta_hat"]] = f.beta[index]
        row[_F["converged"]] = f.converged
        row[_F["boundary"]] = f.at_boundary
        row[_F["iterations"]] = f.iterations
        if not profiles:
            continue
        target = ProfileTarget.beta(index, test_value)
        obj, ok_b = _constrained_objective(data, m, target, f, opts, strict=False)
        stat = max(0.0, 2.0 * (f.objective - obj))
        row[_F["stat_beta"]] = stat
        row[_F["root_beta"]] = math.copysign(math.sqrt(stat), f.beta[index] - test_value)
        if truth_psi is not None:
            obj, ok_p = _constrained_objective(
                data, m, ProfileTarget.psi(truth_psi), f, opts, strict=False
            )
            row[_F["stat_psi"]] = max(0.0, 2.0 * (f.objective - obj))
        else:
            ok_p = True
        row[_F["profile_converged"]] = ok_b and ok_p
    return rec


def _run_chunk(task):
    (seed, key, sigma2, X, beta, psi, test_value, index, opts, profiles, start, stop) = task
    out = []
    for rep in range(start, stop):
        rng = replicate_rng(seed, *key, rep)
        data = simulate_sample(X, beta, psi, sigma2, rng)
        psi_test = psi if profiles == "both" else None
        out.append(_analyse(data, beta, psi_test, test_value, index, opts, bool(profiles)))
    return out


def _run_cell(seed, key, sigma2, X, beta, psi, reps, *, test_value, index, opts, profiles, workers):
    tasks = [
        (seed, key, sigma2, X, beta, psi, test_value, index, opts, profiles, s, min(s + CHUNK, reps))
        for s in range(0, reps, CHUNK)
    ]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=int(workers)) as ex:
            chunks = list(ex.map(_run_chunk, tasks))
    else:
        chunks = [_run_chunk(t) for t in tasks]
    return np.stack([rec for chunk in chunks for rec in chunk])  # (reps, methods, fields)


def _col(records, name):
    return records[:, :, _F[name]]


def _estimation_rows(out, design_name, K, psi, records, beta_true, seed):
    reps = records.shape[0]
    psi_hat = _col(records, "psi_hat")
    beta_hat = _col(records, "beta_hat")
    for i, m in enumerate(METHODS):
        out.add(design_name, K, psi, m, "underestimation", np.mean(psi_hat[:, i] <= psi), reps, seed)
        out.add(design_name, K, psi, m, "mean_bias_psi", np.mean(psi_hat[:, i] - psi), reps, seed)
        out.add(design_name, K, psi, m, "median_psi", np.median(psi_hat[:, i]), reps, seed)
        out.add(design_name, K, psi, m, "mean_bias_beta", np.mean(beta_hat[:, i] - beta_true), reps, seed)
        out.add(design_name, K, psi, m, "boundary_fraction", np.mean(_col(records, "boundary")[:, i]), reps, seed)
        out.add(design_name, K, psi, m, "mean_iterations", np.mean(_col(records, "iterations")[:, i]), reps, seed)
        out.add(
            design_name, K, psi, m, "nonconvergence", 1.0 - np.mean(_col(records, "converged")[:, i]), reps, seed
        )


def _coverage_rows(out, design_name, K, psi, records, level, seed):
    reps = records.shape[0]
    crit = chisq_quantile(level, 1)
    z = norm_quantile(level)
    for i, m in enumerate(METHODS):
        sb = _col(records, "stat_beta")[:, i]
        out.add(design_name, K, psi, m, "coverage_beta_two_sided", np.mean(sb <= crit), reps, seed)
        rb = _col(records, "root_beta")[:, i]
        out.add(design_name, K, psi, m, "coverage_beta_one_sided", np.mean(rb <= z), reps, seed)
        sp = _col(records, "stat_psi")[:, i]
        out.add(design_name, K, psi, m, "coverage_psi_two_sided", np.mean(sp <= crit), reps, seed)
        pc = _col(records, "profile_converged")[:, i]
        out.add(design_name, K, psi, m, "profile_nonconvergence", 1.0 - np.mean(pc), reps, seed)


def _opts(interval) -> FitOptions:
    return FitOptions(psi_interval=tuple(interval) if interval is not None else None)


BOUNDARY_NOTE = (
    "underestimation counts psi_hat <= psi_true; fits pinned at psi = 0 are included, "
    "so at psi_true = 0 the value is the proportion of boundary fits"
)


def _brockwell(design: BrockwellDesign, workers, profiles, name, stream):
    out = SimMetrics(notes={"boundary_convention": BOUNDARY_NOTE})
    opts = _opts(design.psi_interval)
    for K in design.K_list:
        K = int(K)
        sigma2 = design.variances(K)
        X = np.ones((K, 1))
        for psi in design.psi_grid:
            records = _run_cell(
                design.seed,
                (stream, K, _key(psi)),
                sigma2,
                X,
                [design.beta0],
                float(psi),
                design.reps,
                test_value=design.beta0,
                index=0,
                opts=opts,
                profiles=profiles,
                workers=workers,
            )
            out.raw[(K, float(psi))] = records
            _estimation_rows(out, name, K, psi, records, design.beta0, design.seed)
            if profiles:
                _coverage_rows(out, name, K, psi, records, design.level, design.seed)
    return out


def estimation_study(design: BrockwellDesign, workers: int = 1) -> SimMetrics:
    """Underestimation, bias and convergence of psi estimates per (K, psi) cell."""
    return _brockwell(design, workers, False, "brockwell-estimation", _ESTIMATION)


def coverage_study(design: BrockwellDesign, level: float | None = None, workers: int = 1) -> SimMetrics:
    """Coverage of ratio-statistic intervals for beta (one- and two-sided) and psi.

    The estimation metrics of the same replicates are reported as well.
    """
    if level is not None and level != design.level:
        design = BrockwellDesign(**{**design.__dict__, "level": level})
    return _brockwell(design, workers, "both", "brockwell-coverage", _COVERAGE)


def power_study(
    design: BrockwellDesign,
    deltas=None,
    calibration=("asymptotic", "exact"),
    workers: int = 1,
) -> SimMetrics:
    """Rejection rates of the ratio tests of ``beta = beta0``.

    Data are generated at ``beta0 + delta / sqrt(K)``.  ``asymptotic`` uses
    the chi-square(1) 95% point; ``exact`` uses the 95th percentile of each
    statistic under an independent null simulation with the same variances.
    """
    deltas = design.deltas if deltas is None else deltas
    calibration = tuple(calibration)
    bad = set(calibration) - {"asymptotic", "exact"}
    if bad:
        raise ConfigurationError(f"unknown calibration {sorted(bad)}")
    out = SimMetrics()
    opts = _opts(design.psi_interval)
    alpha = 1.0 - design.level
    asym = chisq_quantile(design.level, 1)
    for K in design.K_list:
        K = int(K)
        sigma2 = design.variances(K)
        X = np.ones((K, 1))
        run = dict(test_value=design.beta0, index=0, opts=opts, profiles="beta", workers=workers)
        for psi in design.psi_grid:
            psi = float(psi)
            crit = {m: asym for m in METHODS}
            if "exact" in calibration:
                null = _run_cell(
                    design.seed, (_CALIBRATION, K, _key(psi)), sigma2, X, [design.beta0], psi, design.reps, **run
                )
                out.raw[("null", K, psi)] = null
                for i, m in enumerate(METHODS):
                    c = float(np.quantile(_col(null, "stat_beta")[:, i], design.level))
                    crit[m] = c
                    out.add("brockwell-power", K, psi, m, "critical_value_exact", c, design.reps, design.seed)
            for delta in deltas:
                b = design.beta0 + float(delta) / math.sqrt(K)
                records = _run_cell(
                    design.seed, (_POWER, K, _key(psi), _key(delta)), sigma2, X, [b], psi, design.reps, **run
                )
                out.raw[(K, psi, float(delta))] = records
                stat = _col(records, "stat_beta")
                for i, m in enumerate(METHODS):
                    if "asymptotic" in calibration:
                        out.add(
                            "brockwell-power", K, psi, m, f"power_asymptotic_delta={float(delta):g}",
                            np.mean(stat[:, i] > asym), design.reps, design.seed,
                        )
                    if "exact" in calibration:
                        out.add(
                            "brockwell-power", K, psi, m, f"power_exact_delta={float(delta):g}",
                            np.mean(stat[:, i] > crit[m]), design.reps, design.seed,
                        )
    out.notes["nominal_size"] = alpha
    return out


def pvalue_distribution_study(design: BootstrapDesign, workers: int = 1) -> SimMetrics:
    """Parametric bootstrap at ``theta0``.

    Reports, per method: underestimation probability of psi, mean biases,
    coverage of the ratio intervals for the tested coefficient and psi, and
    the empirical CDF of the ratio-test p-value (coefficient at its true
    value, sidedness from ``design.alternative``) over :data:`ALPHA_GRID`.
    """
    base, th = design.base, design.theta0
    j = design.test_index
    records = _run_cell(
        design.seed,
        (_BOOTSTRAP,),
        base.sigma2,
        base.X,
        th.beta,
        th.psi,
        design.reps,
        test_value=float(th.beta[j]),
        index=j,
        opts=_opts(design.psi_interval),
        profiles="both",
        workers=workers,
    )
    notes = {"boundary_convention": BOUNDARY_NOTE, "pvalue_alternative": design.alternative}
    out = SimMetrics(raw={"bootstrap": records}, notes=notes)
    name, K, psi, reps, seed = design.name, base.K, th.psi, design.reps, design.seed
    _estimation_rows(out, name, K, psi, records, th.beta[j], seed)
    _coverage_rows(out, name, K, psi, records, design.level, seed)
    stat = _col(records, "stat_beta")
    root = _col(records, "root_beta")
    for i, m in enumerate(METHODS):
        if design.alternative == "two-sided":
            pvals = np.array([chisq_sf(s, 1) for s in stat[:, i]])
        else:
            sign = -1.0 if design.alternative == "greater" else 1.0
            pvals = np.array([norm_cdf(sign * r) for r in root[:, i]])
        for a in ALPHA_GRID:
            out.add(name, K, psi, m, f"pvalue_cdf_alpha={100 * a:g}", np.mean(pvals <= a), reps, seed)
    return out
