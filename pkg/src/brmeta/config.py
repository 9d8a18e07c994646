"""Declarative simulation configs (TOML).

Schema::

    study = "brockwell-estimation"   # | brockwell-coverage | brockwell-power | bootstrap
    seed = 42                        # optional, default 0
    reps = 2000                      # optional, default 10000

    [brockwell]                      # brockwell-* studies
    beta0 = 0.5
    psi_grid = [0.0, 0.05, 0.1]
    K_list = [5, 20, 200]
    psi_interval = [0.0, 3.0]
    level = 0.95
    deltas = [0.0, 0.75, 1.5, 2.25]          # power only
    calibration = ["asymptotic", "exact"]    # power only

    [bootstrap]                      # bootstrap study
    dataset = "cocoa"                # bundled name, or a CSV path
    measure = "var"                  # "se" | "var"; only for CSV paths
    covariates = []                  # CSV paths only
    test_coefficient = 1             # 1-based; default: last coefficient
    alternative = "two-sided"        # p-value: two-sided | greater | less
    level = 0.95
    beta0 = [-2.799]                 # optional; default: ML fit of the data
    psi0 = 4.199                     # optional; default: ML fit of the data
    name = "cocoa"                   # design label in the output
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigurationError
from .io import BUNDLED, load_dataset, read_study_csv
from .model import Theta
from .simulation import ALTERNATIVES, BootstrapDesign, BrockwellDesign

STUDIES = ("brockwell-estimation", "brockwell-coverage", "brockwell-power", "bootstrap")


@dataclass
class StudyConfig:
    study: str
    design: object
    deltas: tuple | None = None
    calibration: tuple = ("asymptotic", "exact")


def _fail(path, msg):
    raise ConfigurationError(f"{path}: {msg}")


def _number(tree, key, path, default=None, lo=None, integer=False):
    if key not in tree:
        if default is None:
            _fail(f"{path}.{key}", "required")
        return default
    v = tree[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not isinstance(v, int)):
        _fail(f"{path}.{key}", f"expected {'an integer' if integer else 'a number'}, got {v!r}")
    if lo is not None and v < lo:
        _fail(f"{path}.{key}", f"must be >= {lo}")
    return v


def _numbers(tree, key, path, default=None, lo=None, integer=False, length=None):
    if key not in tree:
        if default is None:
            _fail(f"{path}.{key}", "required")
        return tuple(default)
    v = tree[key]
    if not isinstance(v, list) or not v:
        _fail(f"{path}.{key}", "expected a non-empty list")
    if length is not None and len(v) != length:
        _fail(f"{path}.{key}", f"expected {length} values")
    for i, item in enumerate(v):
        _number({"_": item}, "_", f"{path}.{key}[{i}]", lo=lo, integer=integer)
    return tuple(v)


def _unknown(tree, allowed, path):
    extra = sorted(set(tree) - set(allowed))
    if extra:
        _fail(f"{path}.{extra[0]}" if path else extra[0], "unknown key")


def parse_config(tree: dict, base_dir: Path | None = None, reps=None, seed=None) -> StudyConfig:
    """Validate a parsed config tree; ``reps``/``seed`` override the file."""
    _unknown(tree, ("study", "seed", "reps", "brockwell", "bootstrap"), "")
    study = tree.get("study")
    if study not in STUDIES:
        _fail("study", f"expected one of {', '.join(STUDIES)}, got {study!r}")
    seed = seed if seed is not None else _number(tree, "seed", "$", default=0, lo=0, integer=True)
    reps = reps if reps is not None else _number(tree, "reps", "$", default=10000, lo=1, integer=True)

    if study.startswith("brockwell"):
        sub = tree.get("brockwell", {})
        if not isinstance(sub, dict):
            _fail("brockwell", "expected a table")
        _unknown(
            sub,
            ("beta0", "psi_grid", "K_list", "psi_interval", "level", "deltas", "calibration"),
            "brockwell",
        )
        ref = BrockwellDesign.power_default() if study == "brockwell-power" else BrockwellDesign()
        level = _number(sub, "level", "brockwell", default=ref.level)
        if not 0 < level < 1:
            _fail("brockwell.level", "must lie in (0, 1)")
        interval = _numbers(sub, "psi_interval", "brockwell", default=ref.psi_interval, lo=0, length=2)
        if not interval[0] < interval[1]:
            _fail("brockwell.psi_interval", "lower end must be below upper end")
        design = BrockwellDesign(
            beta0=float(_number(sub, "beta0", "brockwell", default=ref.beta0)),
            psi_grid=tuple(float(v) for v in _numbers(sub, "psi_grid", "brockwell", ref.psi_grid, lo=0)),
            K_list=_numbers(sub, "K_list", "brockwell", ref.K_list, lo=2, integer=True),
            reps=int(reps),
            seed=int(seed),
            psi_interval=tuple(float(v) for v in interval),
            level=float(level),
            deltas=tuple(float(v) for v in _numbers(sub, "deltas", "brockwell", ref.deltas, lo=0)),
        )
        calibration = sub.get("calibration", ["asymptotic", "exact"])
        if not isinstance(calibration, list) or not set(calibration) <= {"asymptotic", "exact"}:
            _fail("brockwell.calibration", "expected a list drawn from 'asymptotic', 'exact'")
        return StudyConfig(study, design, design.deltas, tuple(calibration))

    sub = tree.get("bootstrap")
    if not isinstance(sub, dict):
        _fail("bootstrap", "required table for the bootstrap study")
    _unknown(
        sub,
        ("dataset", "measure", "covariates", "test_coefficient", "alternative", "level", "beta0", "psi0", "name"),
        "bootstrap",
    )
    name = sub.get("dataset")
    if not isinstance(name, str):
        _fail("bootstrap.dataset", "expected a bundled dataset name or a CSV path")
    if name in BUNDLED:
        data = load_dataset(name)
    else:
        path = Path(name)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            _fail("bootstrap.dataset", f"no such bundled dataset or file: {name}")
        measure = sub.get("measure", "se")
        if measure not in ("se", "var"):
            _fail("bootstrap.measure", "expected 'se' or 'var'")
        covs = sub.get("covariates", [])
        if not isinstance(covs, list) or not all(isinstance(c, str) for c in covs):
            _fail("bootstrap.covariates", "expected a list of column names")
        data = read_study_csv(
            path,
            se_column="se" if measure == "se" else None,
            var_column="var" if measure == "var" else None,
            covariates=tuple(covs),
        )
    j = _number(sub, "test_coefficient", "bootstrap", default=data.p, lo=1, integer=True)
    if j > data.p:
        _fail("bootstrap.test_coefficient", f"must be between 1 and {data.p}")
    level = _number(sub, "level", "bootstrap", default=0.95)
    if not 0 < level < 1:
        _fail("bootstrap.level", "must lie in (0, 1)")
    alternative = sub.get("alternative", "two-sided")
    if alternative not in ALTERNATIVES:
        _fail("bootstrap.alternative", f"expected one of {', '.join(ALTERNATIVES)}, got {alternative!r}")
    theta0 = None
    if "beta0" in sub or "psi0" in sub:
        beta0 = _numbers(sub, "beta0", "bootstrap", length=data.p)
        psi0 = _number(sub, "psi0", "bootstrap", lo=0)
        theta0 = Theta(beta0, psi0)
    label = sub.get("name", name if name in BUNDLED else "bootstrap")
    design = BootstrapDesign(
        base=data,
        theta0=theta0,
        reps=int(reps),
        seed=int(seed),
        name=str(label),
        test_index=int(j) - 1,
        level=float(level),
        alternative=alternative,
    )
    return StudyConfig(study, design)


def load_config(path, reps=None, seed=None) -> StudyConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            tree = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"{path}: no such file") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    return parse_config(tree, base_dir=path.parent, reps=reps, seed=seed)
