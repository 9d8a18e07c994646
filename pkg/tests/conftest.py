import numpy as np
import pytest

from brmeta import Dataset


def random_dataset(rng, K=None, p=None):
    """Random meta-regression instance with a well-conditioned design."""
    K = int(rng.integers(3, 31)) if K is None else K
    p = int(rng.integers(1, min(4, K - 1) + 1)) if p is None else p
    X = np.column_stack([np.ones(K), rng.normal(size=(K, p - 1))])
    sigma2 = rng.uniform(0.05, 2.0, K)
    beta = rng.normal(size=p)
    y = X @ beta + rng.normal(scale=np.sqrt(sigma2 + rng.uniform(0, 1.5)))
    return Dataset(y, sigma2, X)


@pytest.fixture
def toy():
    return Dataset([0.0, 2.0], [1.0, 1.0])


# acceptance reporting: one line per criterion in the terminal summary

ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    crit = getattr(report, "acceptance", None)
    if crit is None:
        for name, value in report.user_properties:
            if name == "acceptance":
                crit = value
    if crit is not None and report.when == "call":
        ACCEPTANCE[crit[0]] = ("PASS" if report.passed else "FAIL", crit[1], report.longreprtext.splitlines()[-1:] if report.failed else [])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        status, title, detail = ACCEPTANCE[key]
        line = f"criterion {key:>2}: {status}  {title}"
        if detail:
            line += f"  [{detail[0].strip()[:160]}]"
        terminalreporter.write_line(line)


@pytest.fixture
def criterion(record_property):
    def mark(number, title):
        record_property("acceptance", (number, title))

    return mark
