import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from linkadditive.basis import BasisSpec, build_basis  # noqa: E402
from linkadditive.data import Dataset  # noqa: E402
from linkadditive.first_stage import FirstStageConfig, fit_first_stage  # noqa: E402
from linkadditive.link import logit_link  # noqa: E402
from linkadditive.montecarlo import Dgp, generate_sample  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one summary line per acceptance criterion."""

    def record(number, passed, detail, note=""):
        status = "PASS" if passed else "FAIL"
        if note:
            status = note
        line = f"criterion {number:>4}: {status}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def logit():
    return logit_link()


@pytest.fixture(scope="session")
def design_sample():
    """One sample from the two-covariate logit design, n = 500."""
    return generate_sample(Dgp(d=2, n=500), seed=7)


@pytest.fixture(scope="session")
def design_fit(design_sample, logit):
    basis = build_basis(BasisSpec(kappa=4))
    return fit_first_stage(design_sample, basis, logit, FirstStageConfig(kappa=(4, 2)))


def small_dataset(seed, n=None, d=2, binary=True):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(8, 21)) if n is None else n
    X = rng.uniform(-1, 1, size=(n, d))
    Y = (rng.uniform(size=n) < 0.5).astype(float) if binary else rng.normal(size=n)
    return Dataset(Y, X)
