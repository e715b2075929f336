import numpy as np
import pytest

from noncollide.model import DriftSpec, SystemSpec, dyson


@pytest.fixture
def dyson2():
    return dyson(2, x0=[-1.0, 1.0])


@pytest.fixture
def dyson3():
    return dyson(3, x0=[-2.0, 0.0, 2.0])


def random_spec(rng, d, affine=True):
    """Valid spec with random symmetric gamma, random sigma and ordered affine drift."""
    g = rng.uniform(0.2, 2.0, size=(d, d))
    g = (g + g.T) / 2
    np.fill_diagonal(g, 0.0)
    sigma = rng.normal(size=(d, d))
    if affine:
        drift = DriftSpec("affine", float(rng.normal()), tuple(np.sort(rng.normal(size=d))))
    else:
        drift = DriftSpec()
    x0 = np.cumsum(rng.uniform(0.5, 2.0, size=d)) - d
    return SystemSpec(g, drift, sigma, x0, 1.0)


def split_drift_oracle(spec, gaps):
    """Drift of each gap from the particle SDEs, minus the adjacent-pair repulsion 2 gamma / gap."""
    d = spec.d
    x = np.cumsum(gaps)
    drift = []
    for i in range(d):
        tot = 0.0
        for j in range(d):
            if j != i:
                tot += spec.gamma[i, j] / (x[i] - x[j])
        if spec.drift.kind != "zero":
            tot += spec.drift.intercepts[i] + spec.drift.slope * x[i]
        drift.append(tot)
    out = [drift[0]]
    for i in range(1, d):
        g = drift[i] - drift[i - 1]
        g -= 2.0 * spec.gamma[i, i - 1] / (x[i] - x[i - 1])
        out.append(g)
    return np.array(out)


# lines reported by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
