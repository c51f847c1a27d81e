import numpy as np
import pytest

from svbrdf_transfer.maps import ParameterMaps


def random_maps(rng, h, w):
    """Valid random maps with moderately tilted normals."""
    n = np.concatenate([rng.normal(0.0, 0.3, size=(h, w, 2)), np.ones((h, w, 1))], axis=-1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)
    return ParameterMaps(
        normal=n,
        diffuse=rng.uniform(0.0, 1.0, size=(h, w, 3)),
        roughness=rng.uniform(0.05, 1.0, size=(h, w)),
        specular=rng.uniform(0.0, 1.0, size=(h, w, 3)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def canonical():
    return ParameterMaps.constant(8, 8, diffuse=0.5, roughness=0.5, specular=0.04)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Record one pass/fail line per acceptance criterion."""
    def record(label: str, passed: bool, detail: str):
        line = f"{label}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
