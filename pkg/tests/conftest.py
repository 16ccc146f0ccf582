import numpy as np
import pytest

from cdnode import synth


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """A four-utterance synthetic dataset on disk (manifest path)."""
    root = tmp_path_factory.mktemp("small")
    spec = synth.SynthSpec(utterance_count=4, frames_per_utterance=300, rater_count=4, feature_dim=6, seed=3)
    return synth.write_dataset(root / "ds", spec)


ACCEPTANCE_LINES = {}


def record_acceptance(n, passed, detail):
    line = f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
