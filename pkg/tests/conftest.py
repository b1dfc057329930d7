"""Shared fixtures: synthetic datasets are expensive enough to build once."""

import numpy as np
import pytest

from sgks.synth import SynthConfig, synth_dataset

DATA_SEED = 11

# one line per acceptance criterion, echoed after the run so the verdicts
# survive output capture (see test_acceptance.py)
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def rand_attention(rng: np.random.Generator, T: int, H: int) -> np.ndarray:
    """Row-stochastic (T, T, H) attention via per-row softmax."""
    logits = rng.standard_normal((T, T, H))
    rows = np.exp(logits - logits.max(axis=1, keepdims=True))
    return (rows / rows.sum(axis=1, keepdims=True)).astype(np.float32)


@pytest.fixture(scope="session")
def small_dataset():
    """8 supported + 8 contradicted traces, default geometry (T=64, 8 layers)."""
    return synth_dataset(8, SynthConfig(seed=DATA_SEED))


@pytest.fixture(scope="session")
def supported_trace(small_dataset):
    return next(t for t in small_dataset if t.label == 1)


@pytest.fixture(scope="session")
def contradicted_trace(small_dataset):
    return next(t for t in small_dataset if t.label == 0)
