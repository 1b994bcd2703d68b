"""Shared fixtures and the acceptance-summary reporter.

Acceptance tests record one ``(number, passed, detail)`` triple per
criterion through the ``criterion_log`` fixture; the terminal summary then
prints one PASS/FAIL line per criterion so the verdicts are visible in the
normal pytest output without ``-s``.
"""

from __future__ import annotations

import numpy as np
import pytest

from wdmix import (
    Dataset,
    contaminate_uniform,
    generate_sim,
    kmeans,
    model_from_labels,
    validate_dataset,
)

_ACCEPTANCE: list[tuple[int, str, bool, str]] = []


@pytest.fixture
def criterion_log():
    """Recorder for acceptance verdicts: call with (number, title, passed, detail)."""

    def record(number: int, title: str, passed: bool, detail: str) -> None:
        _ACCEPTANCE.append((number, title, bool(passed), detail))

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_ACCEPTANCE):
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number} ({title}): {verdict} - {detail}")


# ---------------------------------------------------------------------------
# small deterministic datasets shared across test modules


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260823)


@pytest.fixture(scope="session")
def blobs_2d() -> Dataset:
    """Three well-separated 2-D blobs, 150 points, fixed seed.

    The scale (sigma 10, separation 120) matches the default kernel
    bandwidth of 100, so nearest-neighbour weights land in a moderate
    range rather than saturating.
    """
    gen = np.random.default_rng(7)
    means = np.array([[0.0, 0.0], [120.0, 0.0], [0.0, 120.0]])
    points = np.vstack(
        [gen.normal(mu, 10.0, size=(50, 2)) for mu in means]
    )
    labels = np.repeat(np.arange(3), 50)
    order = gen.permutation(150)
    return validate_dataset(points[order], labels=labels[order])


@pytest.fixture(scope="session")
def blobs_model(blobs_2d):
    """A decent starting model for the blob data (k-means initialised)."""
    labels, _ = kmeans(blobs_2d, 3, restarts=4, seed=11)
    return model_from_labels(blobs_2d, labels)


@pytest.fixture(scope="session")
def easy_clean() -> Dataset:
    return generate_sim("easy", 600, seed=1000)


@pytest.fixture(scope="session")
def easy_contaminated(easy_clean) -> Dataset:
    return contaminate_uniform(easy_clean, 0.3, seed=2000)
