import warnings

import numpy as np
import pytest

from subvp import features, synth
from subvp.predictor import WindowSet, encode_angles


def random_windows(rng, B, m, n, *, n_maps=6, height=8, width=16, vocab=6):
    """Small random WindowSet with a few token sequences (sequence 0 is empty)."""
    maps = rng.random((n_maps, height, width))
    sequences = [(), (1,), (2, 3), (vocab - 1, 1, 2)]
    phi = rng.uniform(0, 2 * np.pi, (B, m + n))
    theta = rng.uniform(0.3, np.pi - 0.3, (B, m + n))
    enc = encode_angles(phi, theta)
    seq_ids = rng.integers(0, len(sequences), (B, m))
    return WindowSet(maps, sequences, rng.integers(0, n_maps, (B, m)), seq_ids,
                     (seq_ids > 0).astype(float), enc[:, :m], enc[:, m:],
                     np.stack([phi[:, m:], theta[:, m:]], axis=-1))


@pytest.fixture(scope="session")
def small_features():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cohorts = synth.generate_videos(2, 11, duration=20.0, n_guided=3, n_unguided=3)
        return features.from_cohorts(cohorts)


# -- acceptance summary: one PASS/FAIL line per criterion, printed after the run

_CRITERIA = {}
_NOTES = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    key = mark.args
    if rep.when == "call" or rep.failed:
        ok = rep.passed and _CRITERIA.get(key, True)
        _CRITERIA[key] = ok


@pytest.fixture
def note(request):
    """Attach a detail line to the criterion summary of the calling test."""
    key = request.node.get_closest_marker("criterion").args
    return lambda text: _NOTES.setdefault(key, []).append(text)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), ok in sorted(_CRITERIA.items()):
        terminalreporter.write_line(f"criterion {number} {'PASS' if ok else 'FAIL'}  {title}")
        for text in _NOTES.get((number, title), []):
            terminalreporter.write_line(f"    {text}")
