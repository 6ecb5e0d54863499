import numpy as np
import pytest

from mwad.dataset import EventDataset
from mwad.training import Detector


def make_dataset(features, labels=None, timestamps=None, names=None, name="fixture"):
    x = np.asarray(features, dtype=np.float64)
    m, n = x.shape
    labels = np.zeros(m, dtype=np.int64) if labels is None else np.asarray(labels)
    timestamps = np.arange(m) if timestamps is None else np.asarray(timestamps)
    names = tuple(f"f{j}" for j in range(n)) if names is None else tuple(names)
    return EventDataset(x, labels, timestamps, names, name)


def write_text(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def toy_detector(seed=0, mode="adaptive", n=4, w1=3, w2=2, hidden=2, scale=None):
    """Tiny detector; ``scale`` redraws every parameter uniform(-scale, scale)."""
    det = Detector.init(n, mode, w1=w1, w2=w2, hidden=hidden, seed=seed)
    if scale is not None:
        rng = np.random.default_rng(seed + 1000)
        for v in det.named().values():
            v[...] = rng.uniform(-scale, scale, v.shape)
    return det


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Lines recorded by the acceptance suite, printed once at the end of the run.
ACCEPTANCE = []


def record_criterion(number, title, passed, detail):
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
