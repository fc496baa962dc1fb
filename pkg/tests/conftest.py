import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def half_noise(size=256, seed=0):
    """Left half flat gray, right half per-pixel noise; returns (raster, truth mask)."""
    g = np.random.default_rng(seed)
    r = np.full((size, size, 3), 0.5)
    r[:, size // 2 :] = g.random((size, size - size // 2, 3))
    truth = np.zeros((size, size), bool)
    truth[:, size // 2 :] = True
    return r, truth


def iou(a, b):
    return (a & b).sum() / max((a | b).sum(), 1)


# -- acceptance reporting -------------------------------------------------

import contextlib

ACCEPTANCE: dict = {}


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record PASS/FAIL for an acceptance criterion; ``detail`` is shown on the report line."""
    detail: dict = {}
    try:
        yield detail
    except BaseException:
        ACCEPTANCE[number] = (title, False, detail)
        raise
    ACCEPTANCE[number] = (title, True, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        extra = ", ".join(f"{k}={v}" for k, v in detail.items())
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}" + (f" ({extra})" if extra else ""))
