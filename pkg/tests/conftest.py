from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from isospec import spectral
from isospec.embedio import EmbeddingSpace

# Every Spectrum built anywhere in the suite is recorded so the
# erank <= rank <= d chain can be checked over all of them at the end.
RECORDED_SPECTRA: list[np.ndarray] = []

_original_post_init = spectral.Spectrum.__post_init__


def _recording_post_init(self):
    _original_post_init(self)
    if self.sigma.sum() > 0:
        RECORDED_SPECTRA.append(self.sigma)


spectral.Spectrum.__post_init__ = _recording_post_init


def write_vec(path: Path, vocab, matrix, header=None) -> Path:
    matrix = np.asarray(matrix, dtype=np.float64)
    n, d = matrix.shape
    lines = [header if header is not None else f"{n} {d}"]
    for tok, row in zip(vocab, matrix):
        lines.append(tok + " " + " ".join(repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def make_space(matrix, lang="xx", **flags) -> EmbeddingSpace:
    matrix = np.asarray(matrix, dtype=np.float64)
    return EmbeddingSpace(lang, tuple(f"w{i}" for i in range(matrix.shape[0])), matrix, **flags)


def random_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting --------------------------------------------------------

_CRITERIA: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_collection_modifyitems(config, items):
    # the erank-chain criterion inspects spectra from the whole run: keep it last
    last = [it for it in items if it.get_closest_marker("runs_last")]
    rest = [it for it in items if not it.get_closest_marker("runs_last")]
    items[:] = rest + last


def pytest_runtest_logreport(report):
    marker = _MARKERS.get(report.nodeid)
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _CRITERIA[report.nodeid] = (marker, status)


_MARKERS: dict[str, str] = {}


def pytest_itemcollected(item):
    m = item.get_closest_marker("criterion")
    if m is not None:
        number, title = m.args
        _MARKERS[item.nodeid] = f"criterion {number:>2}: {title}"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label, status in sorted(_CRITERIA.values(), key=lambda x: int(x[0].split()[1].rstrip(":"))):
        terminalreporter.write_line(f"[{status}] {label}")
