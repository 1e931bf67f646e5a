import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tdbm.rbm import LayerParams, RbmModel  # noqa: E402


def random_rbm(rng, m, n, T=1.0, scale=0.7, bias_tempered=True):
    params = LayerParams(rng.normal(0, scale, (m, n)), rng.normal(0, scale, m), rng.normal(0, scale, n))
    return RbmModel(params, T, bias_tempered)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_semeion(tmp_path):
    """60 noisy copies of three 16x16 prototypes in Semeion text format."""
    from tdbm.datasets import format_semeion

    r = np.random.default_rng(0)
    protos = r.integers(0, 2, (3, 256))
    idx = r.integers(0, 3, 60)
    rows = np.where(r.random((60, 256)) < 0.05, 1 - protos[idx], protos[idx])
    path = tmp_path / "tiny.data"
    path.write_text(format_semeion(rows, idx))
    return path


def tiny_values(data_path, out_dir, **extra):
    values = dict(dataset="semeion", data_path=str(data_path), architecture=[256, 8, 6], epochs=2,
                  temperatures=[0.5, 2.0], runs=5, output_dir=str(out_dir), filter_tiles=8)
    values.update(extra)
    return values


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.LINES:
            terminalreporter.write_line(line)
