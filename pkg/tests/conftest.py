import numpy as np
import pytest

from dactext.corpus import SyntheticSpec, generate_corpus
from dactext.model import ModelConfig, TaskSpec, model_init
from dactext.nn import make_rng


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def tiny_model():
    cfg = ModelConfig(vocab_size=30, tasks=[TaskSpec("site", 3), TaskSpec("behavior", 2)],
                      embed_dim=4, filter_widths=(2, 3), filters_per_width=3, max_len=40, seed=7)
    return model_init(cfg)


@pytest.fixture(scope="session")
def small_corpus():
    spec = SyntheticSpec(tasks=[TaskSpec("site", 3), TaskSpec("behavior", 2)], n_docs=300,
                         vocab_size=300, flip_rate=0.1, confuser_rate=0.2, seed=5)
    return generate_corpus(spec, make_rng(5))


_CRITERIA = {}


def record_criterion(number, passed, detail):
    _CRITERIA[number] = (passed, detail)


@pytest.fixture
def criterion(request):
    """Recorder for acceptance criteria; a test that errors is logged as FAIL."""
    number = request.node.get_closest_marker("criterion").args[0]
    yield lambda passed, detail: record_criterion(number, passed, detail)
    if number not in _CRITERIA:
        record_criterion(number, False, "test raised before reporting")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        passed, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
