import numpy as np
import pytest

from pissm.cli import fixture_path
from pissm.config import RunConfig
from pissm.features import prepare, read_csv
from pissm.model import ModelConfig, init_model


TINY = ModelConfig(features=3, window=8, subwindow=3, conv_filters=4, hidden=4, fc_units=3, dropout_rate=0.2, seed=0)


@pytest.fixture(scope="session")
def fixture_config():
    return RunConfig.load(fixture_path("fixture.cfg"))


@pytest.fixture(scope="session")
def fixture_dataset(fixture_config):
    rows = read_csv(fixture_path("fixture_90d.csv"))
    return prepare(rows, fixture_config.site(), fixture_config.split_spec(), fixture_config.max_gap)


@pytest.fixture(scope="session")
def fixture_samples(fixture_dataset):
    return {name: fixture_dataset.samples(name) for name in fixture_dataset.splits}


def random_batch(cfg: ModelConfig, n: int, seed: int, dtype=np.float64):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, cfg.rows, cfg.width)).astype(dtype)
    gates = rng.uniform(0, 1, size=(n, 2)).astype(dtype)
    y = rng.uniform(0.2, 1.0, size=n).astype(dtype)
    return X, gates, y


def live_params(cfg: ModelConfig, dtype=np.float64, seed=None):
    """Double-precision params with a large output bias so the terminal ReLU is active."""
    if seed is not None:
        cfg = ModelConfig(**{**cfg.__dict__, "seed": seed})
    p = init_model(cfg, dtype=dtype)
    p["out.bias"].data[:] = 1.0
    return p


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int(k.rstrip("ab")), k)):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
