import numpy as np
import pytest

from twinbeam.channel import ChannelParams, generate_dataset
from twinbeam.config import load_config

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance(request, capsys):
    """Record and print one PASS/FAIL line per criterion, then assert it."""

    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        request.config.stash[_ACCEPTANCE_KEY].append(line)
        with capsys.disabled():
            print(f"\n{line}")
        assert passed, line

    return record


@pytest.fixture(scope="session")
def shipped_cfg():
    return load_config()


@pytest.fixture(scope="session")
def shipped_params(shipped_cfg):
    return shipped_cfg.channel.params()


@pytest.fixture(scope="session")
def shipped_datasets(shipped_cfg, shipped_params):
    """Bit-0 and bit-1 datasets of the shipped config (10^6 shots, seed 12345)."""
    return {b: generate_dataset(shipped_params, b, shipped_cfg.n_shots, shipped_cfg.seed) for b in (0, 1)}


@pytest.fixture(scope="session")
def small_params():
    return ChannelParams.from_detected(7.37, 0.07, 0.467, 350.0, (0.176, 0.381), 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


SMALL_OVERRIDES = {
    "n_shots": "60000",
    "n_batches": "60",
    "perr_batch_sizes": "100, 2000",
    "batch_sizes": "2000, 4000",
    "batch_size": "4000",
    "n_realizations": "40",
    "key_length": "16",
    "n_sigma_batches": "40",
    "fractions": "0, 0.5, 1",
    "symmetric_mean_idlers": "3.0, 6.0",
}


def write_config(path, **overrides):
    """Copy of the shipped config with keys replaced (same key in any section)."""
    from twinbeam.config import default_config_path

    lines = []
    for line in default_config_path().read_text().splitlines():
        key = line.split("=", 1)[0].strip()
        if "=" in line and key in overrides:
            line = f"{key} = {overrides[key]}"
        lines.append(line)
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def small_config(tmp_path):
    return write_config(tmp_path / "small.cfg", **SMALL_OVERRIDES)
