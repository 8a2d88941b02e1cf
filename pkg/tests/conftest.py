import time
from dataclasses import dataclass

import pytest

from gnn_mbrl.datagen import Dataset, generate_dataset
from gnn_mbrl.gnn import GnnConfig, GnnModel, TrainMetricsRow, save_model, train
from gnn_mbrl.sim import WorldConfig

RESULT_LINES: list[str] = []


@dataclass
class Trained:
    ds: Dataset
    model: GnnModel
    rows: list[TrainMetricsRow]
    seconds: float
    path: str


def _train(mode, tmp_path_factory) -> Trained:
    world = WorldConfig()
    t0 = time.perf_counter()
    ds = generate_dataset(world, mode, n_episodes=100, episode_len=100, seed=1)
    model, rows = train(ds, GnnConfig.for_world(world, mode, epochs=50, seed=0))
    seconds = time.perf_counter() - t0
    path = tmp_path_factory.mktemp(f"model_{mode}") / "model.ckpt"
    save_model(model, path)
    return Trained(ds, model, rows, seconds, str(path))


@pytest.fixture(scope="session")
def continuous_model(tmp_path_factory) -> Trained:
    """100 episodes x 100 steps, 50 epochs: the desk-scale training run."""
    return _train("continuous", tmp_path_factory)


@pytest.fixture(scope="session")
def discrete_model(tmp_path_factory) -> Trained:
    return _train("discrete", tmp_path_factory)


@pytest.fixture
def record():
    """Print and remember one pass/fail line per acceptance criterion."""

    def _record(name: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        print(line)
        RESULT_LINES.append(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if RESULT_LINES:
        terminalreporter.section("acceptance criteria")
        for line in RESULT_LINES:
            terminalreporter.write_line(line)
