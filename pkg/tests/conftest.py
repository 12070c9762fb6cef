"""Shared fixtures and helpers for the test suite."""

from __future__ import annotations

import math
import os

import pytest

from emorank.dataio import (DatasetManifest, ToyGenConfig,
                            generate_compound_set, generate_toy_dataset,
                            write_dataset)
from emorank.model import MlpModel, init_model
from emorank.numcore import Rng

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "golden")


def rel_err(a: float, b: float) -> float:
    denom = max(abs(a), abs(b), 1e-12)
    return abs(a - b) / denom


def central_diff(f, x: float, h: float = 1e-5) -> float:
    return (f(x + h) - f(x - h)) / (2.0 * h)


def random_logits(rng: Rng, n: int, scale: float = 3.0) -> list[float]:
    return [rng.uniform(-scale, scale) for _ in range(n)]


def assert_close(a: float, b: float, tol: float = 1e-12) -> None:
    assert math.isfinite(a) and math.isfinite(b)
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def small_dataset_config(seed: int = 5) -> ToyGenConfig:
    return ToyGenConfig(n_train=70, n_eval=40, n_fr=50,
                        noise_sigma=0.05, seed=seed)


def build_dataset_dir(path: str, config: ToyGenConfig,
                      n_per_pair: int = 2) -> None:
    manifest, images = generate_toy_dataset(config)
    compound, compound_images = generate_compound_set(
        config, n_per_pair=n_per_pair)
    merged = DatasetManifest(manifest.class_names,
                             manifest.entries + compound.entries)
    images.update(compound_images)
    write_dataset(path, merged, images)


@pytest.fixture(scope="session")
def toy_data_dir(tmp_path_factory) -> str:
    """A small on-disk dataset shared by trainer/CLI tests."""
    path = tmp_path_factory.mktemp("toydata")
    build_dataset_dir(str(path), small_dataset_config())
    return str(path)


@pytest.fixture()
def tiny_model() -> MlpModel:
    return init_model(input_dim=6, hidden_dim=5, class_count=4, rng=Rng(11))


# pass/fail lines recorded by the acceptance tests, re-emitted at the end of
# the run so they stay visible without -s
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
