"""Shared fixtures for the test suite.

The expensive objects (the Whittle index table and the two small training
runs) are built once per session and reused by every acceptance criterion
that needs them.
"""

from __future__ import annotations

import pathlib
import time

import pytest

from wisched import (
    SystemConfig,
    TrafficModel,
    Trainer,
    build_table,
    load_spec,
)

CONFIG_DIR = pathlib.Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(scope="session")
def timings():
    """Wall-clock seconds of the expensive session fixtures, keyed by name.

    The acceptance tests fold these into their own runtime budgets so the
    work a criterion mandates is charged to that criterion even though the
    fixtures are shared.
    """
    return {}


@pytest.fixture(scope="session")
def tiny_spec():
    """The small end-to-end experiment spec used by the acceptance suite."""
    return load_spec(CONFIG_DIR / "tiny.toml")


@pytest.fixture(scope="session")
def tiny_table(tiny_spec, timings):
    """Index table shared by both training runs and the handcrafted policies."""
    t0 = time.monotonic()
    table = build_table(
        tiny_spec.system.monitors, x_max=tiny_spec.x_max, search=tiny_spec.search
    )
    timings["table"] = time.monotonic() - t0
    return table


@pytest.fixture(scope="session")
def run_a(tiny_spec, tiny_table, timings):
    """Trained agents on the shipped tiny system (traffic durations 1 and 3).

    Returns (trainer, history) where history is the per-episode log list.
    """
    t0 = time.monotonic()
    trainer = Trainer(tiny_spec.system, tiny_table, tiny_spec.hyper, seed=tiny_spec.seed)
    history = trainer.train(tiny_spec.episodes)
    timings["run_a"] = time.monotonic() - t0
    return trainer, history


@pytest.fixture(scope="session")
def run_b(tiny_spec, tiny_table, timings):
    """Same system trained with both traffic sources set to duration 1.

    Duration-1 requests never reserve a channel beyond the slot that starts
    them, so this run never faces the blocking constraint that run A does.
    """
    s = tiny_spec.system
    unconstrained = SystemConfig(
        monitors=s.monitors,
        traffics=[TrafficModel(1, s.traffics[0].weight), TrafficModel(1, s.traffics[1].weight)],
        bandwidths=s.bandwidths,
        chains=s.chains,
        snr=s.snr,
        log_base=s.log_base,
        discount=s.discount,
    )
    t0 = time.monotonic()
    trainer = Trainer(unconstrained, tiny_table, tiny_spec.hyper, seed=tiny_spec.seed)
    history = trainer.train(tiny_spec.episodes)
    timings["run_b"] = time.monotonic() - t0
    return trainer, history
