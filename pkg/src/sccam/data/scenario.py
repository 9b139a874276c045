"""Scenario construction: per-class train/test counts drawn from window pools."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..errors import ConfigError, DataError
from ..rng import stream
from .series import WindowSet

KINDS = ("balanced", "imbalanced", "long-tail")

# (normal train, fault train) per scenario kind, and the balanced test count per class
CSTH_COUNTS = {"balanced": (780, 450), "imbalanced": (780, 200), "long-tail": (780, 20)}
CSTH_TEST = 200
TE_COUNTS = {"balanced": (4780, 4780), "imbalanced": (4780, 478), "long-tail": (4780, 20)}
TE_TEST = 780


@dataclass(frozen=True)
class ScenarioSpec:
    train_counts: tuple
    test_counts: tuple
    kind: str = "balanced"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        if len(self.train_counts) != len(self.test_counts):
            raise ConfigError("train and test counts must cover the same classes")
        if min(self.train_counts) < 1 or min(self.test_counts) < 1:
            raise ConfigError("every class needs at least one train and one test sample")
        if len(set(self.test_counts)) != 1:
            raise ConfigError(f"test counts must be equal across classes, got {self.test_counts}")

    @property
    def n_classes(self) -> int:
        return len(self.train_counts)


def preset_scenario(dataset: str, kind: str, n_faults: int = 1, seed: int = 0,
                    scale: float = 1.0) -> ScenarioSpec:
    """Preset per-class counts for ``dataset`` and ``kind``; ``scale`` shrinks them for desk-scale runs."""
    if dataset == "csth":
        table, test = CSTH_COUNTS, CSTH_TEST
    elif dataset == "te":
        table, test = TE_COUNTS, TE_TEST
    else:
        raise ConfigError(f"unknown dataset preset {dataset!r}")
    if kind not in table:
        raise ConfigError(f"unknown scenario kind {kind!r}; expected one of {KINDS}")
    normal, fault = table[kind]

    def sc(n):
        return max(1, int(round(n * scale)))

    return ScenarioSpec((sc(normal),) + (sc(fault),) * n_faults, (sc(test),) * (n_faults + 1), kind, seed)


def build_scenario(pools: Mapping[int, WindowSet], spec: ScenarioSpec) -> tuple[WindowSet, WindowSet]:
    """Draw disjoint train/test sets per class, without replacement, deterministic in ``spec.seed``."""
    train_parts, test_parts = [], []
    for c in range(spec.n_classes):
        pool = pools.get(c)
        need = spec.train_counts[c] + spec.test_counts[c]
        have = 0 if pool is None else len(pool)
        if have < need:
            raise DataError(f"class {c}: pool has {have} windows, scenario needs {need} (short by {need - have})")
        order = stream(spec.seed, 7, c).permutation(have)
        train_parts.append(pool.subset(np.sort(order[:spec.train_counts[c]])))
        test_parts.append(pool.subset(np.sort(order[spec.train_counts[c]:need])))
    return WindowSet.concat(train_parts), WindowSet.concat(test_parts)


def pools_from_windows(windows: Sequence[WindowSet]) -> dict:
    """Group windows by their label."""
    merged = WindowSet.concat(list(windows))
    return {int(c): merged.subset(np.flatnonzero(merged.labels == c)) for c in np.unique(merged.labels)}
