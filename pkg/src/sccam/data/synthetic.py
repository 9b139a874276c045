"""Synthetic coupled process with injectable single-variable faults.

Normal operation is a stable vector AR(1) process ``s_t = A s_{t-1} + e_t``
scaled to unit stationary variance per variable. A fault on variable ``k``
drives a perturbation ``p_t = A_k p_{t-1} + f_t e_k`` that is added on top,
where ``A_k`` is the coupling matrix with row ``k`` zeroed: the faulty variable
is forced exactly by ``f_t`` and the disturbance leaks into its neighbours
through the coupling. ``f_t`` is ``delta`` (step) or ``delta * N(0, 1)``
(random variation) from the onset index on.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from ..errors import ConfigError
from ..rng import stream
from .series import RawSeries

FAULT_KINDS = ("step", "random-variation")
BURN_IN = 200


def coupling_matrix(n_vars: int) -> np.ndarray:
    """Leading ``n_vars x n_vars`` block of the shipped 22-variable coupling matrix.

    Every row has absolute sum below 1, so every leading block is a stable AR matrix.
    """
    text = resources.files("sccam.data").joinpath("coupling.csv").read_text()
    full = np.array([[float(v) for v in line.split(",")] for line in text.strip().splitlines()])
    if not 2 <= n_vars <= full.shape[0]:
        raise ConfigError(f"synthetic process supports 2..{full.shape[0]} variables, got {n_vars}")
    return full[:n_vars, :n_vars].copy()


def variable_names(n_vars: int) -> list:
    return [f"X{i + 1}" for i in range(n_vars)]


@dataclass(frozen=True)
class SyntheticFaultConfig:
    variable: int
    kind: str = "step"
    magnitude: float = 3.0
    onset: int = 0
    coupling: Optional[np.ndarray] = None

    def validate(self, n_vars: int) -> None:
        if not 0 <= self.variable < n_vars:
            raise ConfigError(f"fault variable {self.variable} outside 0..{n_vars - 1}")
        if self.kind not in FAULT_KINDS:
            raise ConfigError(f"unknown fault kind {self.kind!r}; expected one of {FAULT_KINDS}")
        if self.magnitude < 0:
            raise ConfigError(f"fault magnitude must be non-negative, got {self.magnitude}")
        if self.onset < 0:
            raise ConfigError(f"fault onset must be >= 0, got {self.onset}")


def normal_process(coupling: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    """``H x length`` stationary AR(1) realisation with unit marginal variance."""
    h = coupling.shape[0]
    sd = np.sqrt(np.diag(solve_discrete_lyapunov(coupling, np.eye(h))))
    noise = rng.standard_normal((BURN_IN + length, h))
    s = np.zeros(h)
    out = np.empty((length, h))
    for t in range(BURN_IN + length):
        s = coupling @ s + noise[t]
        if t >= BURN_IN:
            out[t - BURN_IN] = s
    return (out / sd).T


def fault_perturbation(config: SyntheticFaultConfig, coupling: np.ndarray, length: int,
                       rng: np.random.Generator) -> np.ndarray:
    h = coupling.shape[0]
    k = config.variable
    forced = coupling.copy()
    forced[k, :] = 0.0
    drive = np.zeros(length)
    if config.kind == "step":
        drive[config.onset:] = config.magnitude
    else:
        drive[config.onset:] = config.magnitude * rng.standard_normal(max(length - config.onset, 0))
    p = np.zeros(h)
    out = np.empty((h, length))
    for t in range(length):
        p = forced @ p
        p[k] = drive[t]
        out[:, t] = p
    return out


def generate_synthetic_process(config: SyntheticFaultConfig, n_vars: int, length: int,
                               seed: int) -> tuple[RawSeries, RawSeries]:
    """One normal series (label 0) and one faulty series (label 1) with independent noise."""
    normal, fault = generate_fault_dataset([config], n_vars, [length, length], seed, config.coupling)
    return normal, fault


def generate_fault_dataset(faults: Sequence[SyntheticFaultConfig], n_vars: int, lengths: Sequence[int],
                           seed: int, coupling: Optional[np.ndarray] = None) -> list:
    """Normal series (label 0) plus one series per fault (labels 1..); ``lengths[c]`` is class c's length.

    Each class draws from its own keyed random streams, so adding classes or
    changing one length never alters the other series.
    """
    if n_vars < 2:
        raise ConfigError(f"need at least 2 variables, got {n_vars}")
    if len(lengths) != len(faults) + 1:
        raise ConfigError("need one length per class (normal + each fault)")
    for f in faults:
        f.validate(n_vars)
    a = coupling_matrix(n_vars) if coupling is None else np.asarray(coupling, dtype=float)
    if a.shape != (n_vars, n_vars):
        raise ConfigError(f"coupling matrix must be {n_vars} x {n_vars}, got {a.shape}")
    names = variable_names(n_vars)
    out = [RawSeries(names, normal_process(a, lengths[0], stream(seed, 0, 0)), 0, "normal")]
    for c, f in enumerate(faults, start=1):
        base = normal_process(a, lengths[c], stream(seed, c, 0))
        pert = fault_perturbation(f, a, lengths[c], stream(seed, c, 1))
        out.append(RawSeries(names, base + pert, c, f"fault{c}",
                             {"root_cause": f.variable, "kind": f.kind, "magnitude": f.magnitude}))
    return out


# TE faults used for the multi-class scenario, mapped onto synthetic root-cause variables.
# Faults 10 and 11 keep their documented root causes X18 and X9 (indices 17 and 8).
TE_ANALOG_FAULTS = (
    (1, 0, "step"), (2, 2, "step"), (3, 4, "step"), (8, 6, "random-variation"),
    (10, 17, "random-variation"), (11, 8, "random-variation"), (12, 10, "random-variation"),
    (13, 12, "step"), (14, 14, "random-variation"), (20, 20, "step"),
)


def te_analog_faults(magnitude: float = 3.0, random_magnitude: Optional[float] = None) -> list:
    rm = magnitude if random_magnitude is None else random_magnitude
    return [SyntheticFaultConfig(var, kind, magnitude if kind == "step" else rm)
            for _, var, kind in TE_ANALOG_FAULTS]
