"""Clipped steepest-descent relaxation driven by predicted forces."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import RelaxationError
from .graph import AtomicStructure

MAX_DISPLACEMENT = 0.2  # Angstrom per atom per step


@dataclass
class RelaxStep:
    step: int
    positions: np.ndarray
    energy: float
    fmax: float


@dataclass
class RelaxTrace:
    steps: list[RelaxStep] = field(default_factory=list)
    converged: bool = False

    def __len__(self):
        return len(self.steps)

    @property
    def final(self) -> RelaxStep:
        return self.steps[-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "energy", "fmax"])
        for s in self.steps:
            w.writerow([s.step, repr(s.energy), repr(s.fmax)])
        return buf.getvalue()


def max_force(forces: np.ndarray) -> float:
    return float(np.sqrt((forces * forces).sum(axis=1)).max()) if len(forces) else 0.0


def clip_displacement(delta: np.ndarray, limit: float = MAX_DISPLACEMENT) -> np.ndarray:
    norms = np.sqrt((delta * delta).sum(axis=1, keepdims=True))
    scale = np.minimum(1.0, limit / np.maximum(norms, 1e-300))
    return delta * scale


def relax(
    structure: AtomicStructure,
    predict: Callable[[AtomicStructure], tuple[float, np.ndarray]],
    max_steps: int = 300,
    fmax: float = 0.02,
    step_size: float = 0.05,
) -> RelaxTrace:
    """Move atoms along predicted forces until ``F_max <= fmax`` or ``max_steps`` evaluations.

    Each recorded step is one force evaluation; the positions of a step are
    those the forces were evaluated at. The trace therefore has length 1 when
    the input is already converged and exactly ``max_steps`` otherwise.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    if not fmax > 0 or not step_size > 0:
        raise ValueError("fmax and step_size must be positive")
    trace = RelaxTrace()
    current = structure
    for step in range(max_steps):
        energy, forces = predict(current)
        if not (np.isfinite(energy) and np.all(np.isfinite(forces))):
            raise RelaxationError(f"non-finite energy or forces at step {step}", trace)
        f = max_force(forces)
        trace.steps.append(RelaxStep(step, current.positions.copy(), float(energy), f))
        if f <= fmax:
            trace.converged = True
            break
        if step == max_steps - 1:
            break
        current = current.with_positions(current.positions + clip_displacement(step_size * forces))
    return trace
