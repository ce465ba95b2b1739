"""Safety controller synthesis on finite abstractions and closed-loop runs.

The winning region of the safety game is the greatest fixed point of

    W  ->  { k in W : exists u with transitions[k, u] in W }

started from the safe cell set, i.e. the maximal controlled invariant set.
The out-of-box sink is always losing. The policy picks, for every winning
cell, the admissible input with the smallest index.

Refinement to the concrete plant composes the cell quantizer with the
abstract policy; closed-loop simulation applies the chosen input through the
black-box oracle and stops early (flagged) if the state reaches a cell with
no admissible input.
"""
from __future__ import annotations

import csv
import dataclasses
from typing import Iterable

import numpy as np

from .abstraction import FiniteAbstraction, Grid, quantize
from .systems import BlackBoxSystem, FLOAT_FORMAT

__all__ = [
    "SafetyController",
    "Trajectory",
    "max_invariant_set",
    "refine",
    "simulate_closed_loop",
    "write_controller",
    "read_controller",
    "write_trajectory",
]


@dataclasses.dataclass(frozen=True)
class SafetyController:
    """Winning cells and one admissible input per winning cell."""

    abstraction: FiniteAbstraction
    winning_set: frozenset[int]
    policy: dict[int, int]

    def __post_init__(self) -> None:
        object.__setattr__(self, "winning_set", frozenset(int(k) for k in self.winning_set))
        object.__setattr__(self, "policy", dict(self.policy))
        table = self.abstraction.transitions
        for k in self.winning_set:
            u = self.policy.get(k)
            if u is None or int(table[k, u]) not in self.winning_set:
                raise ValueError("policy is not controlled-invariant on the winning set")

    @property
    def is_empty(self) -> bool:
        return len(self.winning_set) == 0


def max_invariant_set(
    abstraction: FiniteAbstraction, safe: Iterable[int]
) -> SafetyController:
    """Maximal controlled invariant subset of ``safe`` plus a witness policy.

    ``safe`` must exclude the out sink. An empty winning set is a valid
    result (synthesis failure is the caller's call), not an exception.
    Terminates in at most ``|safe|`` refinement rounds.
    """
    safe = {int(k) for k in safe}
    n = abstraction.n_states
    if any(not 0 <= k < n for k in safe):
        raise ValueError("safe set must contain grid-cell indices only (no out sink)")
    table = abstraction.transitions
    # membership over grid states plus the sink (always losing)
    member = np.zeros(n + 1, dtype=bool)
    member[list(safe)] = True
    while True:
        admissible = member[table]            # (n, m): input keeps us winning
        keep = member[:n] & admissible.any(axis=1)
        if np.array_equal(keep, member[:n]):
            break
        member[:n] = keep
    winning = np.flatnonzero(member[:n])
    policy = {
        int(k): int(np.argmax(member[table[k]])) for k in winning
    }
    return SafetyController(abstraction, frozenset(int(k) for k in winning), policy)


def refine(controller: SafetyController, grid: Grid, x) -> int | None:
    """Concrete-state input choice: quantize, then look up the cell policy.

    Returns ``None`` when the cell is not winning; raises
    :class:`~abfkit.errors.OutOfDomainError` outside the grid box.
    """
    cell = quantize(grid, x)
    if cell not in controller.winning_set:
        return None
    return controller.policy[cell]


@dataclasses.dataclass(frozen=True)
class Trajectory:
    """Closed-loop record: ``states[t + 1] = oracle(states[t], inputs[t])``."""

    states: np.ndarray
    inputs: np.ndarray
    horizon: int
    event: str = "completed"            # 'completed' | 'no_controller'
    event_time: int | None = None

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=float)
        inputs = np.asarray(self.inputs, dtype=np.int64)
        if states.shape[0] != inputs.shape[0] + 1:
            raise ValueError("need exactly one more state than inputs")
        states.setflags(write=False)
        inputs.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)

    @property
    def length(self) -> int:
        return int(self.inputs.shape[0])


def simulate_closed_loop(
    system: BlackBoxSystem,
    controller: SafetyController,
    grid: Grid,
    x0,
    horizon: int,
) -> Trajectory:
    """Run the refined controller for ``horizon`` steps from ``x0``.

    Stops early with a ``no_controller`` event if the trajectory reaches a
    cell without an admissible input (including a losing initial cell, which
    yields a zero-step trajectory).
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    x = np.asarray(x0, dtype=float)
    states = [x]
    inputs: list[int] = []
    for t in range(int(horizon)):
        u = refine(controller, grid, x)
        if u is None:
            return Trajectory(
                np.stack(states),
                np.asarray(inputs, dtype=np.int64),
                horizon=int(horizon),
                event="no_controller",
                event_time=t,
            )
        x = system.step(x, controller.abstraction.inputs[u])
        states.append(x)
        inputs.append(u)
    return Trajectory(
        np.stack(states), np.asarray(inputs, dtype=np.int64), horizon=int(horizon)
    )


def write_controller(controller: SafetyController, path) -> None:
    """CSV ``state_index, input_index`` over the winning cells only."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state_index", "input_index"])
        for k in sorted(controller.winning_set):
            writer.writerow([k, controller.policy[k]])


def read_controller(abstraction: FiniteAbstraction, path) -> SafetyController:
    policy: dict[int, int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if row:
                policy[int(row[0])] = int(row[1])
    return SafetyController(abstraction, frozenset(policy), policy)


def write_trajectory(trajectory: Trajectory, path) -> None:
    """CSV ``t, x_0..x_{n-1}, input_index`` (blank input on the final state)."""
    n = trajectory.states.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"x_{d}" for d in range(n)] + ["input_index"])
        for t, state in enumerate(trajectory.states):
            row = [t] + [format(v, FLOAT_FORMAT) for v in state]
            row.append(str(int(trajectory.inputs[t])) if t < trajectory.length else "")
            writer.writerow(row)
