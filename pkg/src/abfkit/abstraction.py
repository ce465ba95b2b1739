"""Uniform grid partitions, the cell quantizer, and finite abstractions.

The grid splits the state box into axis-aligned cells whose diameter (the
largest within-cell distance) is bounded by a user parameter ``delta``; cell
centers act as representative points. The quantizer maps a concrete state to
the index of the cell containing it, so the representative is never farther
than ``delta / 2`` away.

A finite abstraction tabulates, for every cell representative and every
input, the cell index of the observed one-step successor. Successors that
escape the box are routed to a dedicated absorbing ``out`` sink (index
``n_states``), which synthesis treats as unsafe.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from typing import Iterable

import numpy as np

from .errors import DataAcquisitionError, OutOfDomainError
from .systems import BlackBoxSystem, InputSet, StateBox

__all__ = [
    "Grid",
    "FiniteAbstraction",
    "quantize",
    "representative",
    "representatives",
    "cells_within",
    "build_abstraction",
    "write_abstraction",
    "read_abstraction",
]


@dataclasses.dataclass(frozen=True)
class Grid:
    """Uniform cell partition of a state box.

    ``delta`` bounds the cell diameter: with per-axis spacing
    ``h_i = side_i / cells_per_dim_i`` the invariant is ``sqrt(sum h_i^2) <= delta``.
    """

    box: StateBox
    cells_per_dim: np.ndarray
    delta: float

    def __post_init__(self) -> None:
        cells = np.asarray(self.cells_per_dim, dtype=np.int64)
        if cells.ndim != 1 or cells.shape[0] != self.box.dimension:
            raise ValueError("cells_per_dim must have one entry per state dimension")
        if np.any(cells < 1):
            raise ValueError("cells_per_dim entries must be positive")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        cells = np.array(cells, copy=True)
        cells.setflags(write=False)
        object.__setattr__(self, "cells_per_dim", cells)
        object.__setattr__(self, "delta", float(self.delta))
        diameter = float(np.linalg.norm(self.spacing))
        if diameter > self.delta * (1.0 + 1e-12):
            raise ValueError(
                f"cell diameter {diameter} exceeds the declared bound delta={self.delta}"
            )

    @classmethod
    def from_delta(cls, box: StateBox, delta: float) -> "Grid":
        """Coarsest uniform grid whose cell diameter stays within ``delta``.

        Uses the largest per-axis spacing ``h`` with ``h * sqrt(n) <= delta``.
        """
        if not delta > 0:
            raise ValueError("delta must be positive")
        h_max = delta / math.sqrt(box.dimension)
        cells = np.maximum(1, np.ceil(box.side_lengths / h_max - 1e-12).astype(np.int64))
        return cls(box, cells, float(delta))

    @property
    def dimension(self) -> int:
        return self.box.dimension

    @property
    def spacing(self) -> np.ndarray:
        return self.box.side_lengths / self.cells_per_dim

    @property
    def n_states(self) -> int:
        return int(np.prod(self.cells_per_dim))


def _cell_indices(grid: Grid, points: np.ndarray) -> np.ndarray:
    """Per-axis cell indices for in-box points; boundary faces go to the lower cell."""
    t = (points - grid.box.lower) / grid.spacing
    idx = np.ceil(t).astype(np.int64) - 1
    np.clip(idx, 0, grid.cells_per_dim - 1, out=idx)
    return idx


def quantize(grid: Grid, x) -> int:
    """Index of the cell containing ``x`` (boundary points included).

    Points on a shared cell face resolve to the lower-index cell, so the
    returned representative satisfies ``||representative - x|| <= delta / 2``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (grid.dimension,):
        raise ValueError(f"x must have dimension {grid.dimension}")
    if np.any(x < grid.box.lower) or np.any(x > grid.box.upper):
        raise OutOfDomainError(f"state {x.tolist()} lies outside the grid box")
    idx = _cell_indices(grid, x[None, :])[0]
    return int(np.ravel_multi_index(idx, grid.cells_per_dim))


def representative(grid: Grid, index: int) -> np.ndarray:
    """Center of the cell with the given flat index."""
    if not 0 <= int(index) < grid.n_states:
        raise IndexError(f"abstract-state index {index} out of range [0, {grid.n_states})")
    multi = np.array(np.unravel_index(int(index), grid.cells_per_dim))
    return grid.box.lower + (multi + 0.5) * grid.spacing


def representatives(grid: Grid) -> np.ndarray:
    """All cell centers, ordered by flat index; shape ``(n_states, n)``."""
    multi = np.stack(
        np.unravel_index(np.arange(grid.n_states), grid.cells_per_dim), axis=1
    )
    return grid.box.lower + (multi + 0.5) * grid.spacing


def cells_within(grid: Grid, lower, upper) -> np.ndarray:
    """Flat indices of cells fully contained in ``[lower, upper]``.

    A thin tolerance absorbs roundoff so that the full state box keeps all
    cells.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    tol = 1e-9 * np.maximum(grid.box.side_lengths, 1.0)
    multi = np.stack(
        np.unravel_index(np.arange(grid.n_states), grid.cells_per_dim), axis=1
    )
    cell_lo = grid.box.lower + multi * grid.spacing
    cell_hi = grid.box.lower + (multi + 1) * grid.spacing
    keep = np.all(cell_lo >= lower - tol, axis=1) & np.all(cell_hi <= upper + tol, axis=1)
    return np.flatnonzero(keep)


def _quantize_or_out(grid: Grid, points: np.ndarray, out_index: int) -> np.ndarray:
    inside = np.all(points >= grid.box.lower, axis=1) & np.all(
        points <= grid.box.upper, axis=1
    )
    flat = np.full(points.shape[0], out_index, dtype=np.int64)
    if np.any(inside):
        idx = _cell_indices(grid, points[inside])
        flat[inside] = np.ravel_multi_index(idx.T, grid.cells_per_dim)
    return flat


@dataclasses.dataclass(frozen=True)
class FiniteAbstraction:
    """Deterministic finite-state model over grid cells and a finite input set.

    ``transitions[k, u]`` is the abstract successor of cell ``k`` under input
    ``u``; the value ``n_states`` denotes the absorbing out-of-box sink.
    """

    grid: Grid
    inputs: InputSet
    transitions: np.ndarray

    def __post_init__(self) -> None:
        table = np.asarray(self.transitions, dtype=np.int64)
        expected = (self.grid.n_states, self.inputs.count)
        if table.shape != expected:
            raise ValueError(f"transition table must have shape {expected}")
        if np.any(table < 0) or np.any(table > self.grid.n_states):
            raise ValueError("transition entries must be valid state indices or the out sink")
        table = np.array(table, copy=True)
        table.setflags(write=False)
        object.__setattr__(self, "transitions", table)

    @property
    def n_states(self) -> int:
        return self.grid.n_states

    @property
    def out_index(self) -> int:
        return self.grid.n_states

    def successor(self, state: int, input_index: int) -> int:
        return int(self.transitions[state, input_index])

    def has_out_transitions(self) -> bool:
        return bool(np.any(self.transitions == self.out_index))


def build_abstraction(system: BlackBoxSystem, grid: Grid, inputs: InputSet) -> FiniteAbstraction:
    """Tabulate abstract successors with exactly ``n_states * m`` oracle queries.

    Each entry is the quantized one-step successor of the cell center;
    successors leaving the box map to the ``out`` sink.
    """
    if system.dimension != grid.dimension:
        raise ValueError("system and grid dimensions disagree")
    if system.input_dimension != inputs.dimension:
        raise ValueError("system and input-set dimensions disagree")
    reps = representatives(grid)
    table = np.empty((grid.n_states, inputs.count), dtype=np.int64)
    for u, nu in enumerate(inputs):
        succ = system.step_batch(reps, nu)
        if not np.all(np.isfinite(succ)):
            i = int(np.flatnonzero(~np.all(np.isfinite(succ), axis=1))[0])
            raise DataAcquisitionError(
                f"oracle returned a non-finite successor for representative "
                f"{reps[i].tolist()} under input {nu.tolist()}"
            )
        table[:, u] = _quantize_or_out(grid, succ, grid.n_states)
    return FiniteAbstraction(grid, inputs, table)


# ---------------------------------------------------------------------------
# File format: transition CSV plus a JSON sidecar holding the geometry.
# ---------------------------------------------------------------------------


def write_abstraction(abstraction: FiniteAbstraction, csv_path, json_path) -> None:
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state_index", "input_index", "next_index"])
        for k in range(abstraction.n_states):
            for u in range(abstraction.inputs.count):
                writer.writerow([k, u, int(abstraction.transitions[k, u])])
    sidecar = {
        "box": {
            "lower": abstraction.grid.box.lower.tolist(),
            "upper": abstraction.grid.box.upper.tolist(),
        },
        "cells_per_dim": abstraction.grid.cells_per_dim.tolist(),
        "delta": abstraction.grid.delta,
        "inputs": abstraction.inputs.vectors.tolist(),
        "out_index": abstraction.out_index,
    }
    with open(json_path, "w") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")


def read_abstraction(csv_path, json_path) -> FiniteAbstraction:
    with open(json_path) as fh:
        sidecar = json.load(fh)
    box = StateBox(np.array(sidecar["box"]["lower"]), np.array(sidecar["box"]["upper"]))
    grid = Grid(box, np.array(sidecar["cells_per_dim"]), float(sidecar["delta"]))
    inputs = InputSet(np.array(sidecar["inputs"]))
    table = np.full((grid.n_states, inputs.count), -1, dtype=np.int64)
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if not row:
                continue
            k, u, nxt = (int(v) for v in row)
            table[k, u] = nxt
    if np.any(table < 0):
        raise ValueError("transition file does not cover every (state, input) pair")
    return FiniteAbstraction(grid, inputs, table)
