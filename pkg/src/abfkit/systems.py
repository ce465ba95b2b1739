"""Black-box plants, i.i.d. state sampling, and one-step datasets.

Everything downstream sees a plant only through :class:`BlackBoxSystem`: a
pure, deterministic one-step oracle ``(x, nu) -> x_next``. The two built-in
benchmark plants live in this module and nowhere else; no other module may
inspect their closed forms.

Datasets are collections of independent one-step experiments: each sampled
state is queried once per input, and successors are never re-used as new
starting points.
"""
from __future__ import annotations

import csv
import dataclasses
import shlex
import subprocess
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import DataAcquisitionError

__all__ = [
    "StateBox",
    "InputSet",
    "BlackBoxSystem",
    "ExternalCommandSystem",
    "SamplePair",
    "Dataset",
    "dc_motor_step",
    "jet_engine_step",
    "dc_motor",
    "jet_engine",
    "dc_motor_input_set",
    "jet_engine_input_set",
    "sample_states",
    "collect_dataset",
    "write_dataset",
    "read_dataset",
]

FLOAT_FORMAT = ".17g"  # bit-faithful round trip for IEEE doubles


def _vector(value, dimension: int | None = None, name: str = "vector") -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if dimension is not None and arr.shape[0] != dimension:
        raise ValueError(f"{name} must have dimension {dimension}, got {arr.shape[0]}")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclasses.dataclass(frozen=True)
class StateBox:
    """Axis-aligned box of admissible states."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lower = _frozen(_vector(self.lower, name="lower"))
        upper = _frozen(_vector(self.upper, name="upper"))
        if lower.shape != upper.shape:
            raise ValueError("lower and upper must have the same dimension")
        if not np.all(lower < upper):
            raise ValueError("state box requires lower[i] < upper[i] on every axis")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dimension(self) -> int:
        return self.lower.shape[0]

    @property
    def side_lengths(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x) -> bool:
        x = _vector(x, self.dimension, "x")
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def max_state_norm(self) -> float:
        """Norm of the farthest corner, an upper bound on ``||x||`` over the box."""
        return float(np.linalg.norm(np.maximum(np.abs(self.lower), np.abs(self.upper))))


@dataclasses.dataclass(frozen=True)
class InputSet:
    """Ordered finite set of input vectors."""

    vectors: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.vectors, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ValueError("input set must be a nonempty list of equal-length vectors")
        if len({tuple(row) for row in arr.tolist()}) != arr.shape[0]:
            raise ValueError("input set must not contain duplicate vectors")
        object.__setattr__(self, "vectors", _frozen(arr))

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, index: int) -> np.ndarray:
        return self.vectors[index]

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.vectors)

    def max_input_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.vectors, axis=1)))


class BlackBoxSystem:
    """One-step oracle for an unknown discrete-time plant.

    The oracle must be pure and deterministic: querying the same ``(x, nu)``
    twice returns an identical successor. ``batch_step``, when provided, must
    agree with ``step`` row by row; it exists so that large experiment sweeps
    can be vectorized.
    """

    def __init__(
        self,
        dimension: int,
        input_dimension: int,
        step: Callable[[np.ndarray, np.ndarray], np.ndarray],
        batch_step: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
        name: str = "",
    ) -> None:
        self.dimension = int(dimension)
        self.input_dimension = int(input_dimension)
        self._step = step
        self._batch_step = batch_step
        self.name = name

    def step(self, x, nu) -> np.ndarray:
        x = _vector(x, self.dimension, "x")
        nu = _vector(nu, self.input_dimension, "nu")
        return _vector(self._step(x, nu), self.dimension, "successor")

    def step_batch(self, states, nu) -> np.ndarray:
        """Apply the oracle to every row of ``states`` under one input."""
        states = np.asarray(states, dtype=float)
        if states.ndim != 2 or states.shape[1] != self.dimension:
            raise ValueError(f"states must have shape (k, {self.dimension})")
        nu = _vector(nu, self.input_dimension, "nu")
        if self._batch_step is not None:
            out = np.asarray(self._batch_step(states, nu), dtype=float)
        else:
            out = np.stack([_vector(self._step(s, nu), self.dimension) for s in states])
        if out.shape != states.shape:
            raise ValueError("batch oracle returned a wrongly shaped array")
        return out


# ---------------------------------------------------------------------------
# Built-in benchmark plants. Parameters are fixed; only the one-step maps are
# exported, wrapped as BlackBoxSystem instances.
# ---------------------------------------------------------------------------

_DC_R = 1.0        # electric resistance
_DC_L = 0.01       # electric inductance
_DC_J = 0.01       # rotor moment of inertia
_DC_B = 0.9        # motor torque constant
_DC_K = 0.01       # back-EMF constant
_DC_TAU = 0.01     # sampling time
_DC_GAIN = 0.7     # input gain

_JET_TAU = 0.01    # sampling time


def dc_motor_step(x, nu) -> np.ndarray:
    """One sampled-data step of the two-state DC motor benchmark."""
    x = _vector(x, 2, "x")
    nu = _vector(nu, 2, "nu")
    dx1 = -(_DC_R / _DC_L) * x[0] - (_DC_K / _DC_L) * x[1] + _DC_GAIN * nu[0]
    dx2 = (_DC_K / _DC_J) * x[0] - (_DC_B / _DC_J) * x[1] + _DC_GAIN * nu[1]
    return np.array([x[0] + _DC_TAU * dx1, x[1] + _DC_TAU * dx2])


def _dc_motor_batch(states: np.ndarray, nu: np.ndarray) -> np.ndarray:
    dx1 = -(_DC_R / _DC_L) * states[:, 0] - (_DC_K / _DC_L) * states[:, 1] + _DC_GAIN * nu[0]
    dx2 = (_DC_K / _DC_J) * states[:, 0] - (_DC_B / _DC_J) * states[:, 1] + _DC_GAIN * nu[1]
    return np.column_stack([states[:, 0] + _DC_TAU * dx1, states[:, 1] + _DC_TAU * dx2])


def jet_engine_step(x, nu) -> np.ndarray:
    """One sampled-data step of the Moore-Greitzer style compressor benchmark."""
    x = _vector(x, 2, "x")
    nu = _vector(nu, 1, "nu")
    dx1 = -x[1] - 1.5 * x[0] ** 2 - 0.5 * x[0] ** 3
    dx2 = x[0] - nu[0]
    return np.array([x[0] + _JET_TAU * dx1, x[1] + _JET_TAU * dx2])


def _jet_engine_batch(states: np.ndarray, nu: np.ndarray) -> np.ndarray:
    dx1 = -states[:, 1] - 1.5 * states[:, 0] ** 2 - 0.5 * states[:, 0] ** 3
    dx2 = states[:, 0] - nu[0]
    return np.column_stack([states[:, 0] + _JET_TAU * dx1, states[:, 1] + _JET_TAU * dx2])


def dc_motor() -> BlackBoxSystem:
    return BlackBoxSystem(2, 2, dc_motor_step, _dc_motor_batch, name="dc_motor")


def jet_engine() -> BlackBoxSystem:
    return BlackBoxSystem(2, 1, jet_engine_step, _jet_engine_batch, name="jet_engine")


def dc_motor_input_set() -> InputSet:
    """Full benchmark input grid: 13 levels per channel in [-0.3, 0.3]."""
    levels = np.linspace(-0.3, 0.3, 13)
    g1, g2 = np.meshgrid(levels, levels, indexing="ij")
    return InputSet(np.column_stack([g1.ravel(), g2.ravel()]))


def jet_engine_input_set() -> InputSet:
    """Full benchmark input grid: 21 levels in [-0.5, 0.5]."""
    return InputSet(np.linspace(-0.5, 0.5, 21).reshape(-1, 1))


# ---------------------------------------------------------------------------
# Sampling and dataset collection
# ---------------------------------------------------------------------------


def sample_states(box: StateBox, count: int, seed: int) -> np.ndarray:
    """Draw ``count`` i.i.d. uniform states from ``box``, reproducibly.

    Returns an array of shape ``(count, n)``; the same seed always yields
    the identical array.
    """
    if count < 1:
        raise ValueError("count must be a positive integer")
    rng = np.random.default_rng(seed)
    return rng.uniform(box.lower, box.upper, size=(int(count), box.dimension))


@dataclasses.dataclass(frozen=True)
class SamplePair:
    """One independent experiment: a state, an input index, and the successor."""

    x: np.ndarray
    nu_index: int
    x_next: np.ndarray


@dataclasses.dataclass(frozen=True)
class Dataset:
    """One-step experiments grouped by sampled state.

    ``states`` has shape ``(N, n)``; ``successors`` has shape ``(N, m, n)``
    with ``successors[i, u]`` the oracle response to ``(states[i], inputs[u])``.
    Behaves as a flat sequence of ``N * m`` :class:`SamplePair` entries.
    """

    states: np.ndarray
    successors: np.ndarray
    inputs: InputSet

    def __post_init__(self) -> None:
        states = _frozen(np.asarray(self.states, dtype=float))
        succ = _frozen(np.asarray(self.successors, dtype=float))
        if states.ndim != 2 or succ.ndim != 3:
            raise ValueError("states must be (N, n) and successors (N, m, n)")
        if succ.shape != (states.shape[0], self.inputs.count, states.shape[1]):
            raise ValueError("successors shape inconsistent with states and inputs")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "successors", succ)

    @property
    def sample_count(self) -> int:
        return self.states.shape[0]

    @property
    def dimension(self) -> int:
        return self.states.shape[1]

    def __len__(self) -> int:
        return self.sample_count * self.inputs.count

    def __getitem__(self, k: int) -> SamplePair:
        m = self.inputs.count
        if not 0 <= k < len(self):
            raise IndexError(k)
        i, u = divmod(int(k), m)
        return SamplePair(self.states[i], u, self.successors[i, u])

    def __iter__(self) -> Iterator[SamplePair]:
        for k in range(len(self)):
            yield self[k]

    def group(self, i: int) -> list[SamplePair]:
        """All pairs sharing the i-th sampled state."""
        return [SamplePair(self.states[i], u, self.successors[i, u])
                for u in range(self.inputs.count)]


def collect_dataset(
    system: BlackBoxSystem,
    box: StateBox,
    inputs: InputSet,
    count: int,
    seed: int,
) -> Dataset:
    """Run ``count`` x ``|inputs|`` independent one-step experiments.

    Every sampled state is queried once under every input. A non-finite
    oracle response aborts the collection with a diagnostic naming the
    offending state/input pair.
    """
    states = sample_states(box, count, seed)
    succ = np.empty((states.shape[0], inputs.count, box.dimension))
    for u, nu in enumerate(inputs):
        out = system.step_batch(states, nu)
        bad = ~np.all(np.isfinite(out), axis=1)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise DataAcquisitionError(
                f"oracle returned a non-finite successor for state "
                f"{states[i].tolist()} under input {nu.tolist()}"
            )
        succ[:, u, :] = out
    return Dataset(states, succ, inputs)


# ---------------------------------------------------------------------------
# Dataset file format: one CSV row per pair, floats with 17 significant
# digits so values survive a write/read cycle bit for bit.
# ---------------------------------------------------------------------------


def write_dataset(dataset: Dataset, path) -> None:
    n = dataset.dimension
    header = [f"x_{d}" for d in range(n)] + ["nu_index"] + [f"xnext_{d}" for d in range(n)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for pair in dataset:
            row = [format(v, FLOAT_FORMAT) for v in pair.x]
            row.append(str(pair.nu_index))
            row.extend(format(v, FLOAT_FORMAT) for v in pair.x_next)
            writer.writerow(row)


def read_dataset(path, inputs: InputSet) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n = (len(header) - 1) // 2
        rows = [r for r in reader if r]
    m = inputs.count
    if len(rows) % m != 0:
        raise ValueError("row count is not a multiple of the input-set size")
    count = len(rows) // m
    states = np.empty((count, n))
    succ = np.empty((count, m, n))
    for i in range(count):
        for u in range(m):
            row = rows[i * m + u]
            if int(row[n]) != u:
                raise ValueError("rows are not grouped by sampled state")
            states[i] = [float(v) for v in row[:n]]
            succ[i, u] = [float(v) for v in row[n + 1:]]
    return Dataset(states, succ, inputs)


class ExternalCommandSystem(BlackBoxSystem):
    """Adapter for an external one-step simulator speaking a line protocol.

    Each query writes one line ``x_0 .. x_{n-1} nu_0 .. nu_{p-1}`` to the
    child's stdin and reads one line ``x'_0 .. x'_{n-1}`` from its stdout,
    all decimal floats. The child process is kept alive across queries.
    """

    def __init__(self, command, dimension: int, input_dimension: int, name: str = "external"):
        if isinstance(command, str):
            command = shlex.split(command)
        self._proc = subprocess.Popen(
            list(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        super().__init__(dimension, input_dimension, self._query, name=name)

    def _query(self, x: np.ndarray, nu: np.ndarray) -> np.ndarray:
        line = " ".join(format(v, FLOAT_FORMAT) for v in (*x, *nu))
        try:
            assert self._proc.stdin is not None and self._proc.stdout is not None
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
            reply = self._proc.stdout.readline()
        except (OSError, ValueError) as exc:
            raise DataAcquisitionError(f"oracle process is not responding: {exc}") from exc
        if not reply:
            raise DataAcquisitionError("oracle process closed its output stream")
        try:
            values = [float(tok) for tok in reply.split()]
        except ValueError as exc:
            raise DataAcquisitionError(f"malformed oracle reply: {reply!r}") from exc
        if len(values) != self.dimension:
            raise DataAcquisitionError(
                f"oracle reply has {len(values)} fields, expected {self.dimension}"
            )
        return np.asarray(values)

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                if self._proc.stdin is not None:
                    self._proc.stdin.close()
                self._proc.terminate()
                self._proc.wait(timeout=5)
            except OSError:
                pass

    def __enter__(self) -> "ExternalCommandSystem":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def __del__(self) -> None:
        try:
            self.close()
        except Exception:
            pass
