import numpy as np
import pytest

from abfkit.abstraction import (
    FiniteAbstraction,
    Grid,
    build_abstraction,
    cells_within,
    quantize,
    read_abstraction,
    representative,
    representatives,
    write_abstraction,
)
from abfkit.errors import OutOfDomainError
from abfkit.systems import BlackBoxSystem, InputSet, StateBox, dc_motor, dc_motor_step


def unit_box(n=2, half=0.5):
    return StateBox(np.full(n, -half), np.full(n, half))


def test_grid_geometry():
    grid = Grid.from_delta(unit_box(), 0.15)
    assert list(grid.cells_per_dim) == [10, 10]
    assert np.linalg.norm(grid.spacing) <= 0.15
    assert grid.n_states == 100
    with pytest.raises(ValueError):
        Grid(unit_box(), np.array([2, 2]), 0.1)  # diameter sqrt(2)/4 > 0.1
    with pytest.raises(ValueError):
        Grid.from_delta(unit_box(), 0.0)


def test_quantize_examples_1d():
    box = StateBox(np.array([0.0]), np.array([1.0]))
    grid = Grid(box, np.array([4]), delta=0.25)
    k = quantize(grid, [0.3])
    assert k == 1
    center = representative(grid, k)
    assert center == pytest.approx([0.375])
    assert abs(center[0] - 0.3) <= grid.delta / 2
    # shared face between cells 1 and 2 resolves to the lower cell
    assert quantize(grid, [0.5]) == 1
    # box boundary is included
    assert quantize(grid, [0.0]) == 0
    assert quantize(grid, [1.0]) == 3


def test_quantize_roundtrip_and_errors():
    grid = Grid.from_delta(unit_box(), 0.15)
    for k in range(grid.n_states):
        assert quantize(grid, representative(grid, k)) == k
    with pytest.raises(OutOfDomainError):
        quantize(grid, [0.51, 0.0])
    with pytest.raises(IndexError):
        representative(grid, grid.n_states)
    with pytest.raises(IndexError):
        representative(grid, -1)


def test_representative_examples():
    box1 = StateBox(np.array([0.0]), np.array([1.0]))
    grid1 = Grid(box1, np.array([2]), delta=0.5)
    assert representative(grid1, 0) == pytest.approx([0.25])
    grid2 = Grid(unit_box(), np.array([10, 10]), delta=0.15)
    assert representative(grid2, 0) == pytest.approx([-0.45, -0.45])
    reps = representatives(grid2)
    assert reps.shape == (100, 2)
    assert reps[0] == pytest.approx([-0.45, -0.45])


def test_quantizer_distance_bound():
    grid = Grid.from_delta(unit_box(), 0.15)
    rng = np.random.default_rng(42)
    pts = rng.uniform(-0.5, 0.5, size=(10_000, 2))
    for x in pts:
        k = quantize(grid, x)
        assert np.linalg.norm(representative(grid, k) - x) <= grid.delta / 2


def test_build_abstraction_identity_oracle():
    grid = Grid.from_delta(unit_box(), 0.3)
    inputs = InputSet(np.array([[0.0], [1.0]]))
    identity = BlackBoxSystem(2, 1, lambda x, nu: x)
    abstraction = build_abstraction(identity, grid, inputs)
    expected = np.tile(np.arange(grid.n_states)[:, None], (1, 2))
    assert np.array_equal(abstraction.transitions, expected)
    assert not abstraction.has_out_transitions()


def test_build_abstraction_query_count():
    grid = Grid.from_delta(unit_box(), 0.15)  # 10 x 10
    inputs = InputSet(np.array([[-0.3, -0.3], [-0.3, 0.3], [0.3, -0.3], [0.3, 0.3]]))
    calls = {"n": 0}

    def counting_step(x, nu):
        calls["n"] += 1
        return dc_motor_step(x, nu)

    system = BlackBoxSystem(2, 2, counting_step)
    build_abstraction(system, grid, inputs)
    assert calls["n"] == 400


def test_build_abstraction_dc_motor_center_cell():
    # odd cell count puts a representative exactly at the origin
    grid = Grid.from_delta(unit_box(), 0.3)  # 5 x 5
    assert list(grid.cells_per_dim) == [5, 5]
    center_cell = quantize(grid, [0.0, 0.0])
    assert representative(grid, center_cell) == pytest.approx([0.0, 0.0])
    inputs = InputSet(np.array([[0.3, 0.3]]))
    abstraction = build_abstraction(dc_motor(), grid, inputs)
    successor = dc_motor_step([0.0, 0.0], [0.3, 0.3])
    assert successor == pytest.approx([0.0021, 0.0021], abs=1e-15)
    assert abstraction.successor(center_cell, 0) == quantize(grid, successor)


def test_out_sink_for_escaping_successors():
    grid = Grid.from_delta(unit_box(), 0.3)
    inputs = InputSet(np.array([[0.0]]))
    drift = BlackBoxSystem(2, 1, lambda x, nu: x + 10.0)
    abstraction = build_abstraction(drift, grid, inputs)
    assert np.all(abstraction.transitions == abstraction.out_index)
    assert abstraction.out_index == grid.n_states


def test_transition_table_validation():
    grid = Grid.from_delta(unit_box(), 0.3)
    inputs = InputSet(np.array([[0.0]]))
    bad = np.full((grid.n_states, 1), grid.n_states + 1)
    with pytest.raises(ValueError):
        FiniteAbstraction(grid, inputs, bad)


def test_abstraction_io_roundtrip(tmp_path):
    grid = Grid.from_delta(unit_box(), 0.3)
    inputs = InputSet(np.array([[-0.3, -0.3], [0.3, 0.3]]))
    abstraction = build_abstraction(dc_motor(), grid, inputs)
    csv_path = tmp_path / "abstraction.csv"
    json_path = tmp_path / "abstraction.json"
    write_abstraction(abstraction, csv_path, json_path)
    loaded = read_abstraction(csv_path, json_path)
    assert np.array_equal(loaded.transitions, abstraction.transitions)
    assert np.array_equal(loaded.grid.cells_per_dim, abstraction.grid.cells_per_dim)
    assert np.array_equal(loaded.inputs.vectors, abstraction.inputs.vectors)
    assert loaded.grid.delta == abstraction.grid.delta
    rows = csv_path.read_text().splitlines()
    assert rows[0] == "state_index,input_index,next_index"
    assert len(rows) == 1 + grid.n_states * 2


def test_cells_within():
    grid = Grid.from_delta(unit_box(), 0.15)  # 10 x 10, spacing 0.1
    everything = cells_within(grid, grid.box.lower, grid.box.upper)
    assert everything.size == grid.n_states
    half = cells_within(grid, np.array([-0.2, -0.2]), np.array([0.2, 0.2]))
    assert half.size == 16  # 4 x 4 inner cells
    for k in half:
        assert np.all(np.abs(representative(grid, int(k))) <= 0.2)
