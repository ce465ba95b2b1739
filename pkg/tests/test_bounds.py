import dataclasses
import math
from fractions import Fraction

import numpy as np
import pytest

from abfkit.bounds import (
    LipschitzInputs,
    SampleSpec,
    data_requirement_surface,
    estimate_lipschitz_from_data,
    gershgorin_lambda_max,
    lipschitz_linear,
    lipschitz_nonlinear,
    min_samples,
    write_surface,
)
from abfkit.errors import InfeasibleError, InsufficientDataError
from abfkit.systems import (
    BlackBoxSystem,
    InputSet,
    StateBox,
    collect_dataset,
    dc_motor,
)


def exact_tail(n, eps_bar, r):
    """Arbitrary-precision tail oracle over exact rationals."""
    total = Fraction(0)
    for p in eps_bar:
        p = Fraction(p)
        q = 1 - p
        total += sum(
            math.comb(n, i) * p**i * q ** (n - i) for i in range(min(r - 1, n) + 1)
        )
    return total


def test_gershgorin_examples():
    full = np.tile([-0.2, 0.2], (2, 2, 1))
    assert gershgorin_lambda_max(full) == pytest.approx(0.4)

    identity = np.zeros((3, 3, 2))
    for i in range(3):
        identity[i, i] = [1.0, 1.0]
    assert gershgorin_lambda_max(identity) == pytest.approx(1.0)

    mixed = np.tile([-0.5, 0.5], (3, 3, 1))
    for i in range(3):
        mixed[i, i] = [0.0, 1.0]
    assert gershgorin_lambda_max(mixed, dimension=3) == pytest.approx(2.0)

    with pytest.raises(ValueError):
        gershgorin_lambda_max(np.zeros((2, 3, 2)))


def linear_inputs(**kw):
    base = dict(
        kind="linear", alpha1=0.7071, alpha2=0.7071, script_i1=1.0, script_i2=1.0,
        lambda_max_bound=0.4, delta=0.05, gamma_tilde_set=(0.1,),
    )
    base.update(kw)
    return LipschitzInputs(**base)


def test_lipschitz_linear_zero_norm_bounds():
    # with both norm bounds zero only the delta term survives
    inp = linear_inputs(alpha1=0.0, alpha2=0.0, gamma_tilde_set=(0.1, 0.5))
    out = lipschitz_linear(inp)
    expected = 2.0 * 0.4 * (1.0 * 0.05)
    assert out == pytest.approx([expected, expected])


def test_lipschitz_linear_direct_evaluation():
    out = lipschitz_linear(linear_inputs())
    # direct formula evaluation:
    # 2*0.4*(2*1*1*0.7071 + 2*1*1*0.7071 + 1*0.05 + 2*0.7071*0.1) = 2.415856
    # against the phi1 constant 8*0.7071*0.4 = 2.26272
    assert out[0] == pytest.approx(2.415856, rel=1e-12)
    assert out[0] > 8 * 0.7071 * 0.4


def test_lipschitz_linear_monotone_in_gamma():
    out = lipschitz_linear(linear_inputs(gamma_tilde_set=(0.1, 0.2, 0.7)))
    assert out[0] <= out[1] <= out[2]


def test_lipschitz_linear_missing_bounds():
    with pytest.raises(ValueError):
        lipschitz_linear(linear_inputs(script_i1=None))
    with pytest.raises(ValueError):
        lipschitz_nonlinear(linear_inputs())


def nonlinear_inputs(**kw):
    base = dict(
        kind="nonlinear", alpha1=0.7071, script_if=1.0, script_ix=1.0,
        lambda_max_bound=0.4, delta=0.05, gamma_tilde_set=(0.1,),
    )
    base.update(kw)
    return LipschitzInputs(**base)


def test_lipschitz_nonlinear_direct_evaluation():
    out = lipschitz_nonlinear(nonlinear_inputs())
    # 2*0.4*(2 + 0.05 + 2*0.7071*0.1) = 1.753136, below the phi1 constant
    assert out[0] == pytest.approx(max(1.753136, 8 * 0.7071 * 0.4), rel=1e-12)


def test_lipschitz_nonlinear_gamma_increment_identity():
    gs = (0.1, 0.2, 0.3)
    # small alpha1 keeps the gamma-dependent branch active
    inp = nonlinear_inputs(alpha1=0.1, gamma_tilde_set=gs)
    out = lipschitz_nonlinear(inp)
    inc = 4.0 * inp.lambda_max_bound * inp.alpha1 * 0.1
    assert out[1] - out[0] == pytest.approx(inc, rel=1e-12)
    assert out[2] - out[1] == pytest.approx(inc, rel=1e-12)


def test_lipschitz_nonlinear_zero_f_bound():
    inp = nonlinear_inputs(alpha1=0.3, script_if=0.0, gamma_tilde_set=(0.25,))
    out = lipschitz_nonlinear(inp)
    branch = 4.0 * inp.lambda_max_bound * inp.alpha1 * 0.25
    assert out[0] == pytest.approx(max(branch, 8 * 0.3 * 0.4))


def test_lipschitz_inputs_validation():
    with pytest.raises(ValueError):
        LipschitzInputs(kind="affine", alpha1=1.0, gamma_tilde_set=(0.1,))
    with pytest.raises(ValueError):
        LipschitzInputs(kind="linear", alpha1=1.0, gamma_tilde_set=())
    with pytest.raises(ValueError):
        LipschitzInputs(kind="linear", alpha1=1.0, gamma_tilde_set=(1.0,))


def pairs_dataset(fn, count=64, seed=0, n=1):
    box = StateBox(np.full(n, -1.0), np.full(n, 1.0))
    inputs = InputSet(np.array([[0.0]]))
    system = BlackBoxSystem(n, 1, fn)
    return collect_dataset(system, box, inputs, count, seed)


def test_estimate_lipschitz_identity_and_slope():
    data = pairs_dataset(lambda x, nu: x)
    assert estimate_lipschitz_from_data(data) == pytest.approx(1.0)
    assert estimate_lipschitz_from_data(data, safety_factor=1.5) == pytest.approx(1.5)
    data2 = pairs_dataset(lambda x, nu: 2.0 * x)
    assert estimate_lipschitz_from_data(data2) == pytest.approx(2.0)


def test_estimate_lipschitz_dc_motor_against_update_matrix():
    box = StateBox(np.array([-0.5, -0.5]), np.array([0.5, 0.5]))
    inputs = InputSet(np.array([[-0.3, -0.3], [0.3, 0.3]]))
    data = collect_dataset(dc_motor(), box, inputs, count=1000, seed=9)
    estimate = estimate_lipschitz_from_data(data)
    # one-step update matrix of the benchmark, spectral norm computed offline
    a_norm = np.linalg.norm(np.array([[0.0, -0.01], [0.01, 0.1]]), 2)
    assert a_norm == pytest.approx(0.10099019513592785)
    assert 0.9 * a_norm <= estimate <= 1.01 * a_norm


def test_estimate_lipschitz_accepts_pair_iterables():
    data = pairs_dataset(lambda x, nu: 0.5 * x, count=8)
    from_pairs = estimate_lipschitz_from_data(list(data))
    assert from_pairs == pytest.approx(0.5)


def test_estimate_lipschitz_insufficient_data():
    data = pairs_dataset(lambda x, nu: x, count=1)
    with pytest.raises(InsufficientDataError):
        estimate_lipschitz_from_data(data)
    with pytest.raises(ValueError):
        estimate_lipschitz_from_data(pairs_dataset(lambda x, nu: x), safety_factor=0.5)


def test_sample_spec_validation():
    with pytest.raises(ValueError):
        SampleSpec(epsilon=(0.5,), beta=0.1, n=2, r=4, lipschitz=(0.4,))  # eps > L
    with pytest.raises(ValueError):
        SampleSpec(epsilon=(0.1, 0.1), beta=0.1, n=2, r=4, lipschitz=(1.0,))
    spec = SampleSpec(epsilon=(0.1,), beta=0.1, n=2, r=4, lipschitz=(0.5,))
    assert spec.epsilon_bar == pytest.approx((0.04,))


def test_min_samples_closed_form():
    spec = SampleSpec(epsilon=(0.1,), beta=0.01, n=1, r=1, lipschitz=(1.0,))
    n = min_samples(spec)
    assert n == 44
    assert n == math.ceil(math.log(0.01) / math.log(0.9))


def test_min_samples_monotonicity():
    base = SampleSpec(epsilon=(0.1,), beta=0.02, n=1, r=3, lipschitz=(1.0,))
    n0 = min_samples(base)
    assert min_samples(dataclasses.replace(base, beta=0.04)) <= n0
    assert min_samples(dataclasses.replace(base, epsilon=(0.2,))) <= n0


def test_min_samples_minimality_certificate_exact():
    rng = np.random.default_rng(17)
    for _ in range(10):
        l = int(rng.integers(1, 4))
        r = int(rng.integers(1, 6))
        eps = tuple(rng.uniform(0.05, 0.5, size=l))
        beta = float(rng.uniform(0.01, 0.3))
        spec = SampleSpec(epsilon=eps, beta=beta, n=1, r=r, lipschitz=(1.0,) * l)
        n = min_samples(spec)
        assert exact_tail(n, spec.epsilon_bar, r) <= Fraction(beta)
        assert exact_tail(n - 1, spec.epsilon_bar, r) > Fraction(beta)


def test_min_samples_large_scale_paths_agree_with_exact_oracle():
    # exercises the log-space branch (N > exact-comb limit)
    spec = SampleSpec(epsilon=(0.013,), beta=0.01, n=2, r=4, lipschitz=(1.55,))
    n = min_samples(spec)
    assert n > 1200
    assert exact_tail(n, spec.epsilon_bar, 4) <= Fraction(0.01)
    assert exact_tail(n - 1, spec.epsilon_bar, 4) > Fraction(0.01)


def test_min_samples_infeasible():
    spec = SampleSpec(epsilon=(0.0,), beta=0.01, n=1, r=1, lipschitz=(1.0,))
    with pytest.raises(InfeasibleError):
        min_samples(spec)
    spec = SampleSpec(epsilon=(0.1,), beta=0.0, n=1, r=1, lipschitz=(1.0,))
    with pytest.raises(InfeasibleError):
        min_samples(spec)


def test_surface_monotone_and_consistent(tmp_path):
    spec = SampleSpec(epsilon=(0.1,), beta=0.05, n=2, r=4, lipschitz=(1.0,))
    eps_grid = [0.05, 0.1, 0.2, 0.4]
    beta_grid = [0.01, 0.05, 0.1]
    rows = data_requirement_surface(spec, eps_grid, beta_grid)
    table = {(e, b): n for e, b, n in rows}
    for b in beta_grid:
        ns = [table[(e, b)] for e in eps_grid]
        assert ns == sorted(ns, reverse=True)
    for e in eps_grid:
        ns = [table[(e, b)] for b in beta_grid]
        assert ns == sorted(ns, reverse=True)
    # grid point agrees with a direct call
    point = dataclasses.replace(spec, epsilon=(0.2,), beta=0.05)
    assert table[(0.2, 0.05)] == min_samples(point)

    csv_path = tmp_path / "surface.csv"
    write_surface(rows, csv_path, tmp_path / "surface.json")
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "epsilon,beta,N"
    assert len(lines) == 1 + len(rows)

    with pytest.raises(ValueError):
        data_requirement_surface(spec, [], beta_grid)
