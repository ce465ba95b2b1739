import json
import math

import numpy as np
import pytest

from abfkit.abf import (
    AbfCertificate,
    AbfTemplate,
    BasisFunction,
    custom_template,
    default_psi,
    diagonal_even_power_template,
    epsilon_tilde,
    eval_V,
    in_relation,
    phi1,
    phi2,
    psi_for_target_gamma,
    quadratic_form_template,
    read_certificate,
    recover_gamma_rho,
    write_certificate,
)
from abfkit.errors import NumericError, TemplateError


def dc_template():
    return diagonal_even_power_template(2, power=4, coefficient_min=-0.2, coefficient_max=0.2)


def jet_template():
    return diagonal_even_power_template(2, power=2, coefficient_min=-0.2, coefficient_max=0.2)


DC_ETA = np.array([0.2, 0.01, 0.2])
JET_ETA = np.array([0.0004, 0.0016, 0.2])


def test_eval_V_examples():
    t = dc_template()
    x = np.array([0.1, -0.2])
    assert eval_V(t, DC_ETA, x, x) == pytest.approx(0.2)
    assert eval_V(t, DC_ETA, [0.1, 0.0], [0.0, 0.0]) == pytest.approx(0.20002)
    assert eval_V(t, np.zeros(3), [0.3, -0.4], [0.1, 0.2]) == 0.0


def test_eval_V_validation():
    t = dc_template()
    with pytest.raises(ValueError):
        eval_V(t, [0.1, 0.2], [0.0, 0.0], [0.0, 0.0])
    with pytest.raises(NumericError):
        eval_V(t, DC_ETA, [1e200, 0.0], [0.0, 0.0])


def test_phi1_examples():
    t = dc_template()
    x = np.array([0.25, -0.3])
    assert phi1(t, 2.0, DC_ETA, x, x) == pytest.approx(-eval_V(t, DC_ETA, x, x))
    zero = np.zeros(3)
    assert phi1(t, 1.0, zero, [0.3, 0.4], [0.0, 0.0]) == pytest.approx(0.25)
    value = phi1(t, 0.1534, DC_ETA, [0.1, 0.0], [0.0, 0.0])
    assert value == pytest.approx(0.001534 - 0.20002)
    assert value == pytest.approx(-0.198486)


def test_phi2_examples():
    t = dc_template()
    zero = np.zeros(3)
    assert phi2(t, zero, 0.3, 0.01, [1, 1], [2, 2], [3, 3], [4, 4]) == pytest.approx(-0.01)
    const = custom_template(2, ["1"], [[0.0, 1.0]])
    c = 0.7
    x = np.array([0.2, 0.2])
    got = phi2(const, [c], 0.4, 0.05, x, x, x, x)
    assert got == pytest.approx(c - 0.4 * c - 0.05)
    # all mismatch terms zero: only the constant coefficient survives
    x = np.array([0.1, -0.1])
    got = phi2(jet_template(), JET_ETA, 0.2, 0.01, x, x, x, x)
    assert got == pytest.approx(0.15)


def test_recover_gamma_rho_case_values():
    psi = psi_for_target_gamma(0.3, 0.99)
    assert psi == pytest.approx(69.0 / 70.0)
    gamma, rho = recover_gamma_rho(0.3, 0.015, psi)
    assert gamma == pytest.approx(0.99)
    assert rho == pytest.approx(0.015 / 0.69)
    assert rho == pytest.approx(0.0217391304, abs=1e-9)

    gamma, rho = recover_gamma_rho(0.2, 0.01, 0.9875)
    assert gamma == pytest.approx(0.99)
    assert rho == pytest.approx(0.01 / 0.79)
    assert rho == pytest.approx(0.0126582278, abs=1e-9)

    _, rho = recover_gamma_rho(0.4, 0.0, 0.5)
    assert rho == 0.0


def test_recover_gamma_rho_validation():
    for bad_psi in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            recover_gamma_rho(0.3, 0.015, bad_psi)
    with pytest.raises(ValueError):
        recover_gamma_rho(1.0, 0.015, 0.5)
    with pytest.raises(ValueError):
        recover_gamma_rho(0.3, -0.1, 0.5)


def test_recover_gamma_rho_monotonicity():
    rng = np.random.default_rng(1)
    for _ in range(200):
        g = rng.uniform(0.05, 0.9)
        r = rng.uniform(0.0, 1.0)
        p = rng.uniform(0.05, 0.95)
        dg = rng.uniform(1e-4, 0.05)
        dp = rng.uniform(1e-4, 0.04)
        gamma0, rho0 = recover_gamma_rho(g, r, p)
        gamma1, _ = recover_gamma_rho(min(g + dg, 0.999), r, p)
        gamma2, _ = recover_gamma_rho(g, r, min(p + dp, 0.999))
        assert gamma1 > gamma0 and gamma2 > gamma0
        _, rho3 = recover_gamma_rho(g, r + 0.1, p)
        assert rho3 > rho0


def test_default_psi():
    assert default_psi(0.3) == pytest.approx(69.0 / 70.0)
    assert default_psi(0.995) == 0.5
    gamma, _ = recover_gamma_rho(0.5, 0.01, default_psi(0.5))
    assert gamma == pytest.approx(0.99)


def test_epsilon_tilde():
    assert epsilon_tilde(0.04, 1.0) == pytest.approx(0.2)
    sigma = 0.021 / 0.37**2
    assert epsilon_tilde(0.021, sigma) == pytest.approx(0.37)
    assert epsilon_tilde(0.0, 3.0) == 0.0
    with pytest.raises(ValueError):
        epsilon_tilde(0.04, 0.0)
    with pytest.raises(ValueError):
        epsilon_tilde(-0.01, 1.0)
    rng = np.random.default_rng(2)
    for _ in range(100):
        rho, sigma, a = rng.uniform(0.01, 5.0, size=3)
        assert epsilon_tilde(a * rho, a * sigma) == pytest.approx(epsilon_tilde(rho, sigma))


def certificate(template, eta, sigma, gamma_tilde, rho_tilde, psi):
    return AbfCertificate.build(
        template, eta, sigma, gamma_tilde, rho_tilde, psi,
        confidence=0.99, sample_count=100, epsilon=(0.013,), beta=0.01,
    )


def test_in_relation():
    const = custom_template(2, ["1"], [[0.0, 1.0]])
    cert = certificate(const, [0.01], 1.0, 0.3, 0.015, psi_for_target_gamma(0.3))
    assert cert.rho > 0.01
    assert in_relation(cert, [0.4, 0.4], [-0.4, -0.4])  # constant 0.01 <= rho

    # solved benchmark coefficients: the constant term alone exceeds rho,
    # so no pair is related
    cert = certificate(dc_template(), DC_ETA, 0.1534, 0.3, 0.015, psi_for_target_gamma(0.3))
    assert cert.rho == pytest.approx(0.015 / 0.69)
    rng = np.random.default_rng(3)
    for _ in range(100):
        x, xh = rng.uniform(-0.5, 0.5, size=(2, 2))
        assert not in_relation(cert, x, xh)

    zero_rho = certificate(const, [0.5], 1.0, 0.3, 0.0, 0.5)
    assert zero_rho.rho == 0.0
    assert not in_relation(zero_rho, [0.0, 0.0], [0.0, 0.0])


def test_phi_affinity_randomized():
    # phi1 affine in (sigma, eta); phi2 affine in (eta, rho_tilde)
    t = dc_template()
    rng = np.random.default_rng(4)
    for _ in range(50):
        x, xh, xn, xhn = rng.uniform(-0.5, 0.5, size=(4, 2))
        s0, s1 = rng.uniform(0.0, 1.0, size=2)
        e0, e1 = rng.uniform(-0.2, 0.2, size=(2, 3))
        r0, r1 = rng.uniform(0.0, 0.1, size=2)
        g = rng.uniform(0.1, 0.9)
        mid1 = phi1(t, (s0 + s1) / 2, (e0 + e1) / 2, x, xh)
        assert mid1 == pytest.approx(
            (phi1(t, s0, e0, x, xh) + phi1(t, s1, e1, x, xh)) / 2, rel=1e-9, abs=1e-12
        )
        mid2 = phi2(t, (e0 + e1) / 2, g, (r0 + r1) / 2, xn, xhn, x, xh)
        assert mid2 == pytest.approx(
            (phi2(t, e0, g, r0, xn, xhn, x, xh) + phi2(t, e1, g, r1, xn, xhn, x, xh)) / 2,
            rel=1e-9, abs=1e-12,
        )


def test_quadratic_form_template_matches_matrix():
    t = quadratic_form_template(3, entry_bound=0.5)
    assert t.size == 6
    rng = np.random.default_rng(5)
    eta = rng.uniform(-0.5, 0.5, size=6)
    # eta orders the upper triangle row by row; off-diagonals carry 2 P_ij
    P = np.zeros((3, 3))
    k = 0
    for i in range(3):
        for j in range(i, 3):
            if i == j:
                P[i, i] = eta[k]
            else:
                P[i, j] = P[j, i] = eta[k] / 2.0
            k += 1
    for _ in range(20):
        x, xh = rng.uniform(-1.0, 1.0, size=(2, 3))
        d = x - xh
        assert eval_V(t, eta, x, xh) == pytest.approx(d @ P @ d)
    intervals = t.p_entry_intervals()
    assert intervals[0, 0].tolist() == [-0.5, 0.5]
    assert intervals[0, 1].tolist() == [-0.25, 0.25]


def test_quadratic_form_positivity_rows():
    t = quadratic_form_template(2, entry_bound=0.2, pd_margin=1e-3)
    rows = t.positivity_rows()
    assert len(rows) == 4  # two rows, two sign patterns each
    # diagonally dominant coefficients satisfy every row
    eta = np.array([0.2, 0.1, 0.2])  # P = [[0.2, 0.05], [0.05, 0.2]]
    for a, b in rows:
        assert a @ eta <= b + 1e-12
    # an off-diagonal-heavy choice violates some row
    eta_bad = np.array([0.01, 0.2, 0.01])
    assert any(a @ eta_bad > b for a, b in rows)


def test_diagonal_template_structure():
    t = dc_template()
    assert [q.expression for q in t.basis] == [
        "(x1 - xh1)**4",
        "(x2 - xh2)**4",
        "1",
    ]
    intervals = t.p_entry_intervals()
    assert intervals[0, 0].tolist() == [-0.2, 0.2]
    assert intervals[0, 1].tolist() == [0.0, 0.0]
    assert t.positivity_rows() == []
    with pytest.raises(TemplateError):
        diagonal_even_power_template(2, power=3)


def test_custom_template_and_expression_safety():
    t = custom_template(2, ["(x1 - xh1)**2 + 0.5*(x2 - xh2)**2", "1"], [[0, 1], [0, 1]])
    v = eval_V(t, [1.0, 0.25], [0.3, 0.4], [0.1, 0.0])
    assert v == pytest.approx((0.2**2 + 0.5 * 0.4**2) + 0.25)
    assert t.p_entry_intervals() is None
    for bad in ("__import__('os')", "x3", "q(x1)", "x1; x2", "'a'"):
        with pytest.raises(TemplateError):
            BasisFunction(bad, 2)


def test_template_descriptor_roundtrip():
    for t in (dc_template(), quadratic_form_template(2), custom_template(1, ["x1 - xh1"], [[-1, 1]])):
        clone = AbfTemplate.from_descriptor(t.descriptor())
        assert clone.kind == t.kind
        assert [q.expression for q in clone.basis] == [q.expression for q in t.basis]
        assert np.array_equal(clone.coefficient_box, t.coefficient_box)


def test_certificate_roundtrip_lossless(tmp_path):
    cert = certificate(
        dc_template(), [0.2, 0.01, 1.0 / 3.0], 0.1534, 0.3, 0.015,
        psi_for_target_gamma(0.3),
    )
    path = tmp_path / "certificate.json"
    write_certificate(cert, path)
    loaded = read_certificate(path)
    assert np.array_equal(loaded.eta, cert.eta)
    for field in ("sigma", "gamma_tilde", "rho_tilde", "psi", "gamma", "rho",
                  "epsilon_tilde", "confidence", "beta"):
        assert getattr(loaded, field) == getattr(cert, field)
    assert loaded.epsilon == cert.epsilon
    assert loaded.sample_count == cert.sample_count
    # a second write is byte-identical
    path2 = tmp_path / "again.json"
    write_certificate(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_certificate_invariant_validation():
    t = dc_template()
    good = certificate(t, DC_ETA, 1.0, 0.3, 0.015, 0.5)
    with pytest.raises(ValueError):
        AbfCertificate(
            template=t, eta=DC_ETA, sigma=good.sigma, gamma_tilde=good.gamma_tilde,
            rho_tilde=good.rho_tilde, psi=good.psi, gamma=good.gamma + 0.01,
            rho=good.rho, epsilon_tilde=good.epsilon_tilde, confidence=good.confidence,
        )
    with pytest.raises(ValueError):
        AbfCertificate(
            template=t, eta=DC_ETA, sigma=good.sigma, gamma_tilde=good.gamma_tilde,
            rho_tilde=good.rho_tilde, psi=good.psi, gamma=good.gamma,
            rho=good.rho, epsilon_tilde=good.epsilon_tilde * 2, confidence=good.confidence,
        )
