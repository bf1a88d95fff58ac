import json

import numpy as np
import pytest

from hdgal.mesh import generate_unit_square
from hdgal.perturblab import (DenseSaddle, HypothesisError, RestrictedSingularError, projected_inverses, r_gamma,
                              random_saddle, run_verification, verify_al_corollary, verify_appendixA_equivalence,
                              verify_schur_expansion, worked_example)


def test_worked_example_values():
    ds = worked_example()
    assert ds.neg_schur(10.0)[0, 0] == pytest.approx(1.0 / 11.0, rel=1e-15)
    _, E_Q, _, _ = projected_inverses(ds)
    lead = (ds.B @ E_Q @ ds.B.T)[0, 0] / 10.0
    assert lead == pytest.approx(0.1, rel=1e-15)
    assert ds.neg_schur(10.0)[0, 0] - lead == pytest.approx(-1.0 / 110.0, rel=1e-12)


def test_worked_example_sign_is_minus():
    rep = verify_schur_expansion(worked_example(), gammas=(10.0, 100.0))
    assert rep["sign"] == "-"
    assert rep["max_residual_minus"] <= 1e-14
    # the printed plus sign leaves 0.10909 against 1/11
    assert rep["rows"][0]["residual_plus"] == pytest.approx((0.1 + 1 / 110 - 1 / 11) * 11, rel=1e-6)


def test_worked_example_first_order_at_large_gamma():
    ds = worked_example()
    assert abs(ds.neg_schur(1e4)[0, 0] - 1e-4) <= 2e-8


def test_identity_A_projectors(rng):
    n, m = 6, 2
    ds = random_saddle(rng, n, m)
    ds = DenseSaddle(np.eye(n), ds.B, ds.J)
    E_P, E_Q, P, Q = projected_inverses(ds)
    assert np.abs(E_P - P).max() <= 1e-12
    assert np.abs(P @ P - P).max() <= 1e-12
    Y = np.linalg.eigh(ds.J)[1][:, -m:]
    assert np.abs(E_Q - Y @ np.linalg.inv(Y.T @ ds.J @ Y) @ Y.T).max() <= 1e-10
    assert np.abs(P + Q - np.eye(n)).max() <= 1e-12


def test_two_by_two_projectors():
    ds = DenseSaddle(np.eye(2), np.array([[1.0, 0.0]]), np.diag([1.0, 0.0]))
    E_P, E_Q, P, Q = projected_inverses(ds)
    assert np.allclose(P, np.diag([0.0, 1.0]), atol=1e-15)
    assert np.allclose(E_P, np.diag([0.0, 1.0]), atol=1e-15)
    assert np.allclose(E_Q, np.diag([1.0, 0.0]), atol=1e-15)


def test_random_projector_identities(rng):
    n, m = 8, 5  # 3-dimensional null space of J
    ds = random_saddle(rng, n, m)
    E_P, E_Q, P, Q = projected_inverses(ds)
    EA = E_P @ ds.A
    assert np.abs(EA @ EA - EA).max() <= 1e-10
    assert np.abs(E_P @ ds.A @ E_P - E_P).max() <= 1e-10
    assert np.abs(P @ E_P @ P - E_P).max() <= 1e-10
    assert np.abs(ds.J @ E_Q @ ds.J - ds.J).max() <= 1e-10
    assert np.linalg.matrix_rank(P) == 3


def test_expansion_is_exact_minus(rng):
    for _ in range(5):
        n = int(rng.integers(4, 13))
        m = int(rng.integers(1, n))
        rep = verify_schur_expansion(random_saddle(rng, n, m))
        assert rep["sign"] == "-"
        assert rep["max_residual_minus"] <= 1e-10
        assert rep["C_ratio"] <= 3.0


def test_r_gamma_matches_dense_residual(rng):
    ds = random_saddle(rng, 7, 3)
    g = 1e3
    E_P, E_Q, _, _ = projected_inverses(ds)
    direct = ds.neg_schur(g) - ds.B @ E_Q @ ds.B.T / g
    assert np.allclose(direct, -ds.B @ r_gamma(ds, g) @ ds.B.T / g**2, rtol=1e-8, atol=1e-14)


def test_al_mass_identity_orthonormal_rows():
    Bq, _ = np.linalg.qr(np.random.default_rng(2).standard_normal((6, 3)))
    ds = DenseSaddle.augmented(np.eye(6) * 2, Bq.T, np.eye(3))
    _, E_Q, _, _ = projected_inverses(ds)
    assert np.abs(ds.B @ E_Q @ ds.B.T - np.eye(3)).max() <= 1e-14


def test_al_mass_identity_random(rng):
    rep = verify_al_corollary(random_saddle(rng, 8, 3, "al"))
    assert rep["identity_error"] <= 1e-9
    assert abs(rep["slope"] + 2.0) <= 0.2
    assert all(a > b for a, b in zip(rep["gaps"], rep["gaps"][1:]))


def test_hypothesis_guards():
    with pytest.raises(HypothesisError, match="N\\(J\\)"):
        DenseSaddle(np.eye(2), np.array([[1.0, 1.0]]), np.diag([1.0, 0.0]))
    with pytest.raises(HypothesisError, match="rank"):
        DenseSaddle(np.eye(3), np.array([[1.0, 0.0, 0.0]]), np.diag([1.0, 1.0, 0.0]))
    with pytest.raises(HypothesisError, match="singular"):
        DenseSaddle(np.eye(2), np.array([[1.0, 0.0]]), np.eye(2))
    with pytest.raises(HypothesisError, match="symmetric"):
        DenseSaddle(np.eye(2), np.array([[1.0, 0.0]]), np.array([[1.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(HypothesisError, match="m < n"):
        DenseSaddle(np.eye(1), np.array([[1.0]]), np.zeros((1, 1)))
    with pytest.raises(HypothesisError, match="full row rank"):
        DenseSaddle(np.eye(3), np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]), np.diag([1.0, 0.0, 0.0]))
    with pytest.raises(HypothesisError, match="SPD"):
        DenseSaddle(np.eye(2), np.array([[1.0, 0.0]]), np.diag([1.0, 0.0]), np.array([[-1.0]]))
    with pytest.raises(HypothesisError, match="M given"):
        verify_al_corollary(random_saddle(np.random.default_rng(0), 5, 2))


def test_restricted_singular():
    A = np.diag([1.0, 0.0])  # P A P vanishes on N(J)
    ds = DenseSaddle(A, np.array([[1.0, 0.0]]), np.diag([1.0, 0.0]))
    with pytest.raises(RestrictedSingularError):
        projected_inverses(ds)


@pytest.mark.parametrize("k", [1, 2])
def test_penalty_mixed_equivalence(k):
    r = verify_appendixA_equivalence(generate_unit_square(2), k, 1e3, seed=11)
    assert r["u_rel"] <= 1e-9 and r["pbar_rel"] <= 1e-9 and r["u_A8_rel"] <= 1e-9


def test_penalty_mixed_guard():
    with pytest.raises(ValueError, match="gamma > 0"):
        verify_appendixA_equivalence(generate_unit_square(2), 1, 0.0)


def test_penalty_mixed_jump_order_inverse_gamma():
    def field_(x):
        return np.stack([x[:, 0] ** 2, -2 * x[:, 0] * x[:, 1]], axis=1)

    m = generate_unit_square(2)
    a = verify_appendixA_equivalence(m, 2, 1e2, source=field_)
    b = verify_appendixA_equivalence(m, 2, 1e4, source=field_)
    # gamma * jump stays bounded, so pbar = gamma h^-1 [u.n] stays bounded
    assert b["jump_norm"] * 1e4 == pytest.approx(a["jump_norm"] * 1e2, rel=0.02)
    assert b["jump_norm"] <= 1e-5


def test_run_verification_report():
    rep = run_verification(seed=7, instances=10)
    assert rep.passed, rep.text()
    data = json.loads(rep.to_json())
    assert data["passed"] and data["seed"] == 7
    assert data["results"]["expansion"]["sign"] == "-"
    assert "PASS" in rep.text() and "FAIL" not in rep.text()
