import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qpcocycle.errors import (
    InvalidInputError,
    LevelBudgetError,
    NumericOverflowError,
    SingularMatrixError,
)
from qpcocycle.fields import GridSpec, MatrixField, as_rotation, pointwise_det
from qpcocycle.generators import make_constant, make_near_constant, make_schrodinger
from qpcocycle.iteration import (
    ContinuedFraction,
    IterationResult,
    QRField,
    Strategy,
    continued_fraction_expand,
    direct_cocycle,
    direct_cocycle_log,
    direct_lyapunov,
    double_step,
    iterate_cf,
    iterate_fast,
    iterate_qr,
    qr_decompose_field,
    qr_double_step,
)

from conftest import GOLDEN, SILVER, logform_error, random_trig_field, schrodinger_fn

STRATEGIES = [s.value for s in Strategy]


def rotation_field(grid, amp=0.1):
    th = grid.nodes()[..., 0]
    phi = 2 * np.pi * amp * np.sin(2 * np.pi * th)
    c, s = np.cos(phi), np.sin(phi)
    return MatrixField(grid, values=np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2))


def compare_to_direct(M, omega, res, pts=None):
    g = M.grid
    pts = g.points()[:, 0] if pts is None else pts
    la, na = res.log_form()
    lb, nb = direct_cocycle_log(M, omega, res.steps_n, pts)
    return np.max(logform_error(la, na, lb, nb))


# direct oracle


def test_direct_zero_steps_is_identity():
    M = random_trig_field(GridSpec.uniform(16), 3, 3, seed=0)
    np.testing.assert_allclose(direct_cocycle(M, GOLDEN, 0, 0.3), np.eye(3), atol=1e-15)


def test_direct_constant_power():
    A = np.array([[1.1, 0.3], [-0.2, 0.9]])
    M = make_constant(A, GridSpec.uniform(8))
    np.testing.assert_allclose(direct_cocycle(M, GOLDEN, 5, 0.41), np.linalg.matrix_power(A, 5), rtol=1e-13)


def test_direct_accepts_callables_and_point_batches():
    f = schrodinger_fn(1.0, 0.7)
    M = make_schrodinger(1.0, 0.7, GridSpec.uniform(32))
    t = np.array([0.1, 0.55, 0.9])
    np.testing.assert_allclose(direct_cocycle(f, GOLDEN, 7, t), direct_cocycle(M, GOLDEN, 7, t), rtol=1e-12)
    one = direct_cocycle(f, GOLDEN, 7, 0.55)
    np.testing.assert_allclose(one, direct_cocycle(f, GOLDEN, 7, t)[1], rtol=1e-14)


def test_direct_by_hand_product():
    f = schrodinger_fn(0.3, 1.2)
    th, w = 0.123, GOLDEN
    expect = f(np.array([[th + 2 * w]]))[0] @ f(np.array([[th + w]]))[0] @ f(np.array([[th]]))[0]
    np.testing.assert_allclose(direct_cocycle(f, w, 3, th), expect, rtol=1e-13)


@pytest.mark.parametrize("n,m", [(1, 1), (2, 3), (5, 8)])
def test_cocycle_identity(n, m):
    M = random_trig_field(GridSpec.uniform(32), 2, 4, seed=5, scale=0.5)
    w = GOLDEN
    for th in (0.0, 0.2718, 0.777):
        lhs = direct_cocycle(M, w, n + m, th)
        rhs = direct_cocycle(M, w, n, th + m * w) @ direct_cocycle(M, w, m, th)
        assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(lhs)


def test_negative_steps_invert():
    M = make_schrodinger(0.5, 0.8, GridSpec.uniform(32))
    w, th = GOLDEN, 0.31
    back = direct_cocycle(M, w, -3, th)
    fwd = direct_cocycle(M, w, 3, th - 3 * w)
    np.testing.assert_allclose(back @ fwd, np.eye(2), atol=1e-10)
    # M(n) M(-n) at the matching base point
    np.testing.assert_allclose(direct_cocycle(M, w, 3, th - 3 * w) @ direct_cocycle(M, w, -3, th), np.eye(2),
                               atol=1e-10)


def test_negative_steps_singular_sample():
    g = GridSpec.uniform(8)
    M = make_constant([[1.0, 0.0], [0.0, 0.0]], g)
    with pytest.raises(SingularMatrixError):
        direct_cocycle(M, GOLDEN, -1, 0.2)


# doubling


def test_constant_diagonal_doubling():
    M = make_constant(np.diag([2.0, 0.5]), GridSpec.uniform(8))
    res = iterate_fast(M, GOLDEN, 3)
    got = np.exp(res.log_scale) * res.generator.values[0]
    np.testing.assert_allclose(got, np.diag([256.0, 1 / 256.0]), rtol=1e-12)
    assert res.steps_n == 8
    assert res.omega_eff.omega[0] == as_rotation(GOLDEN).times(8).omega[0]


def test_k_zero_returns_input():
    M = random_trig_field(GridSpec.uniform(16), 2, 3, seed=1)
    res = iterate_fast(M, GOLDEN, 0)
    assert res.generator is M and res.steps_n == 1 and res.log_scale == 0.0


def test_k4_constant_is_sixteenth_power():
    A = np.array([[1.2, 0.4], [0.1, 0.8]])
    res = iterate_fast(make_constant(A, GridSpec.uniform(8)), GOLDEN, 4)
    np.testing.assert_allclose(np.exp(res.log_scale) * res.generator.values[3], np.linalg.matrix_power(A, 16),
                               rtol=1e-11)


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_one_step_single_harmonic(strategy):
    M = make_schrodinger(0.4, 0.6, GridSpec.uniform(64))
    res = double_step(M, GOLDEN, strategy=strategy)
    tol = 1e-12 if strategy != "interp" else 1e-5
    assert compare_to_direct(M, GOLDEN, res) <= tol


def test_k10_versus_direct_1024():
    g = GridSpec.uniform(256)
    M = make_schrodinger(3.5, 0.5, g)
    res = iterate_fast(M, GOLDEN, 10)
    pts = np.random.default_rng(3).uniform(size=5)
    idx = (pts * 256).astype(int)
    la, na = res.log_form()
    lb, nb = direct_cocycle_log(schrodinger_fn(3.5, 0.5), GOLDEN, 1024, idx / 256)
    assert np.max(logform_error(la[idx], na[idx], lb, nb)) <= 1e-8


def test_k6_near_constant_versus_direct():
    g = GridSpec.uniform(256)
    M = make_near_constant(np.diag([2.0, 0.5]), 1e-3, seed=4, grid=g, band=4)
    assert compare_to_direct(M, GOLDEN, iterate_fast(M, GOLDEN, 6)) <= 1e-9


def test_scaling_off_overflow_names_node():
    M = make_constant(np.diag([2.0, 0.5]), GridSpec.uniform(8))
    with pytest.raises(NumericOverflowError) as exc:
        iterate_fast(M, GOLDEN, 12, scaling=False)
    assert exc.value.node is not None
    assert "doubling step 10" in str(exc.value)


def test_scaling_off_small_k_matches():
    M = make_schrodinger(3.5, 0.5, GridSpec.uniform(64))
    a = iterate_fast(M, GOLDEN, 4, scaling=False)
    assert a.log_scale == 0.0
    assert compare_to_direct(M, GOLDEN, a) < 1e-12


def test_on_step_records():
    recs = []
    iterate_fast(make_schrodinger(3.5, 0.5, GridSpec.uniform(32)), GOLDEN, 5, on_step=recs.append)
    assert [r["step"] for r in recs] == [1, 2, 3, 4, 5]
    assert set(recs[0]) >= {"log_scale_increment", "sup_norm", "wall_time"}


def test_invalid_strategy():
    with pytest.raises(InvalidInputError):
        double_step(make_constant(np.eye(2), GridSpec.uniform(8)), GOLDEN, strategy="bogus")
    with pytest.raises(InvalidInputError):
        iterate_fast(make_constant(np.eye(2), GridSpec.uniform(8)), GOLDEN, -1)


def test_torus_two_dimensional_doubling():
    g = GridSpec((16, 16))
    x = g.nodes()
    v = np.zeros(g.sizes + (2, 2))
    v[..., 0, 0] = 3.0 + 0.3 * np.cos(2 * np.pi * x[..., 0]) + 0.2 * np.sin(2 * np.pi * x[..., 1])
    v[..., 0, 1] = -1.0
    v[..., 1, 0] = 1.0
    M = MatrixField(g, values=v)
    w = (GOLDEN, SILVER)
    res = iterate_fast(M, w, 3)
    la, na = res.log_form()
    lb, nb = direct_cocycle_log(M, w, 8, x.reshape(-1, 2))
    assert np.max(logform_error(la, na, lb, nb)) < 1e-11


@pytest.mark.parametrize("k", range(0, 9))
def test_unit_determinant_is_preserved(k):
    M = make_schrodinger(3.5, 0.5, GridSpec.uniform(256))
    res = iterate_fast(M, GOLDEN, k)
    # det(normalized) = exp(-2 log_scale); absolute error is bounded by roundoff in ad - bc
    d = pointwise_det(res.generator)
    size = np.linalg.norm(res.generator.grid_values(), axis=(-2, -1)) ** 2
    err = np.abs(d - np.exp(-2 * res.log_scale))
    assert np.max(err / size) <= 1e-12


@settings(max_examples=10, deadline=None)
@given(k=st.integers(1, 10), seed=st.integers(0, 100))
def test_doubling_matches_direct_property(k, seed):
    g = GridSpec.uniform(256)
    M = make_near_constant(np.diag([1.5, 1 / 1.5]), 0.05, seed=seed, grid=g, band=4)
    res = iterate_fast(M, GOLDEN, k)
    idx = np.random.default_rng(seed).choice(256, 8, replace=False)
    la, na = res.log_form()
    lb, nb = direct_cocycle_log(M, GOLDEN, 2 ** k, idx / 256)
    assert np.max(logform_error(la[idx], na[idx], lb, nb)) <= 1e-8


# QR


def test_qr_of_identity_and_rotations():
    g = GridSpec.uniform(16)
    q = qr_decompose_field(MatrixField.identity(g, 2))
    np.testing.assert_allclose(q.Q.values, MatrixField.identity(g, 2).values, atol=1e-15)
    np.testing.assert_allclose(q.R.values, MatrixField.identity(g, 2).values, atol=1e-15)
    R = rotation_field(g)
    q = qr_decompose_field(R)
    np.testing.assert_allclose(q.Q.values, R.values, atol=1e-14)
    np.testing.assert_allclose(q.R.values, MatrixField.identity(g, 2).values, atol=1e-14)


def test_qr_random_field():
    M = random_trig_field(GridSpec.uniform(64), 3, 5, seed=9)
    q = qr_decompose_field(M)
    Q, R = q.Q.values, q.R.values
    assert np.max(np.abs(Q @ R - M.values)) <= 1e-12 * np.max(np.abs(M.values))
    assert np.max(np.abs(np.swapaxes(Q, -1, -2) @ Q - np.eye(3))) <= 1e-13
    assert np.all(np.tril(R, -1) == 0.0)
    assert np.all(np.diagonal(R, axis1=-2, axis2=-1) >= 0)
    assert q.rank_deficient == ()


def test_qr_flags_rank_deficient_nodes():
    g = GridSpec.uniform(8)
    v = np.broadcast_to(np.eye(2), (8, 2, 2)).copy()
    v[3] = [[1.0, 2.0], [2.0, 4.0]]
    q = qr_decompose_field(MatrixField(g, values=v))
    assert q.rank_deficient == ((3,),)


def test_qr_constant_diagonal_logs():
    M = make_constant(np.diag([3.0, 1 / 3.0]), GridSpec.uniform(16))
    for k in (1, 5, 12):
        q = iterate_qr(M, GOLDEN, k)
        logs = np.sort(q.total_log_diag()[0])[::-1]
        np.testing.assert_allclose(logs, 2 ** k * np.array([np.log(3), -np.log(3)]), rtol=1e-9)


def test_qr_one_step_corrected_ordering_matches_direct():
    M = make_schrodinger(1.5, 1.0, GridSpec.uniform(128))
    q = qr_double_step(qr_decompose_field(M), GOLDEN)
    rec = q.reconstruct().values
    direct = direct_cocycle(M, GOLDEN, 2, M.grid.points()[:, 0])
    assert np.max(np.abs(rec - direct)) <= 1e-10 * np.max(np.abs(direct))


def test_qr_printed_ordering_does_not_reproduce_product():
    M = make_schrodinger(1.5, 1.0, GridSpec.uniform(128))
    q = qr_double_step(qr_decompose_field(M), GOLDEN, ordering="printed")
    direct = direct_cocycle(M, GOLDEN, 2, M.grid.points()[:, 0])
    assert np.max(np.abs(q.reconstruct().values - direct)) > 1e-2 * np.max(np.abs(direct))
    assert q.ordering == "printed"


def test_qr_orthogonality_after_15_steps():
    q = iterate_qr(make_schrodinger(3.5, 0.5, GridSpec.uniform(256)), GOLDEN, 15)
    Q = q.Q.values
    assert np.max(np.abs(np.swapaxes(Q, -1, -2) @ Q - np.eye(2))) <= 1e-11
    U = q.R.values
    assert np.all(np.tril(U, -1) == 0.0)


@pytest.mark.parametrize("k", [1, 4, 8])
def test_qr_path_agrees_with_plain_path(k):
    M = make_schrodinger(3.0, 0.8, GridSpec.uniform(256))
    q = iterate_qr(M, GOLDEN, k)
    rec = q.reconstruct().values
    p = iterate_fast(M, GOLDEN, k)
    plain = np.exp(p.log_scale) * p.generator.values
    assert np.max(np.abs(rec - plain)) <= 1e-8 * np.max(np.abs(plain))


def test_qr_step_needs_rotation():
    with pytest.raises(InvalidInputError):
        qr_double_step(qr_decompose_field(MatrixField.identity(GridSpec.uniform(8), 2)))
    with pytest.raises(InvalidInputError):
        qr_double_step(qr_decompose_field(MatrixField.identity(GridSpec.uniform(8), 2)), GOLDEN, ordering="x")


def test_graded_diag_survives_huge_ratios():
    # 40 steps of diag(3, 1/3): the logs reach 2^40 log 3, far outside float range
    q = iterate_qr(make_constant(np.diag([3.0, 1 / 3.0]), GridSpec.uniform(8)), GOLDEN, 40)
    np.testing.assert_allclose(q.total_log_diag()[0], [2 ** 40 * np.log(3), -(2 ** 40) * np.log(3)], rtol=1e-9)


# continued fractions


def test_golden_expansion():
    cf = continued_fraction_expand(GOLDEN, 12)
    assert cf.a == (1,) * 12
    assert cf.q[:8] == (1, 1, 2, 3, 5, 8, 13, 21)
    assert not cf.rational


def test_rational_is_flagged():
    cf = continued_fraction_expand(1 / 3, 6)
    assert cf.a == (3,) and cf.rational


def test_silver_expansion():
    cf = continued_fraction_expand(SILVER, 6)
    assert cf.a == (2,) * 6
    assert cf.q[1:5] == (2, 5, 12, 29)


def test_expansion_input_checks():
    with pytest.raises(InvalidInputError):
        continued_fraction_expand(1.2, 3)
    with pytest.raises(InvalidInputError):
        continued_fraction_expand(0.3, 0)


@settings(max_examples=50, deadline=None)
@given(w=st.floats(1e-3, 1 - 1e-3), m=st.integers(1, 12))
def test_convergent_properties(w, m):
    cf = continued_fraction_expand(w, m)
    for n in range(2, len(cf.q)):
        assert cf.q[n] == cf.a[n - 1] * cf.q[n - 1] + cf.q[n - 2]
    assert cf.q[0] == 1 and cf.q[1] == cf.a[0]
    for n in range(1, len(cf.q)):
        # floating-point omega: allow the residual of the input representation
        assert abs(w - cf.p[n] / cf.q[n]) < 1 / cf.q[n] ** 2 + 1e-12


def test_cf_golden_level5_is_eight_steps():
    M = make_schrodinger(1.0, 0.9, GridSpec.uniform(128))
    res = iterate_cf(M, GOLDEN, 5)
    assert res.steps_n == 8
    assert compare_to_direct(M, GOLDEN, res) <= 1e-10


def test_cf_silver_level4_is_29_steps():
    M = make_schrodinger(1.0, 0.9, GridSpec.uniform(256))
    res = iterate_cf(M, SILVER, 4)
    assert res.steps_n == 29
    assert compare_to_direct(M, SILVER, res) <= 1e-9


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_cf_strategies_golden_13(strategy):
    M = make_schrodinger(3.5, 0.5, GridSpec.uniform(128))
    res = iterate_cf(M, GOLDEN, 6, strategy=strategy)
    assert res.steps_n == 13
    tol = 1e-9 if strategy != "interp" else 1e-5
    assert compare_to_direct(M, GOLDEN, res) <= tol


def test_cf_constant_power():
    A = np.array([[1.3, 0.2], [0.0, 0.7]])
    res = iterate_cf(make_constant(A, GridSpec.uniform(8)), 0.3819, 4)
    q = res.steps_n
    np.testing.assert_allclose(np.exp(res.log_scale) * res.generator.values[0], np.linalg.matrix_power(A, q),
                               rtol=1e-11)


def test_cf_tracks_small_rotation():
    res = iterate_cf(make_constant(np.eye(2), GridSpec.uniform(8)), GOLDEN, 6)
    cf = continued_fraction_expand(GOLDEN, 6)
    assert res.rotation_real == pytest.approx(cf.q[6] * GOLDEN - cf.p[6], abs=1e-12)


def test_cf_level_budget():
    w = 1.0 / (50 + GOLDEN)
    M = make_constant(np.eye(2), GridSpec.uniform(8))
    with pytest.raises(LevelBudgetError):
        iterate_cf(M, w, 1, level_cap=10)


def test_cf_rejects_torus_and_long_requests():
    with pytest.raises(InvalidInputError):
        iterate_cf(MatrixField.identity(GridSpec((8, 8)), 2), (GOLDEN, SILVER), 2)
    with pytest.raises(InvalidInputError):
        iterate_cf(MatrixField.identity(GridSpec.uniform(8), 2), 0.25, 3)


# Lyapunov oracle


def test_lyapunov_oracle_constant():
    L = direct_lyapunov(make_constant(np.diag([3.0, 0.5]), GridSpec.uniform(8)), GOLDEN, 100, [0.1, 0.2])
    np.testing.assert_allclose(L, [[np.log(3), np.log(0.5)]] * 2, rtol=1e-12)
