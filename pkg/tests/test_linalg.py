import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import subspace_angles

from igmra.linalg import (CovarianceUpdate, ThinSvd, brand_update, cov_rank1_terms, cov_rankm_terms,
                          fix_signs, lemma1_gap_bound, lemma2_angle_bound, orthonormality_error,
                          principal_angles, prop1_scaling_probe, projector_distance, random_covariance_probe,
                          reorthonormalize, symmetric_update, thin_svd, update_covariance_svd, update_mean)


def jacobi_svd(a, sweeps=60):
    """One-sided Jacobi SVD, an independent oracle for the LAPACK-backed path."""
    u = np.array(a, dtype=float, copy=True)
    n = u.shape[1]
    v = np.eye(n)
    for _ in range(sweeps):
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                alpha = u[:, i] @ u[:, i]
                beta = u[:, j] @ u[:, j]
                gamma = u[:, i] @ u[:, j]
                if abs(gamma) <= 1e-15 * np.sqrt(alpha * beta):
                    continue
                off = max(off, abs(gamma) / np.sqrt(alpha * beta))
                zeta = (beta - alpha) / (2 * gamma)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1 + zeta**2)) if zeta != 0 else 1.0
                c = 1 / np.sqrt(1 + t**2)
                s = c * t
                ui, uj = u[:, i].copy(), u[:, j].copy()
                u[:, i], u[:, j] = c * ui - s * uj, s * ui + c * uj
                vi, vj = v[:, i].copy(), v[:, j].copy()
                v[:, i], v[:, j] = c * vi - s * vj, s * vi + c * vj
        if off < 1e-15:
            break
    sv = np.linalg.norm(u, axis=0)
    order = np.argsort(sv)[::-1]
    return sv[order], v[:, order]


def rand_orth(rng, dim, k):
    q, _ = np.linalg.qr(rng.standard_normal((dim, k)))
    return q


def max_angle(u1, u2):
    return principal_angles(reorthonormalize(u1), reorthonormalize(u2)).max_angle


# -- thin SVD -----------------------------------------------------------------

@pytest.mark.parametrize("shape", [(6, 4), (4, 6), (9, 9), (12, 3)])
def test_thin_svd_matches_jacobi_oracle(shape):
    rng = np.random.default_rng(sum(shape))
    a = rng.standard_normal(shape)
    rank = min(shape)
    svd = thin_svd(a, rank)
    oracle_s, _ = jacobi_svd(a if shape[0] >= shape[1] else a.T)
    np.testing.assert_allclose(svd.s, oracle_s[:rank], rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(svd.to_dense(), a, atol=1e-12)
    svd.check()


def test_thin_svd_truncation_keeps_top_triplets():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((8, 6))
    full = np.linalg.svd(a, compute_uv=False)
    svd = thin_svd(a, 3)
    assert svd.rank == 3
    np.testing.assert_allclose(svd.s, full[:3], rtol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(a - svd.to_dense(), 2), full[3], rtol=1e-10)


def test_thin_svd_symmetric_aliases_factors():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((5, 40))
    cov = np.cov(x)
    svd = thin_svd(cov, 5, symmetric=True)
    assert svd.symmetric and svd.v is svd.u
    np.testing.assert_allclose(svd.to_dense(), cov, atol=1e-12)
    np.testing.assert_allclose(svd.s, np.sort(np.linalg.eigvalsh(cov))[::-1], atol=1e-12)


def test_thin_svd_rejects_bad_input():
    with pytest.raises(ValueError):
        thin_svd(np.ones((3, 3)), 4)
    with pytest.raises(ValueError):
        thin_svd(np.full((3, 3), np.nan), 2)
    with pytest.raises(ValueError):
        thin_svd(np.ones((3, 4)), 2, symmetric=True)


def test_fix_signs_is_deterministic_and_preserves_product():
    rng = np.random.default_rng(3)
    u = rand_orth(rng, 6, 3)
    v = rand_orth(rng, 4, 3)
    s = np.array([3.0, 2.0, 1.0])
    fu, fv = fix_signs(-u, -v)
    gu, gv = fix_signs(u, v)
    np.testing.assert_array_equal(fu, gu)
    np.testing.assert_allclose((fu * s) @ fv.T, (u * s) @ v.T, atol=1e-14)
    idx = np.argmax(np.abs(fu), axis=0)
    assert np.all(fu[idx, range(3)] > 0)


def test_reorthonormalize_repairs_drift():
    rng = np.random.default_rng(4)
    q = rand_orth(rng, 10, 4) + 1e-5 * rng.standard_normal((10, 4))
    fixed = reorthonormalize(q)
    assert orthonormality_error(fixed) < 1e-14
    assert max_angle(q, fixed) < 1e-4


# -- Brand update -------------------------------------------------------------

def test_brand_update_full_rank_is_exact():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((7, 5))
    svd = thin_svd(a, 5)
    x, y = rng.standard_normal((7, 2)), rng.standard_normal((5, 2))
    # the update leaves the rank-5 column space, so keep rank 5 and compare the top spectrum
    new = brand_update(svd, x, y, rank=5)
    dense = a + x @ y.T
    np.testing.assert_allclose(new.s, np.linalg.svd(dense, compute_uv=False)[:5], rtol=1e-12)
    np.testing.assert_allclose(new.to_dense(), dense, atol=1e-11)
    new.check()


def test_brand_update_inside_span_adds_no_directions():
    rng = np.random.default_rng(6)
    u, v = rand_orth(rng, 8, 3), rand_orth(rng, 6, 3)
    svd = ThinSvd(u, np.array([5.0, 2.0, 1.0]), v)
    a = u @ rng.standard_normal((3, 1))
    b = v @ rng.standard_normal((3, 1))
    new = brand_update(svd, a, b)
    np.testing.assert_allclose(new.to_dense(), svd.to_dense() + a @ b.T, atol=1e-12)
    assert max_angle(new.u, u) < 1e-7


def test_brand_update_can_grow_rank():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 5))
    svd = thin_svd(a, 2)
    x, y = rng.standard_normal((6, 1)), rng.standard_normal((5, 1))
    new = brand_update(svd, x, y, rank=3)
    np.testing.assert_allclose(new.to_dense(), a + x @ y.T, atol=1e-11)


def test_brand_update_pads_when_result_is_short():
    svd = ThinSvd.zeros(5, 3)
    x = np.zeros((5, 1))
    x[0] = 1.0
    new = brand_update(svd, x, x)
    assert new.rank == 3
    np.testing.assert_allclose(new.s, [1.0, 0.0, 0.0], atol=1e-15)
    assert orthonormality_error(new.u) < 1e-12


def test_brand_update_errors():
    svd = thin_svd(np.eye(4), 2)
    with pytest.raises(ValueError):
        brand_update(svd, np.ones((3, 1)), np.ones((4, 1)))
    with pytest.raises(ValueError):
        brand_update(svd, np.ones((4, 2)), np.ones((4, 1)))


def test_symmetric_update_matches_dense_eigendecomposition():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((6, 30))
    cov = np.cov(x)
    svd = thin_svd(cov, 6, symmetric=True)
    cols = rng.standard_normal((6, 3))
    new = symmetric_update(svd, cols, weight=0.3, scale=0.9)
    dense = 0.9 * cov + 0.3 * cols @ cols.T
    np.testing.assert_allclose(new.to_dense(), dense, atol=1e-12)
    assert new.symmetric


def test_symmetric_and_general_brand_agree():
    rng = np.random.default_rng(9)
    cov = np.cov(rng.standard_normal((5, 50)))
    svd = thin_svd(cov, 5, symmetric=True)
    c = rng.standard_normal((5, 1))
    sym = symmetric_update(svd, c)
    gen = brand_update(thin_svd(cov, 5), c, c)
    np.testing.assert_allclose(sym.s, gen.s, atol=1e-12)
    assert max_angle(sym.u[:, :2], gen.u[:, :2]) < 1e-8


@settings(max_examples=40, deadline=None)
@given(dim=st.integers(2, 10), k=st.integers(1, 3), seed=st.integers(0, 10_000))
def test_brand_update_property_reconstructs_sum(dim, k, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((dim, dim))
    x, y = rng.standard_normal((dim, k)), rng.standard_normal((dim, k))
    new = brand_update(thin_svd(a, dim), x, y)
    np.testing.assert_allclose(new.to_dense(), a + x @ y.T, atol=1e-9 * max(1.0, np.abs(a).max()))
    assert orthonormality_error(new.u) < 1e-10 and orthonormality_error(new.v) < 1e-10
    assert np.all(np.diff(new.s) <= 1e-12)


# -- covariance identities ----------------------------------------------------

def test_rank1_identity_against_direct_covariance():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((4, 20))
    c = rng.standard_normal(4)
    upd = cov_rank1_terms(x.mean(axis=1), 20, c)
    assert upd.a == pytest.approx(19 / 20) and upd.b == pytest.approx(1 / 21)
    np.testing.assert_allclose(upd.apply_dense(np.cov(x)), np.cov(np.column_stack([x, c])), atol=1e-13)


def test_rank1_and_rankm_agree_for_one_point():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((5, 12))
    c = rng.standard_normal(5)
    cov = np.cov(x)
    one = cov_rank1_terms(x.mean(axis=1), 12, c)
    many = cov_rankm_terms(x.mean(axis=1), 12, c[:, None])
    np.testing.assert_allclose(one.apply_dense(cov), many.apply_dense(cov), atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(dim=st.integers(1, 20), n=st.integers(2, 200), m=st.integers(1, 50), seed=st.integers(0, 2**31))
def test_rankm_identity_property(dim, n, m, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((dim, n)) * rng.uniform(0.1, 5)
    c = rng.standard_normal((dim, m)) + rng.standard_normal((dim, 1))
    upd = cov_rankm_terms(x.mean(axis=1), n, c)
    want = np.cov(np.hstack([x, c])).reshape(dim, dim)
    got = upd.apply_dense(np.cov(x).reshape(dim, dim))
    np.testing.assert_allclose(got, want, atol=1e-12 * max(1.0, np.abs(want).max()))
    assert upd.trace_increment == pytest.approx(np.trace(want) - upd.a * np.trace(np.cov(x).reshape(dim, dim)))


def test_covariance_terms_reject_small_counts():
    with pytest.raises(ValueError):
        cov_rank1_terms(np.zeros(3), 1, np.ones(3))
    with pytest.raises(ValueError):
        cov_rankm_terms(np.zeros(3), 1, np.ones((3, 2)))
    with pytest.raises(ValueError):
        cov_rankm_terms(np.zeros(3), 5, np.ones((3, 0)))


def test_update_mean_is_exact():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((3, 100))
    mean, n = update_mean(np.zeros(3), 0, x[:, :1])
    for k in range(1, 100, 7):
        mean, n = update_mean(mean, n, x[:, k: k + 7])
    assert n == 100
    np.testing.assert_allclose(mean, x.mean(axis=1), atol=1e-14)


def test_update_covariance_svd_tracks_dense_covariance():
    rng = np.random.default_rng(13)
    x = rng.standard_normal((4, 3))
    svd = thin_svd(np.cov(x), 4, symmetric=True)
    mean, n = x.mean(axis=1), 3
    for _ in range(40):
        c = rng.standard_normal(4)
        svd = update_covariance_svd(svd, cov_rank1_terms(mean, n, c), 4)
        mean, n = update_mean(mean, n, c)
        x = np.column_stack([x, c])
    np.testing.assert_allclose(svd.to_dense(), np.cov(x), atol=1e-12)


# -- principal angles ---------------------------------------------------------

def test_principal_angles_of_a_rotated_line():
    theta = 0.3
    a = np.array([[1.0], [0.0], [0.0]])
    b = np.array([[np.cos(theta)], [np.sin(theta)], [0.0]])
    pa = principal_angles(a, b)
    assert pa.max_angle == pytest.approx(theta, abs=1e-15)


def test_principal_angles_extremes():
    e = np.eye(4)
    assert principal_angles(e[:, :2], e[:, :2]).max_angle == 0.0
    assert principal_angles(e[:, :2], e[:, 2:]).max_angle == pytest.approx(np.pi / 2)
    with pytest.raises(ValueError):
        principal_angles(2 * e[:, :2], e[:, :2])
    with pytest.raises(ValueError):
        principal_angles(e[:, :2], np.eye(3)[:, :2])


@settings(max_examples=50, deadline=None)
@given(dim=st.integers(3, 12), k1=st.integers(1, 3), k2=st.integers(1, 3), seed=st.integers(0, 2**31))
def test_principal_angles_match_scipy(dim, k1, k2, seed):
    rng = np.random.default_rng(seed)
    u1, u2 = rand_orth(rng, dim, k1), rand_orth(rng, dim, k2)
    ours = np.sort(principal_angles(u1, u2).angles)
    ref = np.sort(subspace_angles(u1, u2))
    np.testing.assert_allclose(ours, ref, atol=1e-10)
    # symmetric in its arguments and invariant to a change of basis
    np.testing.assert_allclose(np.sort(principal_angles(u2, u1).angles), ours, atol=1e-12)
    rot = rand_orth(rng, k1, k1)
    np.testing.assert_allclose(np.sort(principal_angles(u1 @ rot, u2).angles), ours, atol=1e-10)


def test_small_angles_are_resolved():
    theta = 1e-9
    a = np.array([[1.0], [0.0]])
    b = np.array([[np.cos(theta)], [np.sin(theta)]])
    assert principal_angles(a, b).max_angle == pytest.approx(theta, rel=1e-6)


def test_projector_distance_equals_sine_of_largest_angle():
    rng = np.random.default_rng(14)
    u1, u2 = rand_orth(rng, 7, 2), rand_orth(rng, 7, 2)
    assert projector_distance(u1, u2) == pytest.approx(np.sin(principal_angles(u1, u2).max_angle), abs=1e-12)


# -- perturbation bounds ------------------------------------------------------

def test_lemma1_gap_bound_on_probes():
    rng = np.random.default_rng(15)
    for d, m in [(2, 1), (4, 5), (2, 5), (4, 1)]:
        for _ in range(20):
            p = random_covariance_probe(rng, 12, d, m)
            chk = lemma1_gap_bound(p.cov, d, p.update)
            assert chk.holds, (chk.max_gap, chk.bound)


def test_lemma1_is_tight_for_rank_d_covariance():
    rng = np.random.default_rng(16)
    x = rand_orth(rng, 6, 2) @ rng.standard_normal((2, 30))
    upd = cov_rank1_terms(x.mean(axis=1), 30, rng.standard_normal(6))
    chk = lemma1_gap_bound(np.cov(x), 2, upd)
    assert chk.max_gap < 1e-12


def test_lemma2_reports_are_consistent():
    rng = np.random.default_rng(17)
    for _ in range(30):
        p = random_covariance_probe(rng, 12, 2, 5)
        chk = lemma2_angle_bound(p.cov, 2, p.update, p.n)
        assert abs(chk.observed - chk.sin_theta_max) < 1e-9
        assert chk.observed <= chk.gap_bound + 1e-12


def test_lemma2_rejects_bad_arguments():
    cov = np.eye(4)
    upd = CovarianceUpdate(1.0, 0.0, np.zeros((4, 1)))
    with pytest.raises(ValueError):
        lemma2_angle_bound(cov, 4, upd, 10)
    with pytest.raises(ValueError):
        lemma2_angle_bound(cov, 2, upd, 1)
    with pytest.raises(ValueError):
        lemma1_gap_bound(np.ones((3, 4)), 2, upd)


def test_prop1_probe_shows_positive_trend():
    probe = prop1_scaling_probe(60, (12, 2, 5), seed=3)
    assert probe.observed.shape == (60,)
    assert probe.spearman > 0.3
    assert len(probe.rows()) == 60
