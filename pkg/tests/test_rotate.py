import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group

from sfpca.rotate import RankDeficiencyError, align_draws, rotate_all, rotate_draw, variance_explained


def random_draws(S, q, k, N, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((S, q)), rng.standard_normal((S, q, k)), rng.standard_normal((S, N, k)),
            np.exp(rng.standard_normal(S)))


class TestRotateDraw:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4), st.integers(1, 12))
    def test_identities(self, seed, k, N):
        rng = np.random.default_rng(seed)
        q = k + 3
        T, A = rng.standard_normal((q, k)), rng.standard_normal((N, k))
        Ts, As, w = rotate_draw(T, A)
        assert np.abs(Ts.T @ Ts - np.eye(k)).max() < 1e-10
        assert np.abs(As @ Ts.T - A @ T.T).max() < 1e-10
        assert np.all(np.diff(w) <= 0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_invariant_to_orthogonal_mixing(self, seed):
        rng = np.random.default_rng(seed)
        T, A = rng.standard_normal((6, 3)), rng.standard_normal((5, 3))
        P = ortho_group.rvs(3, random_state=rng)
        T1, A1, w1 = rotate_draw(T, A)
        T2, A2, w2 = rotate_draw(T @ P, A @ P)
        np.testing.assert_allclose(np.abs(T1), np.abs(T2), atol=1e-8)
        np.testing.assert_allclose(A1 @ T1.T, A2 @ T2.T, atol=1e-10)
        np.testing.assert_allclose(w1, w2, rtol=1e-10)

    def test_orthonormal_input_is_fixed_point(self):
        Q = np.linalg.qr(np.random.default_rng(1).standard_normal((5, 2)))[0]
        T = Q * [2.0, 1.0]
        A = np.random.default_rng(2).standard_normal((4, 2))
        Ts, _, w = rotate_draw(T, A)
        np.testing.assert_allclose(np.abs(Ts), np.abs(Q), atol=1e-12)
        np.testing.assert_allclose(w, [4.0, 1.0])

    def test_sign_convention(self):
        Ts, _, _ = rotate_draw(np.random.default_rng(3).standard_normal((6, 2)), np.ones((1, 2)))
        pivot = np.argmax(np.abs(Ts), axis=0)
        assert np.all(Ts[pivot, [0, 1]] > 0)

    def test_rank_deficient(self):
        c = np.arange(1.0, 6.0)
        with pytest.raises(RankDeficiencyError):
            rotate_draw(np.stack([c, c], axis=1), np.ones((3, 2)))


class TestRotateAll:
    def test_excludes_rank_deficient(self):
        tm, T, A, s = random_draws(5, 5, 2, 3)
        T[2, :, 1] = T[2, :, 0]
        rd = rotate_all(tm, T, A, s)
        assert rd.excluded.tolist() == [2]
        assert rd.draw_index.tolist() == [0, 1, 3, 4]

    def test_all_deficient(self):
        tm, T, A, s = random_draws(2, 4, 2, 3)
        T[:, :, 1] = T[:, :, 0]
        with pytest.raises(RankDeficiencyError):
            rotate_all(tm, T, A, s)


class TestAlign:
    def test_sign_flip_and_swap(self):
        Q = np.linalg.qr(np.random.default_rng(4).standard_normal((6, 2)))[0]
        A = np.random.default_rng(5).standard_normal((8, 2)) * [3.0, 1.0]
        T = np.stack([Q, Q * [-1, 1], Q[:, ::-1]])
        As = np.stack([A, A * [-1, 1], A[:, ::-1]])
        rd = rotate_all(np.zeros((3, 6)), T, As, np.ones(3))
        # bypass the per-draw sign rule so the draws really differ
        rd.Theta_star[:] = T
        rd.alpha_star[:] = As
        out = align_draws(rd)
        np.testing.assert_allclose(out.Theta_star[1], out.Theta_star[0], atol=1e-12)
        np.testing.assert_allclose(out.Theta_star[2], out.Theta_star[0], atol=1e-12)
        np.testing.assert_allclose(out.alpha_star[2], out.alpha_star[0], atol=1e-12)

    def test_reconstruction_unchanged(self):
        tm, T, A, s = random_draws(50, 6, 3, 7, seed=6)
        rd = rotate_all(tm, T, A, s)
        before = rd.reconstruction()
        np.testing.assert_allclose(align_draws(rd).reconstruction(), before, atol=1e-12)

    def test_orders_by_score_variance(self):
        tm, T, A, s = random_draws(20, 6, 3, 30, seed=7)
        out = align_draws(rotate_all(tm, T, A, s))
        v = out.score_variance().mean(axis=0)
        assert np.all(np.diff(v) <= 0)


class TestVarianceExplained:
    def test_single_component(self):
        tm, T, A, s = random_draws(4, 5, 1, 6)
        ve = variance_explained(rotate_all(tm, T, A, s))
        np.testing.assert_array_equal(ve["mean"], [1.0])

    def test_known_score_variances(self):
        rng = np.random.default_rng(8)
        Q = np.linalg.qr(rng.standard_normal((5, 2)))[0]
        S, N = 20, 4000
        # the model carries score scale in the loadings: Theta = Q sqrt(D), alpha ~ N(0, I)
        T = np.repeat((Q * np.sqrt([4.0, 1.0]))[None], S, 0)
        A = rng.standard_normal((S, N, 2))
        rd = align_draws(rotate_all(np.zeros((S, 5)), T, A, np.ones(S)))
        np.testing.assert_allclose(variance_explained(rd)["mean"], [0.8, 0.2], atol=0.01)
        assert variance_explained(rd)["per_draw"].sum(axis=1) == pytest.approx(np.ones(S))
