import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regpred.errors import InvalidArgumentError, NotPositiveDefiniteError
from regpred.gp import Kernel, gp_fit, gp_posterior, kernel_eval

KINDS = ("se", "matern32", "matern52")


def dense_oracle(x, y, kernel, diag, xq):
    """Posterior by explicit matrix inverse on the raw scale."""
    y_mean, y_scale = y.mean(), y.std()
    if y_scale == 0:
        y_scale = 1.0
    ys = (y - y_mean) / y_scale

    def k(a, b):
        r = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
        return kernel.of_distance(r)

    kinv = np.linalg.inv(k(x, x) + diag * np.eye(len(x)))
    ks = k(xq, x)
    mu = y_mean + y_scale * ks @ kinv @ ys
    var = 1.0 - np.einsum("ij,jk,ik->i", ks, kinv, ks)
    return mu, np.clip(var, 0, None) * y_scale**2


class TestKernel:
    @pytest.mark.parametrize("kind", KINDS)
    def test_unit_at_zero(self, kind):
        x = np.array([0.3, -1.2])
        assert kernel_eval(Kernel(kind, 0.7), x, x) == 1.0

    def test_matern52_value(self):
        expect = (1 + np.sqrt(5) + 5 / 3) * np.exp(-np.sqrt(5))
        assert kernel_eval(Kernel("matern52", 1.0), [0.0], [1.0]) == pytest.approx(expect, rel=1e-14)
        assert expect == pytest.approx(0.52399, abs=1e-5)

    def test_matern32_value(self):
        expect = (1 + np.sqrt(3) * 2) * np.exp(-np.sqrt(3) * 2)
        assert kernel_eval(Kernel("matern32", 0.5), [0.0], [1.0]) == pytest.approx(expect, rel=1e-14)

    def test_se_decay(self):
        assert kernel_eval(Kernel("se", 1.0), [0.0], [10.0]) < 1e-8
        assert kernel_eval(Kernel("se", 2.0), [0.0, 0.0], [1.0, 1.0]) == pytest.approx(np.exp(-2 / 8))

    def test_validation(self):
        with pytest.raises(InvalidArgumentError):
            Kernel("rbf")
        with pytest.raises(InvalidArgumentError):
            Kernel("se", 0.0)
        with pytest.raises(InvalidArgumentError):
            kernel_eval(Kernel(), [0.0], [0.0, 1.0])

    @pytest.mark.parametrize("kind", KINDS)
    def test_decreasing_in_r(self, kind):
        r = np.linspace(0, 8, 400)
        k = Kernel(kind, 1.0).of_distance(r)
        assert np.all(np.diff(k) < 0)

    @given(
        kind=st.sampled_from(KINDS),
        scale=st.floats(0.05, 5),
        a=st.lists(st.floats(-3, 3), min_size=3, max_size=3),
        b=st.lists(st.floats(-3, 3), min_size=3, max_size=3),
    )
    def test_range_and_symmetry(self, kind, scale, a, b):
        kern = Kernel(kind, scale)
        v = kernel_eval(kern, a, b)
        assert 0 < v <= 1 or (v == 0 and np.linalg.norm(np.subtract(a, b)) / scale > 5)
        assert v == kernel_eval(kern, b, a)


class TestFit:
    def test_single_point(self):
        m = gp_fit([[0.5]], [3.2])
        mu, var = gp_posterior(m, [0.5])
        assert mu == pytest.approx(3.2, abs=1e-12)
        assert var <= 1e-7

    def test_interpolates_three_points(self):
        x = np.array([[0.0], [0.5], [1.0]])
        y = np.array([1.0, -2.0, 0.5])
        m = gp_fit(x, y, Kernel("se", 1.0), jitter=1e-8)
        mu, var = gp_posterior(m, x)
        # explicit 3x3 linear solve
        kxx = np.exp(-0.5 * (x - x.T) ** 2) + 1e-8 * np.eye(3)
        ys = (y - y.mean()) / y.std()
        oracle = y.mean() + y.std() * (np.exp(-0.5 * (x - x.T) ** 2) @ np.linalg.solve(kxx, ys))
        np.testing.assert_allclose(mu, oracle, atol=1e-9)
        np.testing.assert_allclose(mu, y, atol=1e-6)
        assert np.all(var <= 1e-6)

    def test_constant_outputs(self):
        m = gp_fit([[0.0], [1.0], [2.0]], [4.0, 4.0, 4.0])
        assert m.y_scale == 1.0
        mu, _ = gp_posterior(m, np.linspace(0, 2, 9)[:, None])
        np.testing.assert_allclose(mu, 4.0, atol=1e-6)

    def test_duplicates_need_jitter(self):
        x = np.array([[0.2], [0.2], [0.7]])
        m = gp_fit(x, [1.0, 1.1, 0.0], jitter=0.0)
        assert m.jitter > 0

    def test_jitter_cap(self):
        class Indefinite(Kernel):
            def matrix(self, xa, xb):
                k = np.ones((len(xa), len(xb)))
                k[0, 0] = -1.0
                return k

        with pytest.raises(NotPositiveDefiniteError):
            gp_fit(np.zeros((4, 1)), np.arange(4.0), Indefinite("se", 1.0))

    def test_input_validation(self):
        with pytest.raises(InvalidArgumentError):
            gp_fit(np.zeros((3, 1)), np.zeros(2))
        with pytest.raises(InvalidArgumentError):
            gp_fit([[np.nan]], [1.0])
        m = gp_fit(np.zeros((1, 2)), [0.0])
        with pytest.raises(InvalidArgumentError):
            gp_posterior(m, [0.0, 0.0, 0.0])


class TestPosterior:
    def test_prior_far_away(self):
        x = np.array([[0.0], [0.3], [0.6]])
        y = np.array([2.0, 5.0, 3.0])
        m = gp_fit(x, y, Kernel("se", 0.1))
        mu, var = gp_posterior(m, [50.0])
        assert mu == pytest.approx(y.mean(), abs=1e-10)
        assert var == pytest.approx(y.std() ** 2, rel=1e-10)

    def test_training_input(self):
        x = np.array([[0.0, 0.0], [1.0, 0.5], [0.2, 0.9]])
        y = np.array([1.0, 2.0, -1.0])
        m = gp_fit(x, y, jitter=1e-12)
        mu, var = gp_posterior(m, x[1])
        assert mu == pytest.approx(2.0, abs=1e-8)
        assert var == pytest.approx(0.0, abs=1e-8)

    def test_grid_matches_dense_oracle(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(size=(5, 2))
        y = rng.normal(size=5)
        kern = Kernel("matern52", 0.8)
        m = gp_fit(x, y, kern, noise=1e-4)
        xq = rng.uniform(size=(20, 2))
        mu, var = gp_posterior(m, xq)
        omu, ovar = dense_oracle(x, y, kern, m.jitter + m.noise, xq)
        np.testing.assert_allclose(mu, omu, atol=1e-8)
        np.testing.assert_allclose(var, ovar, atol=1e-8)

    @given(st.integers(0, 2**31), st.sampled_from(KINDS))
    @settings(max_examples=30, deadline=None)
    def test_variance_non_increasing(self, seed, kind):
        rng = np.random.default_rng(seed)
        n, m_dim = rng.integers(1, 8), rng.integers(1, 4)
        x = rng.uniform(size=(n + 1, m_dim))
        y = rng.normal(size=n + 1)
        xq = rng.uniform(size=(10, m_dim))
        kern = Kernel(kind, 0.5)
        # compare on the standardized scale so the y_scale change doesn't mask the effect
        small = gp_fit(x[:-1], y[:-1], kern, jitter=1e-6)
        big = gp_fit(x, y, kern, jitter=1e-6)
        _, v1 = gp_posterior(small, xq)
        _, v2 = gp_posterior(big, xq)
        assert np.all(v2 / big.y_scale**2 <= v1 / small.y_scale**2 + 1e-8)

    @given(st.integers(0, 2**31))
    @settings(max_examples=30)
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(size=(6, 2))
        y = rng.normal(size=6)
        perm = rng.permutation(6)
        xq = rng.uniform(size=(5, 2))
        a = gp_posterior(gp_fit(x, y, noise=1e-4), xq)
        b = gp_posterior(gp_fit(x[perm], y[perm], noise=1e-4), xq)
        np.testing.assert_allclose(a[0], b[0], atol=1e-10)
        np.testing.assert_allclose(a[1], b[1], atol=1e-10)

    @given(st.integers(0, 2**31))
    @settings(max_examples=30)
    def test_variance_non_negative(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(size=(8, 1))
        m = gp_fit(x, rng.normal(size=8), Kernel("se", 2.0))
        _, var = gp_posterior(m, rng.uniform(-1, 2, size=(30, 1)))
        assert np.all(var >= 0)
