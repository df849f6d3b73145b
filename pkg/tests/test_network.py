import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regpred.errors import DivergenceError, ForecastFailedError, InvalidArgumentError
from regpred.network import (
    NetworkConfig,
    average_endpoints,
    forecast,
    forecast_losses,
    layer_dims,
    loss_average,
    loss_single,
    prednet_simulate,
    regnet_forward,
    simulate_trajectories,
    summarize_paths,
)
from regpred.online import LayerHyper, regress_series
from regpred.ou import simulate_named


def layer1(rates=(0.01, 0.05, 0.01, 0.5, 0.5), z0=(-0.1, 0.1, 0.005)):
    return LayerHyper.from_vector(rates, np.array(z0, dtype=float))


def layer2(rates=(0.001, 0.001, 0.001, 0.5, 0.5), fill=0.0, sigma=0.001):
    z0 = np.full(21, fill)
    z0[12:] = 0.0
    z0[12:].reshape(3, 3)[np.diag_indices(3)] = sigma
    return LayerHyper.from_vector(rates, z0)


@pytest.fixture(scope="module")
def ou_series():
    return simulate_named("ou", 1.0, 300, seed=4, alpha=0.2, level=1.0, sigma=0.01)[:, 0]


def brute_force_losses(actual, mean, var):
    n = len(actual)
    le = (sum((actual[i] - mean[i]) ** 2 for i in range(n)) / n) ** 0.5
    lv = (sum(((actual[i] - mean[i]) ** 2 - var[i]) ** 2 for i in range(n)) / n) ** 0.5
    return le, lv


class TestConfig:
    def test_dims(self):
        assert layer_dims(3) == [1, 3, 21, 903]

    def test_layer_count(self):
        NetworkConfig((layer1(), layer2()))
        with pytest.raises(InvalidArgumentError):
            NetworkConfig(())
        h3 = LayerHyper(0, 0, 0, 0, 0, np.zeros(903))
        with pytest.raises(InvalidArgumentError):
            NetworkConfig((layer1(), layer2(), h3))
        cfg = NetworkConfig((layer1(), layer2(), h3), allow_three_layers=True)
        assert cfg.dims == [1, 3, 21, 903]

    def test_layer_dim_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            NetworkConfig((layer2(),))
        with pytest.raises(InvalidArgumentError):
            NetworkConfig((layer1(), layer1()))

    def test_defaults(self):
        cfg = NetworkConfig((layer1(),))
        assert cfg.horizon == 100
        assert cfg.n_trajectories == 50


class TestRegnetForward:
    def test_single_layer_matches_regress_series(self, ou_series):
        cfg = NetworkConfig((layer1(),))
        out = regnet_forward(ou_series, cfg)
        zs, state = regress_series(ou_series, layer1())
        np.testing.assert_array_equal(out.zs[0][1:], zs)
        np.testing.assert_array_equal(out.zs[0][0], layer1().z0)
        np.testing.assert_array_equal(out.states[0].a, state.a)

    def test_two_layer_dims(self, ou_series):
        out = regnet_forward(ou_series[:11], NetworkConfig((layer1(), layer2())))
        assert out.zs[0].shape == (11, 3)
        assert out.zs[1].shape == (11, 21)

    def test_zero_rates_constant(self, ou_series):
        h1 = LayerHyper(0, 0, 0, 0, 0, layer1().z0)
        h2 = LayerHyper(0, 0, 0, 0, 0, layer2().z0)
        out = regnet_forward(ou_series[:50], NetworkConfig((h1, h2)))
        for z, h in zip(out.zs, (h1, h2)):
            np.testing.assert_array_equal(z, np.broadcast_to(h.z0, z.shape))

    def test_divergence_located(self, ou_series):
        bad = layer1(rates=(0.01, 0.05, 50.0, 0.5, 0.5), z0=(0.0, 0.0, 2.0))
        with pytest.raises(DivergenceError) as info:
            regnet_forward(ou_series * 100, NetworkConfig((bad,)))
        assert info.value.layer == 1
        assert info.value.step is not None


class TestPrednet:
    def test_hand_path(self):
        path = prednet_simulate([np.array([0.0, 0.1, 0.0])], 1.0, 3, seed=0)
        np.testing.assert_allclose(path, [1.1, 1.2, 1.3], atol=1e-15)

    def test_zero_volatility_ignores_seed(self):
        z1 = np.array([-0.2, 0.3, 0.0])
        a = prednet_simulate([z1], 2.0, 20, seed=1)
        b = prednet_simulate([z1], 2.0, 20, seed=999)
        np.testing.assert_array_equal(a, b)
        y, expect = 2.0, []
        for _ in range(20):
            y = y - 0.2 * y + 0.3
            expect.append(y)
        np.testing.assert_allclose(a, expect, atol=1e-12)

    def test_two_layer_zero_volatility_recursion(self):
        rng = np.random.default_rng(2)
        z1 = np.array([-0.1, 0.05, 0.0])
        a2 = rng.normal(scale=0.05, size=(3, 3))
        n2 = rng.normal(scale=0.01, size=3)
        n2[2] = 0.0
        a2[2] = 0.0  # keep layer-1 sigma at zero
        z2 = np.concatenate([a2.ravel(), n2, np.zeros(9)])
        path = prednet_simulate([z1, z2], 1.0, 15, seed=3)
        # closed-form oracle: top layer frozen, layer 1 driven by it, layer 0 by layer 1
        y, z = 1.0, z1.copy()
        expect = []
        for _ in range(15):
            y_new = y + z[0] * y + z[1] + z[2] * 0.0
            z = z + a2 @ z + n2
            y = y_new
            expect.append(y)
        np.testing.assert_allclose(path, expect, atol=1e-12)

    def test_explicit_noise(self):
        w = np.array([[0.5], [-1.0]])
        path = prednet_simulate([np.array([0.0, 0.0, 2.0])], 0.0, 2, noise=[w])
        np.testing.assert_allclose(path, [1.0, -1.0])

    def test_seed_determinism(self):
        z1 = np.array([-0.1, 0.1, 0.02])
        a = prednet_simulate([z1], 1.0, 30, seed=5, index=3)
        b = prednet_simulate([z1], 1.0, 30, seed=5, index=3)
        np.testing.assert_array_equal(a, b)
        paths = simulate_trajectories([z1], 1.0, 30, 10, seed=5)
        np.testing.assert_array_equal(paths[3], a)

    def test_divergent_path(self):
        with pytest.raises(DivergenceError):
            prednet_simulate([np.array([1e200, 0.0, 0.0])], 1e200, 5, seed=0)

    def test_noise_xor_seed(self):
        with pytest.raises(InvalidArgumentError):
            prednet_simulate([np.zeros(3)], 1.0, 3)


class TestForecast:
    def test_zero_volatility(self, ou_series):
        h = layer1(rates=(0.01, 0.05, 0.0, 0.5, 0.5), z0=(-0.1, 0.1, 0.0))
        cfg = NetworkConfig((h,), horizon=25, n_trajectories=10)
        res = forecast(ou_series, cfg, seed=1)
        np.testing.assert_array_equal(res.variance, 0.0)
        out = regnet_forward(ou_series, cfg)
        det = prednet_simulate([out.zs[0][-1]], ou_series[-1], 25, seed=0)
        np.testing.assert_allclose(res.mean, det, atol=1e-12)
        lo, hi = res.band95
        np.testing.assert_array_equal(lo, res.mean)
        np.testing.assert_array_equal(hi, res.mean)

    def test_internal_consistency(self, ou_series):
        cfg = NetworkConfig((layer1(), layer2()), horizon=20, n_trajectories=30)
        res = forecast(ou_series, cfg, seed=2)
        assert res.trajectories.shape == (30, 20)
        np.testing.assert_array_equal(res.mean, res.trajectories.mean(axis=0))
        np.testing.assert_array_equal(res.variance, res.trajectories.var(axis=0))
        assert np.all(res.variance >= 0)
        lo, hi = res.band95
        assert np.all(lo <= res.mean) and np.all(res.mean <= hi)

    @pytest.mark.parametrize("threads", [2, 3, 8])
    def test_thread_count_independent(self, ou_series, threads):
        cfg = NetworkConfig((layer1(), layer2()), horizon=20, n_trajectories=37)
        a = forecast(ou_series, cfg, seed=9, threads=1)
        b = forecast(ou_series, cfg, seed=9, threads=threads)
        assert a.mean.tobytes() == b.mean.tobytes()
        assert a.variance.tobytes() == b.variance.tobytes()

    def test_needs_two_trajectories(self, ou_series):
        with pytest.raises(InvalidArgumentError):
            forecast(ou_series, NetworkConfig((layer1(),), n_trajectories=1), seed=0)

    def test_drop_and_count(self):
        paths = np.ones((10, 4))
        paths[[1, 7], 2] = np.inf
        res = summarize_paths(paths)
        assert res.n_diverged == 2
        assert res.trajectories.shape == (8, 4)
        paths[:5, 0] = np.nan
        with pytest.raises(ForecastFailedError):
            summarize_paths(paths)

    def test_csv(self, tmp_path, ou_series):
        res = forecast(ou_series, NetworkConfig((layer1(),), horizon=5, n_trajectories=4), seed=0)
        path = tmp_path / "f.csv"
        res.to_csv(path, start=301)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,mean,variance,lo95,hi95"
        assert len(lines) == 6
        assert lines[1].startswith("301,")


class TestLosses:
    def test_perfect(self):
        y = np.array([1.0, 2.0, 3.0])
        assert forecast_losses(y, y, np.zeros(3)) == (0.0, 0.0)

    def test_constant_offset(self):
        y = np.array([1.0, -2.0, 3.0, 0.5])
        le, lv = forecast_losses(y, y + 0.3, np.zeros(4))
        assert le == pytest.approx(0.3, abs=1e-15)
        assert lv == pytest.approx(0.09, abs=1e-15)

    @given(st.integers(0, 2**31))
    @settings(max_examples=30)
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        y, m, v = rng.normal(size=4), rng.normal(size=4), rng.uniform(0, 2, 4)
        np.testing.assert_allclose(forecast_losses(y, m, v), brute_force_losses(y, m, v), rtol=1e-12)

    def test_loss_single_uses_tail(self, ou_series):
        cfg = NetworkConfig((layer1(),), horizon=10, n_trajectories=8)
        res = loss_single(ou_series, cfg, seed=3)
        fc = forecast(ou_series[:-10], cfg, seed=3)
        np.testing.assert_array_equal(res.mean, fc.mean)
        le, lv = brute_force_losses(ou_series[-10:], fc.mean, fc.variance)
        assert res.loss_mean == pytest.approx(le, rel=1e-12)
        assert res.loss_var == pytest.approx(lv, rel=1e-12)

    def test_loss_single_divergence_is_inf(self, ou_series):
        bad = layer1(rates=(0.01, 0.05, 50.0, 0.5, 0.5), z0=(0.0, 0.0, 2.0))
        res = loss_single(ou_series * 100, NetworkConfig((bad,), horizon=5, n_trajectories=4), seed=0)
        assert res.loss_mean == np.inf and res.loss_var == np.inf


class TestLossAverage:
    def test_endpoint_count(self):
        for T in (2, 3, 10, 57):
            for stride in (1, 2, 5, 64):
                assert len(average_endpoints(T, stride)) == (T - 2) // stride + 1

    def test_single_term(self, ou_series):
        y = ou_series[:2 + 1 + 6]  # T = 2 with horizon 6
        cfg = NetworkConfig((layer1(),), horizon=6, n_trajectories=5)
        avg = loss_average(y, cfg, seed=4)
        single = loss_single(y, cfg, seed=4)
        assert avg == (single.loss_mean, single.loss_var)

    def test_manual_mean(self, ou_series):
        horizon = 5
        y = ou_series[:4 + 1 + horizon]  # T = 4
        cfg = NetworkConfig((layer1(), layer2()), horizon=horizon, n_trajectories=6)
        per = [loss_single(y[:t + 1 + horizon], cfg, seed=7) for t in (2, 3, 4)]
        le, lv = loss_average(y, cfg, seed=7, stride=1)
        assert le == pytest.approx(np.mean([p.loss_mean for p in per]), rel=1e-12)
        assert lv == pytest.approx(np.mean([p.loss_var for p in per]), rel=1e-12)
        assert min(p.loss_mean for p in per) <= le <= max(p.loss_mean for p in per)

    def test_first_last_window(self, ou_series):
        cfg = NetworkConfig((layer1(),), horizon=10, n_trajectories=5)
        y = ou_series[:120]
        le, _ = loss_average(y, cfg, seed=1, stride=7, first=50, last=100)
        per = [loss_single(y[:t + 11], cfg, seed=1).loss_mean for t in range(50, 101, 7)]
        assert le == pytest.approx(np.mean(per), rel=1e-12)

    def test_too_short(self, ou_series):
        with pytest.raises(InvalidArgumentError):
            loss_average(ou_series[:6], NetworkConfig((layer1(),), horizon=5, n_trajectories=3), seed=0)

    def test_divergence_inf(self, ou_series):
        bad = layer1(rates=(0.01, 0.05, 50.0, 0.5, 0.5), z0=(0.0, 0.0, 2.0))
        out = loss_average(ou_series * 100, NetworkConfig((bad,), horizon=5, n_trajectories=4), seed=0, stride=10)
        assert out == (np.inf, np.inf)
