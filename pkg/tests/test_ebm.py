import numpy as np
import pytest

from icilab import autodiff as ad
from icilab import ebm
from icilab.errors import LangevinDivergence
from icilab.seeding import rng_for

from oracles import check_gradients


def quadratic_energy(x: ad.Tensor) -> ad.Tensor:
    """E(x) = 0.5 * |x|^2 per row, the standard analytic test energy."""
    half = ad.tensor(np.full((x.data.shape[1], 1), 1.0))
    return ad.matmul(ad.mul(ad.mul(x, x), ad.tensor(0.5)), half)


def gaussian_mixture(n, rng):
    comp = rng.integers(2, size=n)
    centers = np.array([[-1.5, -1.5], [1.5, 1.5]])
    return centers[comp] + 0.4 * rng.standard_normal((n, 2))


class TestLangevin:
    def test_noiseless_single_step_is_gradient_descent(self):
        x0 = np.array([[2.0, -3.0]])
        out = ebm.langevin_chain(quadratic_energy, x0, steps=1, step_size=0.1,
                                 noise=0.0, rng=np.random.default_rng(0))
        np.testing.assert_allclose(out, 0.9 * x0, atol=1e-12)

    def test_noiseless_chain_contracts_to_origin(self):
        x0 = np.array([[4.0, -4.0]])
        out = ebm.langevin_chain(quadratic_energy, x0, steps=200, step_size=0.1,
                                 noise=0.0, rng=np.random.default_rng(0))
        assert np.all(np.abs(out) < 1e-8)

    def test_stationary_variance_matches_ar1(self):
        # update x <- (1-a)x + w is AR(1); stationary var = s^2 / (2a - a^2)
        alpha, sigma = 0.1, 0.1
        path = ebm.langevin_chain(quadratic_energy, np.array([[0.0]]), steps=100_000,
                                  step_size=alpha, noise=sigma,
                                  rng=np.random.default_rng(1), return_path=True)
        samples = path[1000:, 0, 0]
        expected = sigma**2 / (2 * alpha - alpha**2)
        assert abs(np.var(samples) - expected) / expected < 0.10

    def test_divergent_step_size_raises(self):
        with np.errstate(over="ignore"), pytest.raises(LangevinDivergence):
            ebm.langevin_chain(quadratic_energy, np.full((1, 2), 1e160), steps=50,
                               step_size=2e9, noise=0.0, rng=np.random.default_rng(2))

    def test_deterministic_given_rng_state(self):
        x0 = np.ones((3, 2))
        a = ebm.langevin_chain(quadratic_energy, x0, 10, 0.05, 0.02, np.random.default_rng(3))
        b = ebm.langevin_chain(quadratic_energy, x0, 10, 0.05, 0.02, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_invalid_parameters_rejected(self):
        with pytest.raises(ValueError):
            ebm.langevin_chain(quadratic_energy, np.ones((1, 2)), 0, 0.1, 0.1,
                               np.random.default_rng(0))


class TestEnergyModel:
    def test_zero_weights_give_zero_energy(self):
        model = ebm.EnergyModel(3, np.random.default_rng(0))
        model.store.load_values({k: np.zeros_like(v) for k, v in model.store.values().items()})
        vals = ebm.energy_values(model, np.random.default_rng(1).normal(size=(5, 3)))
        np.testing.assert_array_equal(vals, np.zeros(5))

    def test_energy_deterministic(self):
        model = ebm.EnergyModel(3, np.random.default_rng(2))
        x = np.random.default_rng(3).normal(size=(4, 3))
        np.testing.assert_array_equal(ebm.energy_values(model, x), ebm.energy_values(model, x))

    def test_input_gradient_matches_fd(self):
        model = ebm.EnergyModel(3, np.random.default_rng(4))
        model.mean = np.array([0.5, -0.2, 0.1])
        model.std = np.array([2.0, 1.0, 0.5])
        x = np.random.default_rng(5).normal(size=(4, 3))

        def build(leaves):
            return ad.reduce_sum(ebm.energy(model, leaves[0]))

        assert check_gradients(build, [x]) < 1e-4

    def test_dim_mismatch_rejected(self):
        model = ebm.EnergyModel(3, np.random.default_rng(6))
        with pytest.raises(ValueError):
            ebm.energy(model, ad.tensor(np.zeros((2, 5))))


class TestTraining:
    def test_requires_enough_observations(self):
        with pytest.raises(ValueError):
            ebm.train_ebm(np.zeros((10, 2)), ebm.EbmConfig(batch_size=64, iterations=1))
        with pytest.raises(ValueError):
            ebm.train_ebm(np.zeros((0, 2)))

    def test_regularizer_zero_when_energies_zero(self):
        # L_RG = mean(E+^2 + E-^2) is identically zero for a zero-output net
        model = ebm.EnergyModel(2, np.random.default_rng(0))
        model.store.load_values({k: np.zeros_like(v) for k, v in model.store.values().items()})
        x = ad.tensor(np.random.default_rng(1).normal(size=(8, 2)))
        e = model.energy_normalized(x)
        rg = ad.reduce_mean(ad.mul(e, e))
        assert float(rg.data) == 0.0

    def test_buffer_occupancy_bookkeeping(self):
        buf = ebm.ReplayBuffer(capacity=10, dim=2)
        rng = np.random.default_rng(0)
        for k in range(1, 5):
            buf.append(rng.normal(size=(3, 2)))
            assert len(buf) == min(10, 3 * k)

    def test_training_shapes_energy_landscape(self):
        rng = rng_for(0, "ebm-data")
        data = gaussian_mixture(600, rng)
        config = ebm.EbmConfig(steps=30, iterations=120, buffer_capacity=2000)
        model, diag = ebm.train_ebm(data, config, seed=0)
        assert model.frozen
        held_out = gaussian_mixture(400, rng)
        uniform = rng.uniform(-3.0, 3.0, size=(400, 2))
        gap = ebm.energy_values(model, held_out).mean() - ebm.energy_values(model, uniform).mean()
        assert gap < 0.0
        assert len(diag.loss_cd) == 120

    def test_training_deterministic(self):
        data = gaussian_mixture(200, rng_for(1, "d"))
        config = ebm.EbmConfig(steps=5, iterations=10, batch_size=32)
        m1, _ = ebm.train_ebm(data, config, seed=3)
        m2, _ = ebm.train_ebm(data, config, seed=3)
        for k, v in m1.store.values().items():
            np.testing.assert_array_equal(v, m2.store.values()[k])

    def test_checkpoint_roundtrip(self, tmp_path):
        data = gaussian_mixture(200, rng_for(2, "d"))
        config = ebm.EbmConfig(steps=3, iterations=5, batch_size=32)
        model, _ = ebm.train_ebm(data, config, seed=4)
        path = tmp_path / "ebm.params"
        ebm.save_ebm(path, model, config)
        loaded = ebm.load_ebm(path)
        assert loaded.frozen
        np.testing.assert_array_equal(loaded.mean, model.mean)
        np.testing.assert_array_equal(loaded.std, model.std)
        x = np.random.default_rng(5).normal(size=(6, 2))
        np.testing.assert_array_equal(ebm.energy_values(loaded, x), ebm.energy_values(model, x))
