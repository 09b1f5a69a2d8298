import numpy as np
import pytest

from lagan.model import (
    LaganConfig,
    discriminate,
    discriminator_forward,
    generate,
    generator_forward,
    init_params,
    sample_latent,
)
from lagan.nn.ops import DegenerateBatchError, DimensionError
from lagan.nn.tensor import Tensor
from lagan.train import load_params, save_params

from oracles import jitter_biases, lagan_loss_gradcheck


@pytest.fixture(scope="module")
def full_params():
    return init_params(LaganConfig(), np.random.default_rng(0))


class TestArchitecture:
    def test_generator_shapes(self):
        shapes = dict(LaganConfig().generator_shapes())
        assert shapes["g.proj"] == (9, 9, 64)
        assert shapes["g.lc2"] == (14, 14, 6)
        assert shapes["g.lc3"] == (26, 26, 6)
        assert shapes["g.out"] == (25, 25, 1)

    def test_discriminator_shapes(self):
        shapes = dict(LaganConfig().discriminator_shapes())
        assert shapes["d.conv1"] == (25, 25, 32)
        assert shapes["d.lc2"] == (21, 21, 8)
        assert shapes["d.lc3"] == (17, 17, 8)
        assert shapes["d.lc4"] == (15, 15, 8)

    def test_traced_shapes_match_static(self, full_params):
        trace = {}
        rng = np.random.default_rng(1)
        img = generator_forward(full_params, Tensor(sample_latent(rng, 3, 200)), [0, 1, 1], trace=trace)
        assert img.shape == (3, 25, 25, 1)
        for name, shape in LaganConfig().generator_shapes():
            assert trace[name] == shape
        dtrace = {}
        discriminator_forward(full_params, img, trace=dtrace)
        for name, shape in LaganConfig().discriminator_shapes():
            assert dtrace[name] == shape
        assert dtrace["d.features"] == (15 * 15 * 8 + 20,)

    def test_dcgan_variant_has_shared_weights(self):
        p = init_params(LaganConfig(local=False), np.random.default_rng(0))
        assert p["g.lc2.w"].shape == (5, 5, 64, 6)
        assert p["d.lc4.w"].shape == (3, 3, 8, 8)
        assert dict(LaganConfig(local=False).generator_shapes())["g.out"] == (25, 25, 1)

    def test_mismatched_config_rejected(self):
        with pytest.raises(DimensionError):
            LaganConfig(proj_size=8).generator_shapes()


class TestInference:
    def test_generate_non_negative_and_deterministic(self, full_params):
        rng = np.random.default_rng(3)
        z = sample_latent(rng, 4, 200)
        a = generate(full_params, z, [1, 0, 1, 0])
        b = generate(full_params, z, [1, 0, 1, 0])
        assert a.shape == (4, 25, 25, 1)
        assert np.all(a >= 0)
        assert np.array_equal(a, b)

    def test_generation_does_not_touch_running_stats(self, full_params):
        before = full_params.bn["g.bn1"].mean.copy()
        generate(full_params, np.zeros((2, 200)), [0, 1])
        assert np.array_equal(before, full_params.bn["g.bn1"].mean)

    def test_class_conditioning_changes_output(self, full_params):
        z = np.random.default_rng(4).standard_normal((1, 200))
        assert not np.array_equal(generate(full_params, z, [0]), generate(full_params, z, [1]))

    def test_rejects_non_finite_latent(self, full_params):
        z = np.zeros((1, 200))
        z[0, 3] = np.nan
        with pytest.raises(ValueError):
            generate(full_params, z, [0])

    def test_discriminate_probabilities(self, full_params):
        imgs = np.random.default_rng(5).exponential(1.0, size=(3, 25, 25))
        p_real, p_sig = discriminate(full_params, imgs)
        assert p_real.shape == p_sig.shape == (3,)
        assert np.all((p_real >= 0) & (p_real <= 1)) and np.all((p_sig >= 0) & (p_sig <= 1))

    def test_single_image_inference(self, full_params):
        p_real, _ = discriminate(full_params, np.ones((1, 25, 25)))
        assert p_real.shape == (1,)

    def test_train_mode_needs_batch_of_two(self, full_params):
        with pytest.raises(DegenerateBatchError):
            discriminator_forward(full_params, Tensor(np.ones((1, 25, 25, 1))), training=True)

    def test_wrong_image_size(self, full_params):
        with pytest.raises(DimensionError):
            discriminator_forward(full_params, Tensor(np.ones((2, 24, 24, 1))))


class TestParams:
    def test_checkpoint_roundtrip(self, tmp_path):
        cfg = LaganConfig.tiny()
        p = init_params(cfg, np.random.default_rng(0))
        p.bn["g.bn1"].mean += 0.5
        save_params(tmp_path / "p.lgn", p)
        q = load_params(tmp_path / "p.lgn")
        assert q.config == cfg
        for name, arr in p.to_arrays().items():
            assert np.array_equal(arr, q.to_arrays()[name])

    def test_copy_is_independent(self):
        p = init_params(LaganConfig.tiny(), np.random.default_rng(0))
        q = p.copy()
        q["g.proj.w"].values += 1.0
        assert not np.array_equal(p["g.proj.w"].values, q["g.proj.w"].values)

    def test_load_rejects_other_architecture(self):
        p = init_params(LaganConfig.tiny(), np.random.default_rng(0))
        arrays = p.to_arrays()
        arrays.pop("g.proj.b")
        with pytest.raises(KeyError):
            p.load_arrays(arrays)

    def test_same_seed_same_init(self):
        a = init_params(LaganConfig.tiny(), np.random.default_rng(9)).to_arrays()
        b = init_params(LaganConfig.tiny(), np.random.default_rng(9)).to_arrays()
        assert all(np.array_equal(a[k], b[k]) for k in a)


def test_tiny_lagan_end_to_end_gradient():
    rng = np.random.default_rng(0)
    params = init_params(LaganConfig.tiny(), rng)
    jitter_biases(params, rng)
    z = sample_latent(rng, 4, params.config.latent_dim)
    worst = lagan_loss_gradcheck(params, z, np.array([0, 1, 1, 0]), np.array([1.0, 0.0, 1.0, 1.0]))
    assert max(worst.values()) < 1e-3, worst
