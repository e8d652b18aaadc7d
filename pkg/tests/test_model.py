import numpy as np
import pytest

from altfl import model as mc


def _small_conv():
    return mc.ModelArch((1, 6, 6), (mc.Conv2d(1, 2, 3, padding=1), mc.MaxPool2d(2),
                                     mc.Dense(18, 5), mc.Dense(5, 3, "none")), 3)


def _fd_check(arch, params, batch, h=1e-4):
    _, g = mc.loss_and_gradient(arch, params, batch)
    rng = np.random.default_rng(0)
    idx = rng.choice(len(params), size=min(60, len(params)), replace=False)
    for i in idx:
        e = np.zeros_like(params)
        e[i] = h
        fd = (mc.loss(arch, params + e, batch) - mc.loss(arch, params - e, batch)) / (2 * h)
        assert abs(fd - g[i]) <= 1e-6 + 1e-3 * abs(fd), (i, fd, g[i])


def test_init_is_deterministic(desk):
    a = mc.init_model(desk, 7)
    b = mc.init_model(desk, 7)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, mc.init_model(desk, 8))


def test_single_dense_layer_parameter_count():
    arch = mc.ModelArch((1, 1, 4), (mc.Dense(4, 2, "none"),), 2)
    assert arch.num_params == 10
    assert len(mc.init_model(arch, 0)) == 10


def test_lenet_variant_count():
    # padded first convolution on 3x32x32 inputs
    assert mc.lenet5().num_params == 83126


def test_desk_model_shape(desk):
    assert desk.input_shape == (1, 8, 8)
    assert desk.num_params == 64 * 32 + 32 + 32 * 10 + 10


@pytest.mark.parametrize("make", [mc.desk_mlp, _small_conv])
def test_finite_differences(make):
    arch = make()
    rng = np.random.default_rng(3)
    params = mc.init_model(arch, 1)
    x = rng.uniform(size=(4,) + arch.input_shape)
    batch = mc.Batch(x, rng.integers(0, arch.num_classes, 4))
    _fd_check(arch, params, batch)


@pytest.mark.parametrize("make", [mc.desk_mlp, _small_conv])
def test_per_sample_mean_matches_batch_gradient(make):
    arch = make()
    rng = np.random.default_rng(5)
    params = mc.init_model(arch, 2)
    batch = mc.Batch(rng.uniform(size=(6,) + arch.input_shape), rng.integers(0, arch.num_classes, 6))
    l1, per = mc.loss_and_per_sample_gradients(arch, params, batch)
    l2, g = mc.loss_and_gradient(arch, params, batch)
    assert per.shape == (6, arch.num_params)
    assert abs(l1 - l2) < 1e-12
    assert np.max(np.abs(per.mean(axis=0) - g)) < 1e-10


def test_single_sample_and_duplicates(desk, digits):
    params = mc.init_model(desk, 0)
    x = digits.samples[:1]
    _, per = mc.loss_and_per_sample_gradients(desk, params, mc.Batch(x, digits.labels[:1]))
    _, g = mc.loss_and_gradient(desk, params, mc.Batch(x, digits.labels[:1]))
    assert np.allclose(per[0], g, rtol=0, atol=1e-15)
    xx = np.concatenate([x, x])
    _, per2 = mc.loss_and_per_sample_gradients(desk, params, mc.Batch(xx, np.repeat(digits.labels[:1], 2)))
    assert np.array_equal(per2[0], per2[1])


def test_gradients_deterministic(desk, digits):
    params = mc.init_model(desk, 0)
    b = mc.Batch(digits.samples[:8], digits.labels[:8])
    r1 = mc.loss_and_per_sample_gradients(desk, params, b)
    r2 = mc.loss_and_per_sample_gradients(desk, params, b)
    assert r1[0] == r2[0] and np.array_equal(r1[1], r2[1])


def test_apply_step():
    p = np.array([1.0, 2.0])
    assert np.allclose(mc.apply_step(p, np.array([1.0, -2.0]), 0.1), [0.9, 2.2])
    assert np.array_equal(mc.apply_step(p, np.array([3.0, 4.0]), 0.0), p)
    u = np.array([0.5, -0.25])
    assert np.array_equal(mc.apply_step(mc.apply_step(p, u, 0.5), u, -0.5), p)
    with pytest.raises(ValueError):
        mc.apply_step(p, np.zeros(3), 0.1)


def test_non_finite_activation_names_layer(desk):
    params = mc.init_model(desk, 0)
    params[:64 * 32] = 1e308
    x = np.full((1, 1, 8, 8), 10.0)
    with pytest.raises(mc.NonFiniteError) as err:
        mc.loss_and_gradient(desk, params, mc.Batch(x, np.array([0])))
    assert "layer" in str(err.value)


def test_arch_validation_and_roundtrip():
    with pytest.raises(mc.ArchError):
        mc.ModelArch((1, 8, 8), (mc.Dense(10, 5),), 5)
    with pytest.raises(mc.ArchError):
        mc.ModelArch((1, 8, 8), (mc.Dense(64, 5),), 3)
    arch = _small_conv()
    assert mc.ModelArch.from_dict(arch.to_dict()) == arch


def test_accuracy_range(desk, digits):
    params = mc.init_model(desk, 0)
    acc = mc.accuracy(desk, params, digits.samples, digits.labels)
    assert 0.0 <= acc <= 1.0
