import numpy as np
import pytest

from vidstyle.features import (Extractor, LayerConfig, StageSpec, build_extractor,
                               default_config)

from gradcheck import activation_pattern, relative_errors, smooth_coords


def test_same_seed_same_filters():
    a, b = build_extractor(seed=5), build_extractor(seed=5)
    for ka, kb in zip(a.kernels, b.kernels):
        assert ka.tobytes() == kb.tobytes()
    assert not np.array_equal(a.kernels[0], build_extractor(seed=6).kernels[0])


def test_filters_unit_norm(extractor):
    for k in extractor.kernels:
        np.testing.assert_allclose(np.sqrt((k ** 2).sum(axis=(0, 1, 2))), 1.0)


def test_default_architecture_shapes(extractor, rng):
    F = extractor.forward(rng.random((64, 64, 3)), [1, 2, 3, 4])
    assert F[1].shape == (64, 64, 8)
    assert F[2].shape == (32, 32, 8)
    assert F[3].shape == (16, 16, 16)
    assert F[4].shape == (16, 16, 16)
    assert (F.channels(3), F.size(3)) == (16, 256)
    assert F.matrix(3).shape == (256, 16)


def test_zero_image_zero_features(extractor):
    F = extractor.forward(np.zeros((16, 16, 3)), [1, 2, 3, 4])
    assert all(not F[l].any() for l in F.layers())


def test_forward_deterministic(extractor, rng):
    x = rng.random((16, 16, 3))
    a = extractor.forward(x)
    b = extractor.forward(x)
    assert all(a[l].tobytes() == b[l].tobytes() for l in a.layers())


def test_positive_scaling(extractor, rng):
    x = rng.random((16, 16, 3))
    F1, F2 = extractor.forward(x, [1, 4]), extractor.forward(2 * x, [1, 4])
    for l in (1, 4):
        np.testing.assert_allclose(F2[l], 2 * F1[l], rtol=1e-12, atol=1e-14)


def test_identity_1x1_config(rng):
    cfg = LayerConfig(stages=(StageSpec(3, 3, kernel=1),), content_layers=(1,),
                      style_layers=(1,))
    ex = Extractor(cfg, [np.eye(3).reshape(1, 1, 3, 3)])
    x = rng.random((4, 6, 3))
    np.testing.assert_array_equal(ex.forward(x, [1])[1], x)


def test_bad_channel_chain():
    with pytest.raises(ValueError, match="channel chain"):
        LayerConfig(stages=(StageSpec(3, 8), StageSpec(4, 8)))


def test_indivisible_input_gives_padding_hint(extractor):
    with pytest.raises(ValueError, match="pad by 2 rows and 0 columns"):
        extractor.forward(np.zeros((14, 16, 3)))


def test_config_round_trip():
    cfg = default_config(3)
    assert LayerConfig.from_dict(cfg.to_dict()) == cfg


def test_zero_upstream_zero_gradient(extractor, rng):
    x = rng.random((16, 16, 3))
    g = extractor.backward(x, {2: np.zeros((8, 8, 8))})
    assert g.shape == x.shape and not g.any()


def test_impulse_gradient_is_local(extractor, rng):
    x = rng.random((16, 16, 3))
    F = extractor.forward(x, [1])
    ys, xs = np.nonzero(F[1][..., 0] > 0)
    y, x0 = ys[len(ys) // 2], xs[len(xs) // 2]
    up = np.zeros_like(F[1])
    up[y, x0, 0] = 1.0
    g = extractor.backward(x, {1: up})
    support = np.argwhere(np.abs(g).sum(axis=2) > 0)
    assert support[:, 0].min() >= y - 1 and support[:, 0].max() <= y + 1
    assert support[:, 1].min() >= x0 - 1 and support[:, 1].max() <= x0 + 1
    # transposed convolution of the impulse: kernel flipped onto the input
    np.testing.assert_allclose(g[y - 1:y + 2, x0 - 1:x0 + 2], extractor.kernels[0][:, :, :, 0])


def test_receptive_field_locality(extractor, rng):
    x = rng.random((32, 32, 3))
    y0, x0 = 13, 18
    xp = x.copy()
    xp[y0, x0] += 0.3
    a, b = extractor.forward(x, [1, 2]), extractor.forward(xp, [1, 2])
    changed1 = np.argwhere(np.abs(a[1] - b[1]).sum(axis=2) > 0)
    assert changed1[:, 0].min() >= y0 - 1 and changed1[:, 0].max() <= y0 + 1
    # layer 2 lives on the half-resolution grid after one pooling step
    lo, hi = (y0 - 1) // 2 - 1, (y0 + 1) // 2 + 1
    changed2 = np.argwhere(np.abs(a[2] - b[2]).sum(axis=2) > 0)
    assert changed2[:, 0].min() >= lo and changed2[:, 0].max() <= hi
    lo, hi = (x0 - 1) // 2 - 1, (x0 + 1) // 2 + 1
    assert changed2[:, 1].min() >= lo and changed2[:, 1].max() <= hi


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_backward_matches_finite_differences(extractor, seed):
    rng = np.random.default_rng(seed)
    x = rng.random((16, 16, 3))
    F = extractor.forward(x, [1, 2, 3, 4])
    up = {l: rng.standard_normal(F[l].shape) for l in F.layers()}

    def fn(z):
        G = extractor.forward(z, [1, 2, 3, 4])
        return sum(float(np.sum(up[l] * G[l])) for l in up)

    g = extractor.backward(x, up)
    coords, rejected = smooth_coords(rng, x, 100, activation_pattern(extractor))
    assert len(coords) == 100 and rejected < 50
    assert relative_errors(fn, x, g, coords).max() < 1e-4


def test_upstream_shape_mismatch(extractor, rng):
    with pytest.raises(ValueError, match="layer 1"):
        extractor.backward(rng.random((16, 16, 3)), {1: np.zeros((4, 4, 8))})
