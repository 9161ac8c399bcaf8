import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corrgan import corruptions
from corrgan.corruptions import CorruptionSpec, apply_corruption, plasma_fractal
from corrgan.errors import InvalidSpec, ShapeError, UnsupportedCorruption


def test_black_batch_brightness_5_is_mid_grey():
    black = np.zeros((3, 32, 32, 3), dtype=np.float32)
    out = apply_corruption(black, CorruptionSpec("brightness", 5, seed=0))
    np.testing.assert_array_equal(out, np.full_like(black, 0.5))


def test_zero_brightness_shift_is_identity(rng):
    x = rng.random((4, 32, 32, 3))
    out = apply_corruption(x, CorruptionSpec("brightness", 3, seed=0, param=0.0))
    np.testing.assert_allclose(out, x, rtol=0, atol=1e-15)


def test_white_batch_fog_1_blend_values():
    # (1 + 1.5 F) * 1 / 2.5: F = 0 -> 0.4, F = 1 -> 1.0
    white = np.ones((2, 32, 32, 3))
    out = apply_corruption(white, CorruptionSpec("fog", 1, seed=11))
    for img in out:
        assert img.min() == pytest.approx(1 / 2.5, abs=1e-15)
        assert img.max() == pytest.approx(1.0, abs=1e-15)


def test_fog_formula_against_scalar_evaluation(rng):
    x = rng.random((1, 32, 32, 3))
    spec = CorruptionSpec("fog", 4, seed=3)
    t, decay = corruptions.get_kind("fog").param(4)
    stream = np.random.default_rng(np.random.SeedSequence([3, 0]))
    fog = plasma_fractal(32, decay, stream)
    m = x[0].max()
    out = apply_corruption(x, spec)
    for (i, j, c) in [(0, 0, 0), (5, 17, 2), (31, 31, 1)]:
        expect = min(max((x[0, i, j, c] + t * fog[i, j]) * m / (m + t), 0.0), 1.0)
        assert out[0, i, j, c] == pytest.approx(expect, abs=1e-15)


@pytest.mark.parametrize("kind", ["fog", "brightness"])
def test_same_spec_same_bits(kind, rng):
    x = rng.random((5, 32, 32, 3)).astype(np.float32)
    spec = CorruptionSpec(kind, 3, seed=99)
    a = apply_corruption(x, spec)
    b = apply_corruption(x, CorruptionSpec(kind, 3, seed=99))
    assert a.tobytes() == b.tobytes()
    assert a.dtype == np.float32


def test_fog_seed_and_batch_index_change_stream(rng):
    x = rng.random((2, 32, 32, 3))
    a = apply_corruption(x, CorruptionSpec("fog", 2, seed=1))
    assert not np.array_equal(a, apply_corruption(x, CorruptionSpec("fog", 2, seed=2)))
    assert not np.array_equal(a, apply_corruption(x, CorruptionSpec("fog", 2, seed=1), batch_index=1))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**64 - 1), severity=st.sampled_from([1, 2, 3, 4, 5]),
       kind=st.sampled_from(["fog", "brightness"]), scale=st.floats(0.0, 1.0))
def test_outputs_stay_in_unit_range(seed, severity, kind, scale):
    x = np.random.default_rng(seed % 2**32).random((3, 32, 32, 3)) * scale
    out = apply_corruption(x, CorruptionSpec(kind, severity, seed=seed))
    assert out.shape == x.shape
    assert out.min() >= 0.0 and out.max() <= 1.0


@pytest.mark.parametrize("bad", [0, 6, -1, 2.5, True, "3"])
def test_severity_out_of_range_rejected(bad):
    with pytest.raises(InvalidSpec):
        CorruptionSpec("fog", bad)


def test_seed_must_be_u64():
    with pytest.raises(InvalidSpec):
        CorruptionSpec("fog", 1, seed=-1)
    with pytest.raises(InvalidSpec):
        CorruptionSpec("fog", 1, seed=2**64)


def test_unknown_kind_rejected(rng):
    with pytest.raises(UnsupportedCorruption):
        apply_corruption(rng.random((1, 32, 32, 3)), CorruptionSpec("snow", 1))


def test_bad_shape_rejected():
    with pytest.raises(ShapeError):
        apply_corruption(np.zeros((1, 28, 28, 3)), CorruptionSpec("fog", 1))
    with pytest.raises(ShapeError):
        apply_corruption(np.zeros((0, 32, 32, 3)), CorruptionSpec("fog", 1))


def test_registry_is_extensible(rng):
    corruptions.register("invert", lambda x, p, r: p - x, [1.0] * 5)
    try:
        x = rng.random((2, 32, 32, 3))
        np.testing.assert_allclose(apply_corruption(x, CorruptionSpec("invert", 1)), 1.0 - x)
        assert "invert" in corruptions.registered_kinds()
    finally:
        corruptions._REGISTRY.pop("invert")


def test_register_requires_five_levels():
    with pytest.raises(InvalidSpec):
        corruptions.register("bad", lambda x, p, r: x, [1, 2])


def test_set_params_overrides_severity_table(rng):
    old = corruptions.get_kind("brightness").params
    try:
        corruptions.set_params("brightness", [0.0] * 5)
        x = rng.random((1, 32, 32, 3))
        np.testing.assert_allclose(apply_corruption(x, CorruptionSpec("brightness", 5)), x, atol=1e-15)
    finally:
        corruptions.set_params("brightness", old)


class TestPlasma:
    def test_deterministic(self):
        assert plasma_fractal(64, 2.0, 5).tobytes() == plasma_fractal(64, 2.0, 5).tobytes()

    @pytest.mark.parametrize("size", [32, 64, 128, 256])
    def test_normalised(self, size):
        h = plasma_fractal(size, 1.7, 0)
        assert h.shape == (size, size)
        assert h.max() == 1.0
        assert h.min() == 0.0

    @pytest.mark.parametrize("size", [0, 31, 48, 16, 512])
    def test_bad_size(self, size):
        with pytest.raises(InvalidSpec):
            plasma_fractal(size, 2.0, 0)

    def test_bad_decay(self):
        with pytest.raises(InvalidSpec):
            plasma_fractal(32, 0.0, 0)

    def test_lower_decay_is_rougher(self):
        def roughness(d):
            return np.mean([np.abs(np.diff(plasma_fractal(64, d, s), axis=1)).mean() for s in range(20)])

        assert roughness(1.4) > roughness(3.0)
