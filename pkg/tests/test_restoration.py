import numpy as np
import pytest

from earpipe.errors import RestorationError
from earpipe.mocks import HarmonicInpainter
from earpipe.restoration import conform_mask, normalize_input, restore


class ConstantFill:
    """Backend fake painting the whole frame a flat color."""

    def __init__(self, value=99):
        self.value = value

    def inpaint(self, image, mask):
        return np.full_like(image, self.value)


class TestNormalize:
    def test_gray_2d_replicated(self, rng):
        g = rng.integers(0, 256, (6, 7), np.uint8)
        out = normalize_input(g)
        assert out.shape == (6, 7, 3)
        assert all(np.array_equal(out[:, :, i], g) for i in range(3))

    def test_gray_1ch_replicated(self, rng):
        g = rng.integers(0, 256, (6, 7, 1), np.uint8)
        out = normalize_input(g)
        assert out.shape == (6, 7, 3)
        assert np.array_equal(out[:, :, 2], g[:, :, 0])

    def test_alpha_dropped(self, rng):
        rgba = rng.integers(0, 256, (6, 7, 4), np.uint8)
        out = normalize_input(rgba)
        assert np.array_equal(out, rgba[:, :, :3])

    def test_rgb_copied_not_aliased(self, rng):
        img = rng.integers(0, 256, (6, 7, 3), np.uint8)
        out = normalize_input(img)
        assert np.array_equal(out, img) and out.base is not img


class TestConformMask:
    def test_identity_when_dims_match(self, rng):
        m = rng.random((8, 8)) > 0.5
        out = conform_mask(m, (8, 8))
        assert np.array_equal(out, m) and out is not m

    def test_downscale_picks_center_pixels(self):
        # 4x4 -> 2x2: each output pixel reads source index floor((i+0.5)*2)
        m = np.array([
            [1, 0, 0, 0],
            [0, 0, 0, 0],
            [0, 0, 1, 1],
            [0, 0, 1, 1],
        ]).astype(bool)
        out = conform_mask(m, (2, 2))
        assert out.tolist() == [[False, False], [False, True]]

    def test_upscale_replicates(self):
        m = np.array([[1, 0], [0, 1]]).astype(bool)
        out = conform_mask(m, (4, 4))
        assert out.tolist() == [
            [True, True, False, False],
            [True, True, False, False],
            [False, False, True, True],
            [False, False, True, True],
        ]

    def test_output_is_binary_bool(self, rng):
        m = rng.random((13, 9)) > 0.5
        assert conform_mask(m, (30, 17)).dtype == np.bool_

    def test_bad_dims(self):
        with pytest.raises(RestorationError):
            conform_mask(np.zeros((4, 4), bool), (0, 4))


class TestRestore:
    def test_empty_mask_returns_normalized_input_exactly(self, rng):
        img = rng.integers(0, 256, (10, 10, 3), np.uint8)
        out = restore(img, np.zeros((10, 10), bool), ConstantFill())
        assert np.array_equal(out, img)

    def test_background_bit_identical(self, rng):
        img = rng.integers(0, 256, (12, 12, 3), np.uint8)
        mask = np.zeros((12, 12), bool)
        mask[3:7, 4:9] = True
        out = restore(img, mask, ConstantFill(7))
        assert np.array_equal(out[~mask], img[~mask])
        assert (out[mask] == 7).all()

    def test_backend_cannot_touch_background(self, rng):
        # ConstantFill repaints everything; restore must discard background edits
        img = rng.integers(0, 256, (9, 9), np.uint8)  # grayscale input
        mask = np.zeros((9, 9), bool)
        mask[0, 0] = True
        out = restore(img, mask, ConstantFill(0))
        norm = normalize_input(img)
        assert np.array_equal(out[1:], norm[1:])

    def test_mask_conformed_to_image_dims(self, rng):
        img = rng.integers(0, 256, (8, 8, 3), np.uint8)
        mask = np.zeros((4, 4), bool)
        mask[1, 1] = True
        out = restore(img, mask, ConstantFill(5))
        big = conform_mask(mask, (8, 8))
        assert (out[big] == 5).all()
        assert np.array_equal(out[~big], img[~big])

    def test_bad_backend_output_shape(self, rng):
        class Wrong:
            def inpaint(self, image, mask):
                return np.zeros((2, 2, 3), np.uint8)
        img = rng.integers(0, 256, (8, 8, 3), np.uint8)
        mask = np.ones((8, 8), bool)
        with pytest.raises(RestorationError, match="shape"):
            restore(img, mask, Wrong())

    def test_backend_exception_wrapped(self, rng):
        class Bad:
            def inpaint(self, image, mask):
                raise RuntimeError("cuda")
        img = rng.integers(0, 256, (8, 8, 3), np.uint8)
        with pytest.raises(RestorationError, match="backend failed"):
            restore(img, np.ones((8, 8), bool), Bad())

    def test_harmonic_backend_end_to_end(self, rng):
        img = np.full((16, 16, 3), 100, np.uint8)
        img[6:10, 6:10] = 255
        mask = np.zeros((16, 16), bool)
        mask[6:10, 6:10] = True
        out = restore(img, mask, HarmonicInpainter())
        assert np.array_equal(out[~mask], img[~mask])
        # harmonic fill interpolates the surround, which is flat 100
        assert np.abs(out[mask].astype(int) - 100).max() <= 1
