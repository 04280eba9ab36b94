import filecmp

import numpy as np
import pytest

from earpipe.mocks import (
    ACCESSORY_FLOOR, NON_ACCESSORY_CEILING, BrightSpotDetector, FixedBoxDetector,
    HalfBrightnessSideClassifier, HarmonicInpainter, InscribedEllipseSegmenter,
    NullDetector, ProjectionEmbedder, SidecarReplayDetector, synth_dataset,
)
from earpipe.types import (
    BoundingBox, Detection, load_image, load_manifest, load_mask,
)


class TestDetectors:
    def test_null_detector(self):
        assert NullDetector().detect(np.zeros((8, 8), np.uint8), None) == []

    def test_fixed_box_replays(self):
        d = Detection(BoundingBox(1, 1, 4, 4), 0.9, "supervised", "x")
        det = FixedBoxDetector([d])
        assert det.detect(np.zeros((8, 8), np.uint8), None) == [d]

    def test_bright_spot_boxes_bright_region(self):
        img = np.full((40, 40), 100, np.uint8)
        img[10:15, 20:26] = 250
        out = BrightSpotDetector().detect(img, None)
        assert len(out) == 1
        assert out[0].box.as_list() == [17, 7, 29, 18]  # margin 3 around block
        assert out[0].source == "supervised" and out[0].text_alignment is None

    def test_bright_spot_ignores_sub_threshold_and_tiny(self):
        img = np.full((40, 40), NON_ACCESSORY_CEILING, np.uint8)  # bright but below floor
        img[5, 5] = 255  # single pixel: below min_area
        assert BrightSpotDetector().detect(img, None) == []

    def test_bright_spot_multiple_components_sorted(self):
        img = np.zeros((50, 50), np.uint8)
        img[30:36, 5:11] = 245
        img[4:10, 40:46] = 245
        out = BrightSpotDetector().detect(img, None)
        assert len(out) == 2
        assert out[0].box.y_min < out[1].box.y_min

    def test_bright_spot_zero_shot_variant(self):
        img = np.zeros((30, 30), np.uint8)
        img[10:16, 10:16] = 245
        out = BrightSpotDetector(source="zero_shot").detect(img, "earring.")
        assert out[0].source == "zero_shot" and out[0].text_alignment == 0.9

    def test_sidecar_replay_keys_on_content(self):
        det = SidecarReplayDetector()
        a = np.zeros((8, 8), np.uint8)
        b = np.ones((8, 8), np.uint8)
        d = Detection(BoundingBox(0, 0, 2, 2), 0.9, "supervised", "x")
        det.record(a, [d])
        assert det.detect(a, None) == [d]
        assert det.detect(b, None) == []


class TestSegmenter:
    def test_inscribed_ellipse_fills_box_center(self):
        seg = InscribedEllipseSegmenter()
        img = np.zeros((40, 40, 3), np.uint8)
        out = seg.segment(img, BoundingBox(10, 10, 30, 30), multi_mask=True)
        assert len(out) == 2
        soft, quality = out[0]
        assert quality == 0.9 and soft.shape == (40, 40)
        assert soft[19, 19] == 1.0 and soft[10, 10] == 0.0  # corner outside ellipse
        alt, alt_quality = out[1]
        assert alt_quality == 0.3 and alt.sum() < soft.sum()

    def test_single_mask_mode(self):
        seg = InscribedEllipseSegmenter()
        out = seg.segment(np.zeros((20, 20, 3), np.uint8),
                          BoundingBox(0, 0, 10, 10), multi_mask=False)
        assert len(out) == 1


class TestInpainter:
    def test_flat_surround_fills_flat(self):
        img = np.full((20, 20, 3), 80, np.uint8)
        img[8:12, 8:12] = 255
        mask = np.zeros((20, 20), bool)
        mask[8:12, 8:12] = True
        out = HarmonicInpainter().inpaint(img, mask)
        assert np.abs(out[mask].astype(int) - 80).max() <= 1

    def test_gradient_surround_interpolates(self):
        img = np.tile(np.linspace(50, 150, 32).astype(np.uint8)[None, :, None],
                      (32, 1, 3)).copy()
        mask = np.zeros((32, 32), bool)
        mask[12:20, 12:20] = True
        out = HarmonicInpainter().inpaint(img, mask)
        fill = out[mask].astype(float)
        assert 70 <= fill.mean() <= 130  # between surrounding gradient values

    def test_fill_bounded_by_surround(self, rng):
        # maximum principle: harmonic fill cannot exceed the boundary values,
        # which is what keeps repainted accessories below the brightness floor
        img = rng.integers(0, NON_ACCESSORY_CEILING + 1, (24, 24, 3)).astype(np.uint8)
        mask = np.zeros((24, 24), bool)
        mask[6:18, 6:18] = True
        img[mask] = 255
        out = HarmonicInpainter().inpaint(img, mask)
        assert out[mask].max() <= NON_ACCESSORY_CEILING + 1 < ACCESSORY_FLOOR

    def test_full_mask_neutral_fill(self):
        img = np.full((8, 8, 3), 200, np.uint8)
        out = HarmonicInpainter().inpaint(img, np.ones((8, 8), bool))
        assert (out == 127).all()

    def test_deterministic(self, rng):
        img = rng.integers(0, 256, (16, 16, 3), np.uint8)
        mask = rng.random((16, 16)) > 0.7
        a = HarmonicInpainter().inpaint(img, mask)
        b = HarmonicInpainter().inpaint(img, mask)
        assert np.array_equal(a, b)


class TestEmbedder:
    def test_contract(self, rng):
        img = rng.integers(0, 256, (112, 112, 3), np.uint8)
        v = ProjectionEmbedder(seed=0).embed(img)
        assert v.shape == (512,) and v.dtype == np.float32
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-5)

    def test_same_seed_same_vector(self, rng):
        img = rng.integers(0, 256, (112, 112, 3), np.uint8)
        assert np.array_equal(ProjectionEmbedder(seed=3).embed(img),
                              ProjectionEmbedder(seed=3).embed(img))

    def test_different_seed_different_vector(self, rng):
        img = rng.integers(0, 256, (112, 112, 3), np.uint8)
        a = ProjectionEmbedder(seed=1).embed(img)
        b = ProjectionEmbedder(seed=2).embed(img)
        assert abs(float(a @ b)) < 0.5

    def test_constant_image_fallback(self):
        img = np.full((112, 112, 3), 9, np.uint8)
        v = ProjectionEmbedder(seed=0).embed(img)
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-5)

    def test_rejects_wrong_dims(self):
        with pytest.raises(ValueError, match="expected"):
            ProjectionEmbedder(seed=0).embed(np.zeros((64, 64, 3), np.uint8))


class TestSideClassifier:
    def test_brighter_half_wins(self):
        img = np.zeros((10, 10), np.uint8)
        img[:, :5] = 200
        assert HalfBrightnessSideClassifier().classify(img) == "left"
        assert HalfBrightnessSideClassifier().classify(img[:, ::-1].copy()) == "right"


class TestSynthDataset:
    def test_structure_and_manifest(self, synth_root):
        manifest = load_manifest(synth_root / "manifest.json")
        assert manifest.name == "synth" and len(manifest.records) == 20
        assert len(manifest.identities()) == 4
        for rec in manifest.records[:5]:
            p = rec.resolve(synth_root)
            assert p.is_file()
            stem = str(p)[:-4]
            for suffix in (".earmask.png", ".accmask.png", ".det.json"):
                assert (p.parent / (p.name[:-4] + suffix)).is_file(), suffix

    def test_occlusion_count_matches_rate(self, synth_root):
        occluded = 0
        for sub in sorted(synth_root.iterdir()):
            if not sub.is_dir():
                continue
            for mask_path in sorted(sub.glob("*.accmask.png")):
                occluded += load_mask(mask_path).any()
        assert occluded == 10  # round(0.5 * 20)

    def test_intensity_bands_disjoint(self, synth_root):
        for sub in sorted(synth_root.iterdir()):
            if not sub.is_dir():
                continue
            for img_path in sorted(sub.glob("i*.png")):
                if ".earmask" in img_path.name or ".accmask" in img_path.name:
                    continue
                img = load_image(img_path)
                acc = load_mask(img_path.parent / (img_path.name[:-4] + ".accmask.png"))
                assert (img[~acc] <= NON_ACCESSORY_CEILING).all()
                if acc.any():
                    assert (img[acc] >= ACCESSORY_FLOOR).all()

    def test_ear_mask_is_elongated(self, synth_root):
        mask = load_mask(synth_root / "s00" / "i00.earmask.png")
        ys, xs = np.nonzero(mask)
        spread = max(ys.max() - ys.min(), xs.max() - xs.min())
        assert mask.any() and spread >= 60

    def test_byte_identical_regeneration(self, tmp_path, synth_root):
        other = tmp_path / "again"
        synth_dataset(4, 5, 0.5, 7, other)
        cmp = filecmp.dircmp(synth_root, other)
        assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
        sub = filecmp.dircmp(synth_root / "s00", other / "s00")
        assert not sub.diff_files

    def test_seed_changes_content(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        synth_dataset(2, 2, 0.5, 1, a)
        synth_dataset(2, 2, 0.5, 2, b)
        assert not np.array_equal(load_image(a / "s00" / "i00.png"),
                                  load_image(b / "s00" / "i00.png"))

    def test_invalid_args(self, tmp_path):
        with pytest.raises(ValueError):
            synth_dataset(0, 5, 0.5, 1, tmp_path / "x")
        with pytest.raises(ValueError):
            synth_dataset(2, 2, 1.5, 1, tmp_path / "y")

    def test_detection_dump_box_covers_accessory(self, synth_root):
        from earpipe.detection import load_detection_dump
        found = 0
        for sub in sorted(synth_root.iterdir()):
            if not sub.is_dir():
                continue
            for dump in sorted(sub.glob("*.det.json")):
                _, dets = load_detection_dump(dump)
                acc = load_mask(sub / dump.name.replace(".det.json", ".accmask.png"))
                if not dets:
                    assert not acc.any()
                    continue
                found += 1
                ys, xs = np.nonzero(acc)
                box = dets[0].box
                assert box.x_min <= xs.min() and box.x_max >= xs.max() + 1
                assert box.y_min <= ys.min() and box.y_max >= ys.max() + 1
        assert found == 10
