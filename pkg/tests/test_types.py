import numpy as np
import pytest

from earpipe.errors import IngestionError
from earpipe.types import (
    BoundingBox, DatasetManifest, Detection, Embedding, ImageRecord,
    ensure_image, ensure_mask, image_dims, load_image, load_manifest,
    load_mask, save_image, save_manifest, save_mask, validate_manifest,
)


def rec(path, subject="s0", side="unknown", stage="raw"):
    return ImageRecord(subject_id=subject, side=side, stage=stage, path=path)


class TestImageValidation:
    def test_accepts_gray_and_color(self):
        ensure_image(np.zeros((4, 5), np.uint8))
        for c in (1, 3, 4):
            ensure_image(np.zeros((4, 5, c), np.uint8))

    def test_rejects_bad_dtype_channels_rank(self):
        with pytest.raises(ValueError, match="dtype"):
            ensure_image(np.zeros((4, 5), np.float32))
        with pytest.raises(ValueError, match="channels"):
            ensure_image(np.zeros((4, 5, 2), np.uint8))
        with pytest.raises(ValueError, match="2-D or 3-D"):
            ensure_image(np.zeros((4,), np.uint8))
        with pytest.raises(ValueError, match="positive"):
            ensure_image(np.zeros((0, 5), np.uint8))

    def test_mask_validation(self):
        ensure_mask(np.zeros((3, 7), bool))
        ensure_mask(np.zeros((3, 7), bool), dims=(7, 3))
        with pytest.raises(ValueError, match="dtype"):
            ensure_mask(np.zeros((3, 7), np.uint8))
        with pytest.raises(ValueError, match="dims"):
            ensure_mask(np.zeros((3, 7), bool), dims=(3, 7))

    def test_image_dims_is_width_height(self):
        assert image_dims(np.zeros((3, 7), np.uint8)) == (7, 3)

    def test_image_roundtrip(self, tmp_path, rng):
        img = rng.integers(0, 256, (20, 30, 3), dtype=np.uint8)
        p = tmp_path / "sub" / "a.png"
        save_image(p, img)
        assert np.array_equal(load_image(p), img)

    def test_mask_roundtrip(self, tmp_path, rng):
        mask = rng.random((16, 16)) > 0.5
        p = tmp_path / "m.png"
        save_mask(p, mask)
        assert np.array_equal(load_mask(p), mask)

    def test_load_image_missing_file(self, tmp_path):
        with pytest.raises(IngestionError, match="unreadable"):
            load_image(tmp_path / "nope.png")


class TestBoundingBox:
    def test_geometry(self):
        b = BoundingBox(2, 3, 10, 7)
        assert (b.width, b.height, b.area) == (8, 4, 32)
        assert b.as_list() == [2, 3, 10, 7]

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError, match="degenerate"):
            BoundingBox(5, 0, 5, 4)
        with pytest.raises(ValueError, match="degenerate"):
            BoundingBox(0, 4, 5, 4)

    def test_clamp_trims_overhang(self):
        assert BoundingBox(-3, -1, 8, 12).clamp((10, 10)).as_list() == [0, 0, 8, 10]
        assert BoundingBox(4, 4, 20, 6).clamp((10, 10)).as_list() == [4, 4, 10, 6]

    def test_clamp_inside_is_identity(self):
        b = BoundingBox(1, 2, 3, 4)
        assert b.clamp((10, 10)) == b

    def test_clamp_fully_outside_raises(self):
        with pytest.raises(ValueError, match="outside"):
            BoundingBox(12, 0, 15, 4).clamp((10, 10))


class TestDetection:
    def test_json_roundtrip_supervised(self):
        d = Detection(BoundingBox(0, 0, 4, 4), 0.75, "supervised", "ear accessory")
        assert Detection.from_json(d.to_json()) == d
        assert "text_alignment" not in d.to_json()

    def test_json_roundtrip_zero_shot(self):
        d = Detection(BoundingBox(1, 1, 5, 6), 0.5, "zero_shot", "earring",
                      text_alignment=0.4)
        assert Detection.from_json(d.to_json()) == d

    def test_text_alignment_presence_rule(self):
        box = BoundingBox(0, 0, 2, 2)
        with pytest.raises(ValueError, match="text_alignment"):
            Detection(box, 0.5, "supervised", "x", text_alignment=0.5)
        with pytest.raises(ValueError, match="text_alignment"):
            Detection(box, 0.5, "zero_shot", "x")

    def test_range_checks(self):
        box = BoundingBox(0, 0, 2, 2)
        with pytest.raises(ValueError, match="confidence"):
            Detection(box, 1.5, "supervised", "x")
        with pytest.raises(ValueError, match="source"):
            Detection(box, 0.5, "detector", "x")


class TestManifest:
    def test_record_validation(self):
        with pytest.raises(ValueError, match="side"):
            rec("a.png", side="middle")
        with pytest.raises(ValueError, match="stage"):
            rec("a.png", stage="cropped")

    def test_identities_first_appearance_order(self):
        m = DatasetManifest("d", (
            rec("b/1.png", "b"), rec("a/1.png", "a"), rec("b/2.png", "b"),
        ))
        assert list(m.identities()) == ["b", "a"]
        assert [r.path for r in m.identities()["b"]] == ["b/1.png", "b/2.png"]

    def test_side_split_identity_keys(self):
        m = DatasetManifest("d", (
            rec("1.png", "a", side="left"), rec("2.png", "a", side="right"),
        ), side_split=True)
        assert set(m.identities()) == {"a/left", "a/right"}

    def test_side_split_excludes_unknown_with_warning(self, caplog):
        m = DatasetManifest("d", (
            rec("1.png", "a", side="left"), rec("2.png", "b"),
        ), side_split=True)
        with caplog.at_level("WARNING"):
            ids = m.identities()
        assert set(ids) == {"a/left"}
        assert "unknown side" in caplog.text

    def test_roundtrip(self, tmp_path):
        m = DatasetManifest("d", (
            rec("x/1.png", "x", side="left", stage="aligned"),
            rec("y/1.png", "y"),
        ), side_split=True)
        p = tmp_path / "m.json"
        save_manifest(m, p)
        got = load_manifest(p)
        assert got.name == "d" and got.side_split is True
        assert got.records == m.records
        assert got.root == tmp_path

    def test_load_rejects_malformed(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text("{not json")
        with pytest.raises(IngestionError, match="unreadable"):
            load_manifest(p)
        p.write_text('{"name": "d", "records": [{"path": "a.png"}]}')
        with pytest.raises(IngestionError, match="malformed"):
            load_manifest(p)


class TestValidateManifest:
    def _touch(self, root, *names):
        for n in names:
            p = root / n
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_bytes(b"x")

    def test_clean_manifest_passes(self, tmp_path):
        self._touch(tmp_path, "a/1.png", "b/1.png")
        m = DatasetManifest("d", (rec("a/1.png", "a"), rec("b/1.png", "b")),
                            root=tmp_path)
        assert validate_manifest(m) == []

    def test_duplicate_path(self, tmp_path):
        self._touch(tmp_path, "a/1.png", "b/1.png")
        m = DatasetManifest("d", (rec("a/1.png", "a"), rec("a/1.png", "a"),
                                  rec("b/1.png", "b")), root=tmp_path)
        assert any("duplicate path" in v for v in validate_manifest(m))

    def test_missing_file(self, tmp_path):
        self._touch(tmp_path, "a/1.png")
        m = DatasetManifest("d", (rec("a/1.png", "a"), rec("b/1.png", "b")),
                            root=tmp_path)
        assert any("file not found" in v for v in validate_manifest(m))

    def test_single_identity_violation_wording(self, tmp_path):
        self._touch(tmp_path, "a/1.png", "a/2.png")
        m = DatasetManifest("d", (rec("a/1.png", "a"), rec("a/2.png", "a")),
                            root=tmp_path)
        assert "verification requires N ≥ 2" in validate_manifest(m)

    def test_slash_in_subject_id_only_under_side_split(self, tmp_path):
        self._touch(tmp_path, "1.png", "2.png")
        records = (rec("1.png", "a/b", side="left"), rec("2.png", "c", side="right"))
        plain = DatasetManifest("d", records, root=tmp_path)
        split = DatasetManifest("d", records, side_split=True, root=tmp_path)
        assert not any("collide" in v for v in validate_manifest(plain))
        assert any("collide" in v for v in validate_manifest(split))


class TestEmbedding:
    def test_accepts_and_casts(self):
        e = Embedding(np.ones(512, np.float64), "k")
        assert e.vector.dtype == np.float32 and e.record_ref == "k"

    def test_rejects_bad_vectors(self):
        with pytest.raises(ValueError, match="shape"):
            Embedding(np.ones(256, np.float32), "k")
        v = np.ones(512, np.float32)
        v[3] = np.nan
        with pytest.raises(ValueError, match="finite"):
            Embedding(v, "k")
        with pytest.raises(ValueError, match="zero norm"):
            Embedding(np.zeros(512, np.float32), "k")
