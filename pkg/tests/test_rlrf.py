import os
import struct

import numpy as np
import pytest

from refrec.errors import DataError, ParseError
from refrec.rlrf import (
    FeatureRecord,
    load_dataset,
    read_feature_file,
    read_manifest,
    save_dataset,
    write_feature_file,
    write_manifest,
)

RNG = np.random.default_rng(11)


def make_record(anomalous=False, image_id="img_000"):
    mask = None
    if anomalous:
        mask = np.zeros((8, 8), dtype=np.uint8)
        mask[2:4, 3:6] = 1
    return FeatureRecord(
        image_id=image_id, class_label="widget", is_anomalous=anomalous,
        image_hw=(8, 8),
        scales=[RNG.standard_normal((3, 4, 4)).astype(np.float32),
                RNG.standard_normal((5, 2, 2)).astype(np.float32)],
        pixel_mask=mask)


class TestRoundTrip:
    @pytest.mark.parametrize("anomalous", [False, True])
    def test_bitwise_round_trip(self, tmp_path, anomalous):
        rec = make_record(anomalous)
        path = tmp_path / "r.rlrf"
        write_feature_file(rec, path)
        back = read_feature_file(path)
        assert back.image_id == rec.image_id
        assert back.class_label == rec.class_label
        assert back.is_anomalous == rec.is_anomalous
        assert back.image_hw == rec.image_hw
        for a, b in zip(rec.scales, back.scales):
            assert a.tobytes() == b.tobytes()
        if anomalous:
            np.testing.assert_array_equal(back.pixel_mask, rec.pixel_mask)
        else:
            assert back.pixel_mask is None

    def test_write_is_deterministic(self, tmp_path):
        rec = make_record(True)
        p1, p2 = tmp_path / "a.rlrf", tmp_path / "b.rlrf"
        write_feature_file(rec, p1)
        write_feature_file(rec, p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestParseErrors:
    def _write(self, tmp_path, data):
        path = tmp_path / "bad.rlrf"
        path.write_bytes(data)
        return path

    def test_bad_magic(self, tmp_path):
        rec = make_record()
        path = tmp_path / "r.rlrf"
        write_feature_file(rec, path)
        data = bytearray(path.read_bytes())
        data[:4] = b"XXXX"
        with pytest.raises(ParseError, match="bad magic"):
            read_feature_file(self._write(tmp_path, bytes(data)))

    def test_version_mismatch(self, tmp_path):
        rec = make_record()
        path = tmp_path / "r.rlrf"
        write_feature_file(rec, path)
        data = bytearray(path.read_bytes())
        data[4:8] = struct.pack("<I", 9)
        with pytest.raises(ParseError, match="version"):
            read_feature_file(self._write(tmp_path, bytes(data)))

    def test_truncation_names_offset(self, tmp_path):
        rec = make_record()
        path = tmp_path / "r.rlrf"
        write_feature_file(rec, path)
        data = path.read_bytes()[:-10]
        with pytest.raises(ParseError, match="offset") as err:
            read_feature_file(self._write(tmp_path, data))
        assert err.value.offset > 0

    def test_extent_overflow(self, tmp_path):
        rec = make_record()
        path = tmp_path / "r.rlrf"
        write_feature_file(rec, path)
        data = bytearray(path.read_bytes())
        # scale 0 dims start right after the scale count byte
        base = 4 + 4 + 2 + len(b"img_000") + 2 + len(b"widget") + 1 + 8 + 1
        data[base:base + 4] = struct.pack("<I", 0xFFFFFFFF)
        with pytest.raises(ParseError, match="overflow"):
            read_feature_file(self._write(tmp_path, bytes(data)))

    def test_trailing_garbage(self, tmp_path):
        rec = make_record()
        path = tmp_path / "r.rlrf"
        write_feature_file(rec, path)
        with pytest.raises(ParseError, match="trailing"):
            read_feature_file(self._write(tmp_path, path.read_bytes() + b"zz"))


class TestManifestAndDataset:
    def test_manifest_round_trip(self, tmp_path):
        entries = [("features/a.rlrf", "train"), ("features/b.rlrf", "test")]
        path = tmp_path / "manifest.txt"
        write_manifest(entries, path)
        assert read_manifest(path) == entries

    def test_manifest_rejects_bad_split(self, tmp_path):
        path = tmp_path / "manifest.txt"
        path.write_text("a.rlrf\tvalidation\n")
        with pytest.raises(DataError, match="split"):
            read_manifest(path)

    def test_save_load_dataset(self, tmp_path):
        train = [make_record(image_id=f"t{i}") for i in range(3)]
        test = [make_record(True, image_id="e0"), make_record(image_id="e1")]
        save_dataset(train, test, tmp_path)
        tr, te = load_dataset(tmp_path)
        assert [r.image_id for r in tr] == ["t0", "t1", "t2"]
        assert [r.image_id for r in te] == ["e0", "e1"]
        assert te[0].is_anomalous and te[0].pixel_mask is not None

    def test_load_rejects_inconsistent_dims(self, tmp_path):
        good = make_record(image_id="a")
        bad = FeatureRecord(image_id="b", class_label="widget", is_anomalous=False,
                            image_hw=(8, 8),
                            scales=[RNG.standard_normal((2, 4, 4)).astype(np.float32)])
        save_dataset([good, bad], [], tmp_path)
        with pytest.raises(DataError, match="dims"):
            load_dataset(tmp_path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError, match="manifest"):
            load_dataset(tmp_path)
