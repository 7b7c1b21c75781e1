import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refrec.errors import ShapeError
from refrec.scoring import (
    bilinear_upsample,
    image_score,
    scale_score_map,
    score_map,
    write_pgm,
)

import oracle

RNG = np.random.default_rng(41)


class TestScoreMap:
    def test_equal_inputs_give_exact_zero_map(self):
        maps = [RNG.standard_normal((3, 4, 4)).astype(np.float32),
                RNG.standard_normal((5, 2, 2)).astype(np.float32)]
        out = score_map(maps, [m.copy() for m in maps], (8, 8))
        assert out.shape == (8, 8)
        assert np.all(out == 0.0)

    def test_one_by_one_hand_case(self):
        rec = [np.full((1, 1, 1), 3.0, dtype=np.float32)]
        org = [np.ones((1, 1, 1), dtype=np.float32)]
        out = score_map(rec, org, (4, 4))
        np.testing.assert_array_equal(out, np.full((4, 4), 2.0, dtype=np.float32))

    def test_mean_over_scales_is_order_free(self):
        a = [RNG.standard_normal((2, 3, 3)).astype(np.float32),
             RNG.standard_normal((4, 2, 2)).astype(np.float32)]
        b = [RNG.standard_normal((2, 3, 3)).astype(np.float32),
             RNG.standard_normal((4, 2, 2)).astype(np.float32)]
        fwd = score_map(a, b, (6, 6))
        rev = score_map(a[::-1], b[::-1], (6, 6))
        np.testing.assert_allclose(fwd, rev, atol=1e-6)

    def test_nonnegative_and_finite(self):
        rec = [RNG.standard_normal((3, 5, 5)).astype(np.float32)]
        org = [RNG.standard_normal((3, 5, 5)).astype(np.float32)]
        out = score_map(rec, org, (10, 10))
        assert np.all(np.isfinite(out)) and np.all(out >= 0.0)

    def test_zero_vectors_guarded(self):
        rec = [np.zeros((3, 2, 2), dtype=np.float32)]
        org = [np.zeros((3, 2, 2), dtype=np.float32)]
        out = score_map(rec, org, (2, 2))
        assert np.all(np.isfinite(out))


class TestBilinearUpsample:
    def test_constant_stays_constant(self):
        grid = np.full((3, 5), 2.5, dtype=np.float32)
        out = bilinear_upsample(grid, 9, 15)
        np.testing.assert_allclose(out, 2.5, atol=1e-6)

    def test_hand_case_2x2_to_2x4(self):
        grid = np.array([[0.0, 1.0], [0.0, 1.0]], dtype=np.float32)
        out = bilinear_upsample(grid, 2, 4)
        expected = np.array([[0.0, 0.25, 0.75, 1.0]] * 2, dtype=np.float32)
        np.testing.assert_allclose(out, expected, atol=1e-6)

    def test_idempotent_when_same_size(self):
        grid = RNG.standard_normal((4, 6)).astype(np.float32)
        np.testing.assert_array_equal(bilinear_upsample(grid, 4, 6), grid)

    def test_matches_direct_oracle(self):
        for (h, w, th, tw) in [(2, 3, 5, 7), (4, 4, 9, 9), (1, 5, 3, 11), (3, 1, 7, 2)]:
            grid = RNG.standard_normal((h, w)).astype(np.float32)
            out = bilinear_upsample(grid, th, tw)
            np.testing.assert_allclose(out, oracle.bilinear_direct(grid, th, tw),
                                       atol=1e-5)

    def test_shrinking_rejected(self):
        with pytest.raises(ShapeError, match="smaller"):
            bilinear_upsample(np.zeros((4, 4), dtype=np.float32), 2, 8)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_order_preserving(self, seed):
        r = np.random.default_rng(seed)
        lo = r.standard_normal((3, 4)).astype(np.float32)
        hi = lo + r.random((3, 4)).astype(np.float32)  # pointwise >= lo
        up_lo = bilinear_upsample(lo, 7, 9)
        up_hi = bilinear_upsample(hi, 7, 9)
        assert np.all(up_hi >= up_lo - 1e-6)


class TestImageScore:
    def test_zero_map(self):
        assert image_score(np.zeros((8, 8), dtype=np.float32)) == 0.0

    def test_block_matching_smoothing_window(self):
        smap = np.zeros((12, 12), dtype=np.float32)
        smap[4:8, 5:9] = 1.0
        assert image_score(smap, smooth_window=4) == pytest.approx(1.0)

    def test_monotone_in_pointwise_order(self):
        a = RNG.random((10, 10)).astype(np.float32)
        b = a + RNG.random((10, 10)).astype(np.float32)
        assert image_score(b) >= image_score(a)

    def test_small_maps_clamp_window(self):
        smap = np.full((2, 3), 0.5, dtype=np.float32)
        assert image_score(smap, smooth_window=4) == pytest.approx(0.5)


class TestPgm:
    def test_write_and_shape(self, tmp_path):
        smap = RNG.random((6, 9)).astype(np.float32)
        path = tmp_path / "map.pgm"
        bounds = tmp_path / "map.bounds.txt"
        write_pgm(smap, path, bounds)
        data = path.read_bytes()
        header, rest = data.split(b"\n255\n", 1)
        assert header == b"P5\n9 6"
        assert len(rest) == 54
        text = bounds.read_text()
        assert text.startswith("min=") and "max=" in text
        lo = float(text.splitlines()[0].split("=")[1])
        hi = float(text.splitlines()[1].split("=")[1])
        assert lo == pytest.approx(float(smap.min()))
        assert hi == pytest.approx(float(smap.max()))

    def test_constant_map_writes_zeros(self, tmp_path):
        smap = np.full((3, 3), 7.0, dtype=np.float32)
        path = tmp_path / "const.pgm"
        write_pgm(smap, path)
        body = path.read_bytes().split(b"\n255\n", 1)[1]
        assert body == b"\x00" * 9
