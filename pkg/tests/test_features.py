import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refrec import features, rng
from refrec.errors import ConfigError
from refrec.features import (
    PerturbationSpec,
    map_from_tokens,
    neighborhood_aggregate,
    perturb,
    resolve_sigma,
    tokens_from_map,
)

RNG = np.random.default_rng(7)


def naive_box_mean(fm, p):
    c, h, w = fm.shape
    r = p // 2
    out = np.zeros_like(fm, dtype=np.float64)
    for k in range(c):
        for i in range(h):
            for j in range(w):
                a0, a1 = max(i - r, 0), min(i + r, h - 1)
                b0, b1 = max(j - r, 0), min(j + r, w - 1)
                out[k, i, j] = fm[k, a0:a1 + 1, b0:b1 + 1].mean()
    return out


class TestAggregation:
    def test_constant_map_unchanged(self):
        fm = np.full((2, 5, 5), 3.25, dtype=np.float32)
        np.testing.assert_allclose(neighborhood_aggregate(fm, 3), fm, rtol=1e-6)

    def test_window_one_is_identity(self):
        fm = RNG.standard_normal((3, 4, 6)).astype(np.float32)
        np.testing.assert_array_equal(neighborhood_aggregate(fm, 1), fm)

    def test_center_of_3x3_is_global_mean(self):
        fm = np.arange(1.0, 10.0, dtype=np.float32).reshape(1, 3, 3)
        out = neighborhood_aggregate(fm, 3)
        assert out[0, 1, 1] == pytest.approx(5.0)

    def test_matches_naive_oracle(self):
        fm = RNG.standard_normal((2, 7, 9)).astype(np.float32)
        for p in (3, 5, 7):
            np.testing.assert_allclose(neighborhood_aggregate(fm, p),
                                       naive_box_mean(fm, p), atol=1e-5)

    def test_even_window_rejected(self):
        with pytest.raises(ConfigError, match="odd"):
            neighborhood_aggregate(np.zeros((1, 4, 4), dtype=np.float32), 2)

    def test_oversized_window_rejected(self):
        with pytest.raises(ConfigError, match="exceeds"):
            neighborhood_aggregate(np.zeros((1, 4, 4), dtype=np.float32), 5)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from([3, 5]))
    def test_linearity(self, seed, p):
        r = np.random.default_rng(seed)
        x = r.standard_normal((2, 6, 6)).astype(np.float32)
        y = r.standard_normal((2, 6, 6)).astype(np.float32)
        a, b = 1.7, -0.4
        lhs = neighborhood_aggregate((a * x + b * y).astype(np.float32), p)
        rhs = a * neighborhood_aggregate(x, p) + b * neighborhood_aggregate(y, p)
        np.testing.assert_allclose(lhs, rhs, atol=1e-5)

    def test_mean_preserved_exactly_on_constants(self):
        fm = np.full((2, 9, 13), -1.75, dtype=np.float32)
        for p in (3, 5, 7):
            out = neighborhood_aggregate(fm, p)
            assert float(abs(out - fm).max()) < 1e-6

    def test_mean_preserved_on_smooth_fields(self):
        # boundary clipping shifts the global mean in proportion to border
        # gradients (drift ~ amp * freq^2 / size); low-frequency content on a
        # reasonably sized grid stays within 1e-4
        ys = (np.arange(64) + 0.5) / 64
        xs = (np.arange(64) + 0.5) / 64
        fm = (0.3 * np.cos(2 * np.pi * (0.4 * ys[:, None] + 0.25 * xs[None, :]))
              + 0.3)[None].astype(np.float32)
        for p in (3, 5):
            out = neighborhood_aggregate(fm, p)
            assert abs(float(out.mean()) - float(fm.mean())) < 1e-4


class TestTokenLayout:
    def test_round_trip(self):
        fm = RNG.standard_normal((4, 3, 5)).astype(np.float32)
        tokens = tokens_from_map(fm)
        assert tokens.shape == (15, 4)
        np.testing.assert_array_equal(map_from_tokens(tokens, (3, 5)), fm)

    def test_position_order_row_major(self):
        fm = np.arange(6, dtype=np.float32).reshape(1, 2, 3)
        tokens = tokens_from_map(fm)
        np.testing.assert_array_equal(tokens[:, 0], [0, 1, 2, 3, 4, 5])


class TestPerturbation:
    def test_disabled_is_identity(self):
        t = RNG.standard_normal((8, 4)).astype(np.float32)
        spec = PerturbationSpec(enabled=False)
        np.testing.assert_array_equal(perturb(t, spec, rng_seed=1), t)

    def test_fixed_seed_reproducible(self):
        t = RNG.standard_normal((8, 4)).astype(np.float32)
        spec = PerturbationSpec(enabled=True, sigma=0.3)
        a = perturb(t, spec, rng_seed=99)
        b = perturb(t, spec, rng_seed=99)
        np.testing.assert_array_equal(a, b)
        c = perturb(t, spec, rng_seed=100)
        assert not np.array_equal(a, c)

    def test_empirical_std_within_two_percent(self):
        t = np.zeros((1000, 100), dtype=np.float32)
        out = perturb(t, PerturbationSpec(enabled=True, sigma=0.5), rng_seed=5)
        assert abs(float(out.std()) - 0.5) / 0.5 < 0.02

    def test_enabled_zero_sigma_rejected(self):
        with pytest.raises(ConfigError):
            PerturbationSpec(enabled=True, sigma=0.0)

    def test_auto_sigma_resolution(self):
        maps = [[np.full((2, 4, 4), 2.0, dtype=np.float32),
                 np.full((2, 4, 4), -2.0, dtype=np.float32)]]
        sigma = resolve_sigma(PerturbationSpec(enabled=True), maps)
        assert sigma == pytest.approx(features.SIGMA_STD_FACTOR * 2.0, rel=1e-3)
        assert resolve_sigma(PerturbationSpec(enabled=False), maps) == 0.0
