import numpy as np
import pytest

from refrec import autodiff as ad
from refrec.autodiff import Tensor, backward, no_grad, sum_all
from refrec.errors import ConfigError
from refrec.model import (
    VARIANT_ORDER,
    AttentionMask,
    ModelConfig,
    ScaleSpec,
    ablation_variant,
    attention_combine,
    build_mask,
    config_from_canonical,
    init_model,
    init_reference,
    lca_forward,
    mlka_forward,
    model_forward,
)

import oracle
from helpers import rel_err

RNG = np.random.default_rng(21)


def tiny_config(variant="mlka+lca", dtype="float64", blocks=1, heads=1, seed=5):
    return ModelConfig(
        scales=(ScaleSpec(channels=4, height=1, width=9, hidden=8,
                          window=3, agg_window=1),),
        blocks=blocks, alpha=2.0, heads=heads, variant=variant,
        dtype=dtype, seed=seed).validate()


class TestMasks:
    def test_neighbor_row_on_1x5_grid(self):
        mask = build_mask("neighbor", 1, 5, 3)
        np.testing.assert_array_equal(mask.blocked[0],
                                      [True, True, False, False, False])

    def test_local_is_complement_of_neighbor(self):
        m1 = build_mask("neighbor", 4, 6, 3)
        m2 = build_mask("local", 4, 6, 3)
        assert np.array_equal(m1.blocked, ~m2.blocked)

    def test_complement_partition_exhaustive(self):
        # every grid up to 8x8 with windows 3/5/7 where the config is valid
        for window in (3, 5, 7):
            for h in range(1, 9):
                for w in range(1, 9):
                    if not (h > window or w > window):
                        with pytest.raises(ConfigError):
                            build_mask("neighbor", h, w, window)
                        continue
                    nei = build_mask("neighbor", h, w, window).blocked
                    loc = build_mask("local", h, w, window).blocked
                    assert np.all(nei ^ loc), f"{h}x{w} w={window}"
                    # neighbor rows keep at least one visible position
                    assert not nei.all(axis=1).any()

    def test_window_covers_grid_rejected(self):
        with pytest.raises(ConfigError, match="covers the whole"):
            build_mask("neighbor", 3, 3, 3)

    def test_even_window_rejected(self):
        with pytest.raises(ConfigError, match="odd"):
            build_mask("neighbor", 4, 8, 2)

    def test_self_window_blocked_in_neighbor(self):
        mask = build_mask("neighbor", 2, 6, 3)
        assert mask.blocked.diagonal().all()


class TestConfig:
    def test_validate_catches_window_covering_grid(self):
        cfg = ModelConfig(scales=(ScaleSpec(4, 3, 3, 8, 3, 1),))
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_alpha_below_one_rejected(self):
        cfg = tiny_config()
        from dataclasses import replace
        with pytest.raises(ConfigError, match="alpha"):
            replace(cfg, alpha=0.5).validate()

    def test_canonical_round_trip(self):
        cfg = tiny_config(variant="cross", blocks=3, heads=2)
        assert config_from_canonical(cfg.canonical_text()) == cfg

    def test_heads_must_divide_hidden(self):
        from dataclasses import replace
        with pytest.raises(ConfigError, match="divisible"):
            replace(tiny_config(), heads=3).validate()


def identity_proj(n, dtype=np.float64):
    eye = Tensor(np.eye(n), dtype=dtype)
    return {"wq": eye, "wk": eye, "wv": eye}


class TestMlka:
    def test_one_hot_attention_selects_value_row(self):
        # craft a mask leaving exactly one visible key per row
        n = 4
        blocked = np.ones((n, n), dtype=bool)
        picks = [2, 3, 0, 1]
        for i, q in enumerate(picks):
            blocked[i, q] = False
        mask = AttentionMask("neighbor", blocked, 1, n, 1)
        y = Tensor(RNG.standard_normal((n, n)), dtype=np.float64)
        r_h = Tensor(RNG.standard_normal((n, n)), dtype=np.float64)
        out = mlka_forward(y, r_h, identity_proj(n), mask)
        np.testing.assert_allclose(out.data, y.data[picks], atol=1e-12)

    def test_matches_direct_summation_oracle(self):
        h, w, c = 1, 9, 8
        y = RNG.standard_normal((h * w, c))
        r = RNG.standard_normal((h * w, c))
        proj = {k: Tensor(RNG.standard_normal((c, c)) * 0.5, dtype=np.float64)
                for k in ("wq", "wk", "wv")}
        mask = build_mask("neighbor", h, w, 3)
        out = mlka_forward(Tensor(y, dtype=np.float64), Tensor(r, dtype=np.float64),
                           proj, mask)
        direct = oracle.attention_direct(
            "mlka", y, r, {k: t.data for k, t in proj.items()}, h, w, 3)
        assert np.abs(out.data - direct).max() < 1e-6

    def test_masked_positions_have_exactly_zero_weight(self):
        # with V = identity, the output row equals the attention-weight row
        n = 9
        mask = build_mask("neighbor", 1, n, 3)
        y = Tensor(np.eye(n), dtype=np.float64)
        r_h = Tensor(RNG.standard_normal((n, n)), dtype=np.float64)
        weights = mlka_forward(y, r_h, identity_proj(n), mask)
        assert np.all(weights.data[mask.blocked] == 0.0)
        np.testing.assert_allclose(weights.data.sum(axis=1), 1.0, atol=1e-9)

    def test_requires_neighbor_mask(self):
        cfg = tiny_config()
        with pytest.raises(ConfigError, match="neighbor"):
            mlka_forward(Tensor(np.zeros((9, 8))), Tensor(np.zeros((9, 8))),
                         identity_proj(8), build_mask("local", 1, 9, 3))


class TestLca:
    def test_identical_keys_return_common_reference_value(self):
        n, c = 9, 8
        mask = build_mask("local", 1, n, 3)
        common = RNG.standard_normal(c)
        r_h = Tensor(np.tile(common, (n, 1)), dtype=np.float64)
        proj = {k: Tensor(RNG.standard_normal((c, c)), dtype=np.float64)
                for k in ("wq", "wk", "wv")}
        for trial in range(3):
            y = Tensor(RNG.standard_normal((n, c)), dtype=np.float64)
            out = lca_forward(y, r_h, proj, mask)
            expected = proj["wv"].data @ common
            np.testing.assert_allclose(out.data, np.tile(expected, (n, 1)),
                                       atol=1e-9)

    def test_matches_direct_summation_oracle(self):
        h, w, c = 1, 9, 8
        y = RNG.standard_normal((h * w, c))
        r = RNG.standard_normal((h * w, c))
        proj = {k: Tensor(RNG.standard_normal((c, c)) * 0.5, dtype=np.float64)
                for k in ("wq", "wk", "wv")}
        mask = build_mask("local", h, w, 3)
        out = lca_forward(Tensor(y, dtype=np.float64), Tensor(r, dtype=np.float64),
                          proj, mask)
        direct = oracle.attention_direct(
            "lca", y, r, {k: t.data for k, t in proj.items()}, h, w, 3)
        assert np.abs(out.data - direct).max() < 1e-6

    def test_weights_zero_outside_window(self):
        n = 9
        mask = build_mask("local", 1, n, 3)
        y = Tensor(RNG.standard_normal((n, n)), dtype=np.float64)
        r_h = Tensor(np.eye(n), dtype=np.float64)  # V = identity -> weights
        weights = lca_forward(y, r_h, identity_proj(n), mask)
        assert np.all(weights.data[mask.blocked] == 0.0)

    def test_value_path_purity_zero_gradient(self):
        # Q-path frozen (wq = 0): output must not depend on y at all
        n, c = 9, 8
        mask = build_mask("local", 1, n, 3)
        proj = {"wq": Tensor(np.zeros((c, c)), requires_grad=True, dtype=np.float64),
                "wk": Tensor(RNG.standard_normal((c, c)), dtype=np.float64),
                "wv": Tensor(RNG.standard_normal((c, c)), dtype=np.float64)}
        r_h = Tensor(RNG.standard_normal((n, c)), dtype=np.float64)
        y = Tensor(RNG.standard_normal((n, c)), requires_grad=True, dtype=np.float64)
        out = lca_forward(y, r_h, proj, mask)
        backward(sum_all(out))
        assert y.grad is not None
        assert np.all(y.grad == 0.0)
        y2 = Tensor(RNG.standard_normal((n, c)), dtype=np.float64)
        out2 = lca_forward(y2, r_h, proj, mask)
        np.testing.assert_array_equal(out.data, out2.data)


class TestBlock:
    def _setup(self, dtype=np.float64):
        cfg = tiny_config()
        model = init_model(cfg)
        bank = init_reference(cfg)
        y = Tensor(RNG.standard_normal((9, 8)), dtype=dtype)
        with no_grad():
            r_h = bank.projected(0)
        return model, y, Tensor(r_h.data), model.scales[0]["blocks"][0], model.masks[0]

    def test_alpha_zero_reduces_to_mlka_only(self):
        model, y, r_h, blk, masks = self._setup()
        with no_grad():
            both = attention_combine(y, r_h, blk, masks, 0.0, ("mlka", "lca"), False)
            only = attention_combine(y, r_h, blk, masks, 0.0, ("mlka",), False)
        np.testing.assert_allclose(both.data, only.data, atol=1e-12)

    def test_alpha_two_equals_manually_doubled_lca(self):
        model, y, r_h, blk, masks = self._setup()
        doubled = dict(blk)
        doubled["lca"] = {"wq": blk["lca"]["wq"], "wk": blk["lca"]["wk"],
                          "wv": Tensor(blk["lca"]["wv"].data * 2.0)}
        with no_grad():
            a = attention_combine(y, r_h, blk, masks, 2.0, ("mlka", "lca"), False)
            b = attention_combine(y, r_h, doubled, masks, 1.0, ("mlka", "lca"), False)
        np.testing.assert_allclose(a.data, b.data, atol=1e-12)

    def test_shortcut_free_zero_projections_kill_input_gradient(self):
        model, y, r_h, blk, masks = self._setup()
        for mech in ("mlka", "lca"):
            for k in ("wq", "wk", "wv"):
                blk[mech][k].data[:] = 0.0
        y.requires_grad = True
        z = attention_combine(y, r_h, blk, masks, 2.0, ("mlka", "lca"), False)
        backward(sum_all(z))
        assert y.grad is not None
        assert np.all(y.grad == 0.0)
        # and with a residual the gradient must come back
        y2 = Tensor(y.data.copy(), requires_grad=True, dtype=np.float64)
        z2 = attention_combine(y2, r_h, blk, masks, 2.0, ("mlka", "lca"), True)
        backward(sum_all(z2))
        assert np.abs(y2.grad).max() > 0.0


class TestReferenceBank:
    def test_same_seed_identical(self):
        cfg = tiny_config()
        b1 = init_reference(cfg, seed=9)
        b2 = init_reference(cfg, seed=9)
        for t1, t2 in zip(b1.tokens, b2.tokens):
            assert t1.data.tobytes() == t2.data.tobytes()

    def test_token_std_matches_inverse_sqrt_channels(self):
        cfg = ModelConfig(
            scales=(ScaleSpec(channels=64, height=16, width=16, hidden=8,
                              window=3, agg_window=1),),
            blocks=1, dtype="float32", seed=3)
        bank = init_reference(cfg.validate())
        vals = bank.tokens[0].data  # 16384 samples
        target = 1.0 / np.sqrt(64)
        assert abs(vals.std() - target) / target < 0.05

    def test_requires_grad_everywhere(self):
        bank = init_reference(tiny_config())
        assert all(t.requires_grad for t in bank.parameters().values())


class TestModelForward:
    def test_shapes_and_finiteness_all_variants(self):
        cfg = tiny_config(dtype="float32", blocks=2)
        bank = init_reference(cfg)
        x = [RNG.standard_normal((9, 4)).astype(np.float32)]
        for variant in VARIANT_ORDER:
            model = ablation_variant(cfg, variant)
            with no_grad():
                outs = model_forward(model, bank, x)
            assert outs[0].shape == (9, 4)
            assert np.all(np.isfinite(outs[0].data))

    def test_forward_deterministic_bitwise(self):
        cfg = tiny_config(dtype="float32")
        model, bank = init_model(cfg), init_reference(cfg)
        x = [RNG.standard_normal((9, 4)).astype(np.float32)]
        with no_grad():
            a = model_forward(model, bank, x)[0].data
            b = model_forward(model, bank, x)[0].data
        assert a.tobytes() == b.tobytes()

    @pytest.mark.parametrize("variant", VARIANT_ORDER)
    def test_matches_direct_summation_oracle(self, variant):
        cfg = tiny_config(variant=variant)
        model = init_model(cfg)
        bank = init_reference(cfg)
        x = [RNG.standard_normal((9, 4))]
        with no_grad():
            out = model_forward(model, bank, x)[0].data
        params64 = oracle.snapshot_params(model, bank)
        direct = oracle.model_direct(x, params64, cfg, model.mechanisms,
                                     model.residual)[0]
        assert np.abs(out - direct).max() < 1e-6

    def test_two_blocks_against_oracle(self):
        cfg = tiny_config(blocks=2)
        model, bank = init_model(cfg), init_reference(cfg)
        x = [RNG.standard_normal((9, 4))]
        with no_grad():
            out = model_forward(model, bank, x)[0].data
        direct = oracle.model_direct(x, oracle.snapshot_params(model, bank),
                                     cfg, model.mechanisms, model.residual)[0]
        assert np.abs(out - direct).max() < 1e-6

    def test_multihead_against_oracle(self):
        cfg = tiny_config(heads=2)
        model, bank = init_model(cfg), init_reference(cfg)
        x = [RNG.standard_normal((9, 4))]
        with no_grad():
            out = model_forward(model, bank, x)[0].data
        direct = oracle.model_direct(x, oracle.snapshot_params(model, bank),
                                     cfg, model.mechanisms, model.residual)[0]
        assert np.abs(out - direct).max() < 1e-6

    def test_unknown_variant_rejected(self):
        with pytest.raises(ConfigError, match="variant"):
            ablation_variant(tiny_config(), "banana")

    def test_mlka_lca_variant_is_default_model(self):
        cfg = tiny_config()
        m1 = init_model(cfg)
        m2 = ablation_variant(cfg, "mlka+lca")
        bank = init_reference(cfg)
        x = [RNG.standard_normal((9, 4))]
        with no_grad():
            o1 = model_forward(m1, bank, x)[0].data
            o2 = model_forward(m2, bank, x)[0].data
        assert o1.tobytes() == o2.tobytes()
