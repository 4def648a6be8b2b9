"""Mask construction, application, dropout baseline, sparsity reporting."""

import numpy as np
import pytest

from sdclr import (
    Encoder,
    InvalidParameterError,
    PruneMask,
    all_ones_mask,
    apply_mask,
    layerwise_sparsity,
    magnitude_mask,
    random_dropout_mask,
)
from sdclr.util import derive_rng

from conftest import TINY_ENCODER


def test_documented_four_weight_case():
    params = {"w": np.array([0.05, -0.5, 0.3, 0.1])}
    mask = magnitude_mask(params, 0.5, "global", prunable=["w"])
    assert mask.masks["w"].tolist() == [0, 1, 1, 0]


def test_ratio_zero_all_ones():
    params = {"w": np.arange(1, 9, dtype=float)}
    mask = magnitude_mask(params, 0.0, "global", prunable=["w"])
    assert np.all(mask.masks["w"] == 1)


def test_sort_oracle_exact_count_and_threshold():
    rng = np.random.default_rng(0)
    w = rng.standard_normal(1000)
    mask = magnitude_mask({"w": w}, 0.9, "global", prunable=["w"])
    m = mask.masks["w"]
    assert int((m == 0).sum()) == 900
    kept = np.abs(w[m == 1])
    dropped = np.abs(w[m == 0])
    assert kept.min() >= dropped.max()
    # independent oracle: the drop set is exactly the 900 smallest magnitudes
    oracle_dropped = set(np.argsort(np.abs(w), kind="stable")[:900].tolist())
    assert set(np.flatnonzero(m == 0).tolist()) == oracle_dropped


def test_tie_break_by_name_then_index():
    params = {"b": np.array([0.5, 0.5, 1.0]), "a": np.array([0.5, 2.0])}
    # four candidates tie at |w|=0.5; prunable order puts "b" first, so the
    # (tensor name, flat index) ascending rule drops b[0] then b[1]
    mask = magnitude_mask(params, 0.4, "global", prunable=["b", "a"])
    assert mask.masks["b"].tolist() == [0, 0, 1]
    assert mask.masks["a"].tolist() == [1, 1]


def test_monotone_dropset_nesting_property():
    rng = np.random.default_rng(1)
    for trial in range(100):
        params = {
            "p": rng.standard_normal(rng.integers(5, 40)),
            "q": rng.standard_normal(rng.integers(5, 40)),
        }
        previous = set()
        for ratio in (0.3, 0.5, 0.9):
            mask = magnitude_mask(params, ratio, "global", prunable=["p", "q"])
            dropped = mask.dropped_keys()
            n_total = params["p"].size + params["q"].size
            assert len(dropped) == int(ratio * n_total)
            assert previous <= dropped
            previous = dropped


def test_per_layer_scope():
    rng = np.random.default_rng(2)
    params = {"a": rng.standard_normal(40), "b": rng.standard_normal(60)}
    mask = magnitude_mask(params, 0.5, "per_layer", prunable=["a", "b"])
    assert int((mask.masks["a"] == 0).sum()) == 20
    assert int((mask.masks["b"] == 0).sum()) == 30


def test_invalid_ratio():
    params = {"w": np.ones(4)}
    for ratio in (-0.1, 1.0, 1.5):
        with pytest.raises(InvalidParameterError):
            magnitude_mask(params, ratio, "global", prunable=["w"])
        with pytest.raises(InvalidParameterError):
            random_dropout_mask(params, ratio, derive_rng(0), prunable=["w"])


def test_apply_mask_identity_and_zero():
    rng = np.random.default_rng(3)
    params = {"w": rng.standard_normal((4, 4))}
    ones = all_ones_mask(params, prunable=["w"])
    out = apply_mask(params, ones)
    assert np.array_equal(out["w"], params["w"])
    zero = PruneMask(masks={"w": np.zeros((4, 4), np.uint8)},
                     target_ratio=1.0, scope="global")
    assert np.all(apply_mask(params, zero)["w"] == 0)


def test_apply_mask_elementwise_oracle_and_idempotence():
    rng = np.random.default_rng(4)
    params = {"w": rng.standard_normal(50), "v": rng.standard_normal(30)}
    mask = magnitude_mask(params, 0.4, "global", prunable=["w", "v"])
    out = apply_mask(params, mask)
    for k in params:
        assert np.array_equal(out[k], params[k] * mask.masks[k])
    twice = apply_mask(out, mask)
    for k in params:
        assert np.array_equal(twice[k], out[k])


def test_mask_never_touches_norm_or_bias_params():
    enc = Encoder(TINY_ENCODER)
    params = enc.init_params(derive_rng(0, "init"))
    mask = magnitude_mask(params, 0.9, "global", prunable=enc.prunable_keys())
    assert set(mask.masks) == set(enc.prunable_keys())
    protected = {k for k in params if k.endswith((".gamma", ".beta", ".bias"))}
    assert not protected & set(mask.masks)
    out = apply_mask(params, mask)
    for k in protected:
        assert out[k] is params[k]


def test_target_ratio_within_quantization():
    rng = np.random.default_rng(5)
    params = {"w": rng.standard_normal(777)}
    for ratio in (0.3, 0.5, 0.9):
        mask = magnitude_mask(params, ratio, "global", prunable=["w"])
        assert abs(mask.zero_fraction() - ratio) <= 1.0 / 777


def test_dropout_mask_binomial_fraction():
    params = {"w": np.ones(10_000)}
    mask = random_dropout_mask(params, 0.9, derive_rng(7, "mask"), prunable=["w"])
    frac = mask.zero_fraction()
    assert 0.88 <= frac <= 0.92
    again = random_dropout_mask(params, 0.9, derive_rng(7, "mask"), prunable=["w"])
    assert np.array_equal(mask.masks["w"], again.masks["w"])
    zero = random_dropout_mask(params, 0.0, derive_rng(8), prunable=["w"])
    assert np.all(zero.masks["w"] == 1)


def test_layerwise_sparsity_report():
    masks = {
        "a": np.array([1, 0, 0, 0, 0, 0, 0, 0, 0, 0], np.uint8),  # 0.9
        "b": np.ones(10, np.uint8),                               # fully kept
    }
    mask = PruneMask(masks=masks, target_ratio=0.45, scope="per_layer")
    rep = layerwise_sparsity(mask, order=["a", "b"])
    assert rep.per_layer == (("a", 0.9), ("b", 0.0))
    assert rep.overall == pytest.approx(0.45)
    # overall equals the size-weighted mean of per-layer fractions
    weights = [masks[n].size for n, _ in rep.per_layer]
    weighted = np.average([f for _, f in rep.per_layer], weights=weights)
    assert rep.overall == pytest.approx(weighted)


def test_uniform_per_layer_ratio():
    rng = np.random.default_rng(6)
    params = {f"l{i}": rng.standard_normal(101) for i in range(4)}
    mask = magnitude_mask(params, 0.9, "per_layer", prunable=sorted(params))
    rep = layerwise_sparsity(mask, order=sorted(params))
    for _, frac in rep.per_layer:
        assert abs(frac - 0.9) <= 1.0 / 101


def test_mask_file_round_trip_deterministic(tmp_path):
    rng = np.random.default_rng(9)
    params = {"w": rng.standard_normal((8, 4)), "v": rng.standard_normal(33)}
    mask = magnitude_mask(params, 0.7, "global", prunable=["w", "v"], epoch=5)
    path = tmp_path / "m.mask"
    mask.save(path)
    loaded = PruneMask.load(path)
    assert loaded.target_ratio == 0.7
    assert loaded.epoch_created == 5
    for k in mask.masks:
        assert np.array_equal(loaded.masks[k], mask.masks[k])
    first = path.read_bytes()
    mask.save(path)
    assert path.read_bytes() == first
    assert loaded.digest() == mask.digest()
