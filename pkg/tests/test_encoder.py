"""Encoder contract: shapes, normalization-state handling, gradients."""

import numpy as np
import pytest

from sdclr import ContractError, Encoder, EncoderSpec, InvalidSpecError
from sdclr.encoder import Conv2d
from sdclr.util import derive_rng

from conftest import TINY_ENCODER, rand_images


def make(spec=TINY_ENCODER, seed=0, dtype=np.float64):
    enc = Encoder(spec)
    params = enc.init_params(derive_rng(seed, "init"), dtype=dtype)
    state = enc.init_norm_state(dtype=dtype)
    return enc, params, state


def test_shapes_and_unit_projections():
    enc, params, state = make()
    x = rand_images(5).astype(np.float64)
    feats, projs, new_state = enc.encode(params, state, x, "train")
    assert feats.shape == (5, TINY_ENCODER.feature_dim)
    assert projs.shape == (5, TINY_ENCODER.proj_dim)
    assert np.allclose(np.linalg.norm(projs, axis=1), 1.0, atol=1e-6)


def test_zero_input_zero_conv_output():
    conv = Conv2d("c", 3, 4)
    params = {"c.weight": np.zeros((27, 4))}
    y = conv.forward(np.zeros((2, 8, 8, 3)), params, {}, "train", [], {})
    assert np.all(y == 0)
    # nonzero weights on zero input are still zero pre-normalization
    params = {"c.weight": np.ones((27, 4))}
    y = conv.forward(np.zeros((2, 8, 8, 3)), params, {}, "train", [], {})
    assert np.all(y == 0)


def test_eval_mode_deterministic_and_state_frozen():
    enc, params, state = make()
    x = rand_images(4, seed=1).astype(np.float64)
    f1, p1, s1 = enc.encode(params, state, x, "eval")
    f2, p2, s2 = enc.encode(params, state, x, "eval")
    assert np.array_equal(f1, f2) and np.array_equal(p1, p2)
    for k in state:
        assert np.array_equal(s1[k], state[k])
        assert np.array_equal(s2[k], state[k])


def test_train_mode_updates_running_stats():
    enc, params, state = make()
    x = rand_images(8, seed=2).astype(np.float64)
    _, _, new_state = enc.encode(params, state, x, "train")
    changed = [k for k in state if not np.array_equal(new_state[k], state[k])]
    assert changed  # every BN layer's statistics moved
    assert len(changed) == len(state)


def test_train_vs_eval_differ_only_via_norm_stats():
    enc, params, state = make()
    x = rand_images(8, seed=3).astype(np.float64)
    # warm up running statistics, then compare modes on the same batch
    for _ in range(5):
        _, _, state = enc.encode(params, state, x, "train")
    _, p_train, _ = enc.encode(params, state, x, "train")
    _, p_eval, _ = enc.encode(params, state, x, "eval")
    assert not np.array_equal(p_train, p_eval)
    # converge the running stats to this batch's statistics; after undoing
    # the unbiased-variance factor the two modes must agree exactly
    for _ in range(800):
        _, _, state = enc.encode(params, state, x, "train")
    spatial = {"b1": 16 * 16, "b2": 8 * 8, "b3": 4 * 4, "b4": 2 * 2}
    corrected = dict(state)
    for key in state:
        if key.endswith(".running_var"):
            n_eff = 8 * spatial[key.split(".")[0]]
            corrected[key] = state[key] * (n_eff - 1) / n_eff
    _, p_train, _ = enc.encode(params, state, x, "train")
    _, p_eval, _ = enc.encode(params, corrected, x, "eval")
    assert np.allclose(p_train, p_eval, atol=1e-9)


def test_shape_contract_errors():
    enc, params, state = make()
    with pytest.raises(ContractError):
        enc.encode(params, state, np.zeros((2, 16, 16)), "train")
    with pytest.raises(ContractError):
        enc.encode(params, state, np.zeros((2, 16, 16, 4)), "train")
    with pytest.raises(ContractError):
        enc.encode(params, state, np.zeros((2, 16, 16, 3)), "predict")


def test_prunable_keys_exclude_norm_and_bias():
    enc, params, _ = make()
    keys = enc.prunable_keys()
    assert keys == [f"b{i}.conv.weight" for i in (1, 2, 3, 4)]
    with_head = enc.prunable_keys(include_head=True)
    assert "head.fc1.weight" in with_head and "head.fc2.weight" in with_head
    for k in with_head:
        assert not k.endswith((".bias", ".gamma", ".beta"))


def test_spec_validation():
    with pytest.raises(InvalidSpecError):
        EncoderSpec(arch="vgg")
    with pytest.raises(InvalidSpecError):
        EncoderSpec(image_size=24)  # not divisible by 16
    with pytest.raises(InvalidSpecError):
        EncoderSpec(channels=(8, 16))


def gradcheck(spec, seed, n=4, checks=8):
    enc = Encoder(spec)
    params = enc.init_params(derive_rng(seed, "init"), dtype=np.float64)
    state = enc.init_norm_state(dtype=np.float64)
    rng = np.random.default_rng(seed)
    x = rng.random((n, spec.image_size, spec.image_size, 3))
    tgt = rng.standard_normal((n, spec.proj_dim))

    def loss_of(p):
        _, z, _ = enc.encode(p, state, x, "train")
        return float((z * tgt).sum())

    res = enc.forward(params, state, x, "train", want_cache=True)
    grads = enc.backward(tgt.copy(), res, params)
    h = 1e-6
    worst = 0.0
    for name in params:
        flat = params[name].reshape(-1)
        for _ in range(checks):
            i = rng.integers(flat.size)
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_of(params)
            flat[i] = orig - h
            lm = loss_of(params)
            flat[i] = orig
            fd = (lp - lm) / (2 * h)
            an = grads[name].reshape(-1)[i]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    return worst


def test_small4_full_network_gradient():
    assert gradcheck(TINY_ENCODER, seed=10) < 1e-4


def test_resnet18_full_network_gradient():
    spec = EncoderSpec(arch="resnet18", image_size=8, proj_hidden=8, proj_dim=4)
    assert gradcheck(spec, seed=11, n=3, checks=2) < 1e-4


def test_resnet18_shapes():
    spec = EncoderSpec(arch="resnet18", image_size=32, proj_hidden=64, proj_dim=32)
    enc = Encoder(spec)
    params = enc.init_params(derive_rng(0, "init"), dtype=np.float32)
    state = enc.init_norm_state(dtype=np.float32)
    f, z, _ = enc.encode(params, state, rand_images(2, size=32), "eval")
    assert f.shape == (2, 512) and z.shape == (2, 32)
