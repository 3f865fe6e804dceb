import itertools

import numpy as np
import pytest

from eadnet.autograd import ParamStore, Var, no_grad
from eadnet.cost import conv_param_count, mmrfc_total_params
from eadnet.layers import is_conv_param
from eadnet.mmrfc import (MAX_BASE_DILATION, MmrfcConfig, branch_receptive_field, branch_specs, build_mmrfc,
                          mmrfc_forward)

VALID_C = range(8, 129, 8)


def _block(c, dr=1, seed=0):
    store = ParamStore()
    return build_mmrfc(MmrfcConfig(c, dr), store, "m", np.random.default_rng(seed)), store


@pytest.mark.parametrize("c", VALID_C)
def test_registered_conv_params_equal_closed_form(c):
    _, store = _block(c)
    assert conv_param_count(store) == mmrfc_total_params(c)


def test_known_block_sizes():
    assert conv_param_count(_block(128)[1]) == 27360
    assert conv_param_count(_block(64)[1]) == 7152


def test_c8_branches_compress_to_one_channel():
    _, store = _block(8)
    for i in range(1, 5):
        assert store[f"m.b{i}.pw.weight"].value.shape == (1, 8, 1, 1)


def test_branch_layout():
    _, store = _block(32, dr=3)
    assert store["m.b1.conv3x1.weight"].value.shape == (4, 4, 3, 1)   # full conv
    assert store["m.b1.conv1x3.weight"].value.shape == (4, 4, 1, 3)
    for i in (2, 3, 4):                                               # depthwise
        assert store[f"m.b{i}.conv3x1.weight"].value.shape == (4, 1, 3, 1)
    assert store["m.fuse.dw.weight"].value.shape == (16, 1, 3, 3)
    assert store["m.fuse.pw.weight"].value.shape == (32, 32, 1, 1)


@pytest.mark.parametrize("c", [0, 4, 12, 136])
def test_invalid_channels(c):
    with pytest.raises(ValueError):
        MmrfcConfig(c)


@pytest.mark.parametrize("dr", [0, 7])
def test_invalid_dilation(dr):
    with pytest.raises(ValueError):
        MmrfcConfig(8, dr)


def test_dilation_pairs_and_bound():
    for dr in range(1, MAX_BASE_DILATION + 1):
        specs = branch_specs(dr)
        assert [(s.d1, s.d2) for s in specs] == [(1, 1), (dr, dr), (2 * dr, 4 * dr), (4 * dr, 2 * dr)]
        assert [s.depthwise for s in specs] == [False, True, True, True]
        assert max(max(s.d1, s.d2) for s in specs) == 4 * dr <= 24


def test_branch_receptive_field_examples():
    assert all(branch_receptive_field(branch_specs(dr)[0]) == (3, 3) for dr in range(1, 7))
    assert branch_receptive_field(branch_specs(6)[1]) == (13, 13)
    assert branch_receptive_field(branch_specs(6)[3]) == (49, 25)
    assert branch_receptive_field(branch_specs(6)[2]) == (25, 49)


@pytest.mark.parametrize("c,dr", list(itertools.product(VALID_C, range(1, 7))))
def test_forward_preserves_dims(c, dr):
    block, _ = _block(c, dr)
    x = np.random.default_rng(c + dr).standard_normal((1, c, 3, 5)).astype(np.float32)
    with no_grad():
        y, outs = block.forward(Var(x), return_branches=True)
    assert y.shape == x.shape
    assert sum(o.shape[1] for o in outs) == c // 2


def test_large_input_shape():
    block, _ = _block(128, 6)
    with no_grad():
        assert mmrfc_forward(block, np.zeros((1, 128, 32, 64), np.float32)).shape == (1, 128, 32, 64)


def test_zero_fusion_gives_zero_output():
    block, store = _block(16, 2)
    for name in ("m.fuse.pw.weight", "m.fuse.pw.bias", "m.fuse.bn.beta", "m.fuse.bn.running_mean"):
        store[name].value[...] = 0
    x = np.random.default_rng(0).standard_normal((2, 16, 6, 6)).astype(np.float32)
    with no_grad():
        assert np.all(block(x).value == 0)


def test_branch1_pointwise_ablation_is_local():
    block, store = _block(16, 2, seed=3)
    x = np.random.default_rng(1).standard_normal((1, 16, 8, 8)).astype(np.float32)
    with no_grad():
        _, before = block.forward(Var(x), return_branches=True)
        store["m.b1.pw.weight"].value[:, 5] = 0
        _, after = block.forward(Var(x), return_branches=True)
    assert not np.array_equal(before[0].value, after[0].value)
    for b, a in zip(before[1:], after[1:]):
        np.testing.assert_array_equal(b.value, a.value)


def test_channel_mismatch_rejected():
    block, _ = _block(16)
    with pytest.raises(ValueError):
        block(np.zeros((1, 8, 4, 4), np.float32))


def test_param_names_are_conv_or_aux():
    _, store = _block(16)
    conv = [p.name for p in store if is_conv_param(p.name)]
    assert len(conv) == 2 * (4 * 3 + 2)
