import numpy as np
import pytest

from eadnet.autograd import no_grad
from eadnet.network import (EadnetConfig, Model, build_eadnet, default_schedule, eadnet_graph, forward,
                            load_model, load_weights, predict, save_weights)
from eadnet.serialize import MAGIC, WeightFormatError, dump_tensors, load_tensors, read_tensors, write_tensors

TOY = EadnetConfig(num_classes=4, stage_channels=(8, 16, 32), n1=2, n2=2)


@pytest.fixture(scope="module")
def default_model():
    return build_eadnet(EadnetConfig(), seed=0)


def test_output_at_input_resolution(default_model):
    y = forward(default_model, np.random.default_rng(0).random((1, 3, 64, 128)))
    assert y.shape == (1, 19, 64, 128)
    assert np.all(np.isfinite(y))


def test_score_map_before_upsampling(default_model):
    with no_grad():
        acts = default_model(np.zeros((1, 3, 64, 128), np.float32), return_all=True)
    assert acts["classifier"].shape == (1, 19, 8, 16)
    assert acts["cat"].shape[1] == 16 + 64 + 128


@pytest.mark.parametrize("h,w", [(8, 8), (8, 16), (16, 8), (16, 64), (64, 64), (128, 8)])
def test_shape_contract_small(h, w):
    model = build_eadnet(TOY)
    assert forward(model, np.zeros((1, 3, h, w))).shape == (1, 4, h, w)


@pytest.mark.parametrize("h,w", [(12, 16), (16, 20), (7, 8)])
def test_rejects_sizes_not_divisible_by_8(h, w):
    with pytest.raises(ValueError):
        forward(build_eadnet(TOY), np.zeros((1, 3, h, w)))


def test_zero_weights_predict_class_zero():
    model = build_eadnet(TOY)
    for p in model.store:
        if p.name.endswith((".weight", ".bias", ".beta", ".running_mean")):
            p.value[...] = 0
    x = np.random.default_rng(0).random((1, 3, 16, 16))
    assert np.all(forward(model, x) == 0)
    assert np.all(predict(model, x) == 0)


def test_batch_invariance():
    model = build_eadnet(TOY, seed=5)
    x = np.random.default_rng(0).random((1, 3, 32, 32)).astype(np.float32)
    y = forward(model, np.concatenate([x, x]))
    np.testing.assert_array_equal(y[0], y[1])
    np.testing.assert_allclose(y[:1], forward(model, x), atol=1e-6)


def test_config_validation():
    with pytest.raises(ValueError):
        EadnetConfig(stage_channels=(16, 64, 136))
    with pytest.raises(ValueError):
        EadnetConfig(n1=2, dr_schedule_stage2=(1, 2, 3))
    with pytest.raises(ValueError):
        EadnetConfig(n1=2, dr_schedule_stage2=(1, 7))
    with pytest.raises(ValueError):
        EadnetConfig(stage_channels=(16, 12, 128))


def test_default_schedules():
    cfg = EadnetConfig()
    assert cfg.dr_schedule_stage2 == (1, 1, 2, 2, 4, 4)
    assert cfg.dr_schedule_stage3 == (1, 2, 4, 6, 1, 2, 4, 6, 6)
    assert default_schedule(0, 3) == ()
    assert max(default_schedule(20, 3)) <= 6 and len(default_schedule(20, 3)) == 20


def test_dilations_bounded_network_wide():
    model = build_eadnet(EadnetConfig())
    for layer in model.spec:
        if layer.kind == "mmrfc":
            assert 4 * layer["dilation"] <= 24


def test_no_mmrfc_network():
    cfg = EadnetConfig(num_classes=3, n1=0, n2=0)
    assert [l.kind for l in eadnet_graph(cfg)].count("mmrfc") == 0
    assert forward(build_eadnet(cfg), np.zeros((1, 3, 16, 16))).shape == (1, 3, 16, 16)


# weight files

def test_save_load_bitwise(tmp_path):
    model = build_eadnet(TOY, seed=3)
    path = tmp_path / "w.eadw"
    save_weights(model.store, path)
    store = load_weights(path, model.spec)
    assert store.names() == model.store.names()
    for p in model.store:
        assert store[p.name].value.tobytes() == p.value.tobytes()
        assert store[p.name].trainable == p.trainable
    again = tmp_path / "w2.eadw"
    save_weights(store, again)
    assert path.read_bytes() == again.read_bytes()
    x = np.random.default_rng(0).random((1, 3, 16, 16))
    np.testing.assert_array_equal(forward(load_model(path, model.spec), x), forward(model, x))


def test_truncated_file_rejected(tmp_path):
    data = dump_tensors(build_eadnet(TOY).store.state_dict())
    for cut in (3, 10, len(data) // 2, len(data) - 1):
        with pytest.raises(WeightFormatError, match="truncated|magic"):
            load_tensors(data[:cut])


def test_renamed_tensor_reports_missing_parameter(tmp_path):
    model = build_eadnet(TOY)
    tensors = model.store.state_dict()
    renamed = {("cc1.conv.weightX" if k == "cc1.conv.weight" else k): v for k, v in tensors.items()}
    path = tmp_path / "w.eadw"
    write_tensors(path, renamed)
    with pytest.raises(WeightFormatError, match="missing parameter 'cc1.conv.weight'"):
        load_weights(path, model.spec)


def test_dim_mismatch_and_extra_tensor(tmp_path):
    model = build_eadnet(TOY)
    tensors = model.store.state_dict()
    other = build_eadnet(EadnetConfig(num_classes=5, stage_channels=(8, 16, 32), n1=2, n2=2)).spec
    path = tmp_path / "w.eadw"
    write_tensors(path, tensors)
    with pytest.raises(WeightFormatError, match="dims"):
        load_weights(path, other)
    write_tensors(path, {**tensors, "stray": np.zeros(2, np.float32)})
    with pytest.raises(WeightFormatError, match="unexpected parameter 'stray'"):
        load_weights(path, model.spec)


def test_format_header_checks():
    good = dump_tensors({"a": np.arange(6, dtype=np.float32).reshape(2, 3)})
    assert good[:4] == MAGIC
    assert load_tensors(good)["a"].shape == (2, 3)
    with pytest.raises(WeightFormatError, match="magic"):
        load_tensors(b"XXXX" + good[4:])
    with pytest.raises(WeightFormatError, match="version"):
        load_tensors(good[:4] + (2).to_bytes(4, "little") + good[8:])
    with pytest.raises(WeightFormatError, match="trailing"):
        load_tensors(good + b"\0")


def test_read_write_tensors(tmp_path):
    t = {"x": np.float32([1.5, -2.0]), "y": np.zeros((1, 2, 3, 1), np.float32)}
    write_tensors(tmp_path / "t", t)
    back = read_tensors(tmp_path / "t")
    assert list(back) == ["x", "y"]
    np.testing.assert_array_equal(back["x"], t["x"])
