import math

import numpy as np
import pytest

from eadnet.netpbm import write_pgm, write_ppm
from eadnet.network import EadnetConfig, build_eadnet
from eadnet.optim import PolySchedule, poly_lr
from eadnet.synth import synth_dataset
from eadnet.train import (TrainConfig, TrainingError, evaluate, load_dataset_dir, read_loss_log, train,
                          write_loss_log)

TOY = EadnetConfig(num_classes=3, stage_channels=(8, 16, 32), n1=1, n2=1)


def test_short_run_follows_schedule_and_learns():
    data = synth_dataset(0, 8, 32, num_classes=3)
    model = build_eadnet(TOY, seed=1)
    cfg = TrainConfig(iters=40, base_lr=5e-3, batch=4, seed=0)
    hist = train(model, data, cfg)
    assert [r.iter for r in hist] == list(range(40))
    assert hist[0].lr == 5e-3
    sched = PolySchedule(5e-3, 40)
    assert all(r.lr == poly_lr(sched, r.iter) for r in hist)
    assert np.mean([r.loss for r in hist[-5:]]) < hist[0].loss


def test_zero_iters_keeps_initialisation():
    model = build_eadnet(TOY, seed=2)
    before = model.store.state_dict()
    assert train(model, synth_dataset(0, 2, 16, 3), TrainConfig(iters=0)) == []
    for k, v in model.store.state_dict().items():
        np.testing.assert_array_equal(v, before[k])


def test_training_is_deterministic():
    data = synth_dataset(0, 4, 16, 3)
    runs = []
    for _ in range(2):
        model = build_eadnet(TOY, seed=3)
        train(model, data, TrainConfig(iters=3, base_lr=1e-3, batch=2, seed=9))
        runs.append(model.store.state_dict())
    for k in runs[0]:
        np.testing.assert_array_equal(runs[0][k], runs[1][k])


def test_empty_dataset_rejected():
    with pytest.raises(TrainingError):
        train(build_eadnet(TOY), [], TrainConfig(iters=1))


def test_non_finite_loss_aborts():
    model = build_eadnet(TOY)
    model.store["classifier.bias"].value[0] = np.inf
    with pytest.raises(TrainingError, match="non-finite"):
        train(model, synth_dataset(0, 2, 16, 3), TrainConfig(iters=2))


def test_evaluate_returns_consistent_metrics():
    data = synth_dataset(0, 3, 16, 3)
    m, per, cm = evaluate(build_eadnet(TOY), data, 3)
    assert cm.total == 3 * 16 * 16
    assert 0 <= m <= 1 and per.shape == (3,)


def test_loss_log_round_trip(tmp_path):
    hist = train(build_eadnet(TOY), synth_dataset(0, 2, 16, 3), TrainConfig(iters=3, batch=2))
    write_loss_log(hist, tmp_path / "log.csv")
    assert (tmp_path / "log.csv").read_text().splitlines()[0] == "iter,lr,loss"
    assert read_loss_log(tmp_path / "log.csv") == hist


def test_dataset_directory(tmp_path):
    for i, s in enumerate(synth_dataset(0, 3, 16, 3)):
        write_ppm(s.image, tmp_path / f"s{i}.ppm")
        write_pgm(s.labels, tmp_path / f"s{i}.pgm")
    loaded = load_dataset_dir(tmp_path)
    assert len(loaded) == 3 and loaded[0].labels.shape == (16, 16)
    (tmp_path / "orphan.ppm").write_bytes((tmp_path / "s0.ppm").read_bytes())
    with pytest.raises(FileNotFoundError):
        load_dataset_dir(tmp_path)
