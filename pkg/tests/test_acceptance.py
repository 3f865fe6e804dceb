"""Acceptance criteria, one test each.

Every test records a ``PASS``/``FAIL`` line; the lines are echoed in the
terminal summary (see ``conftest.py``) and when the file is run directly.
"""
import itertools
import json
import math
import sys
import time
from fractions import Fraction

import numpy as np
import pytest

from eadnet import gradcheck
from eadnet.autograd import ParamStore, Var, no_grad
from eadnet.cost import CostReport, analyze_graph, conv_param_count, mmrfc_total_params, plain_conv3x3_params
from eadnet.footprint import verify_branches
from eadnet.mmrfc import MmrfcConfig, branch_receptive_field, branch_specs, build_mmrfc
from eadnet.netpbm import load_pgm_labels, load_ppm, write_pgm, write_ppm
from eadnet.network import EadnetConfig, build_eadnet, eadnet_graph, forward, load_weights, save_weights
from eadnet.optim import PolySchedule, poly_lr
from eadnet.synth import synth_dataset
from eadnet.tensor import ConvParams, conv2d, conv2d_naive
from eadnet.train import TrainConfig, evaluate, train

RESULTS: dict[int, str] = {}

# toy-training run for criterion 4
TOY_ITERS, TOY_LR, TOY_BATCH, TOY_SEED = 2000, 1e-2, 16, 42
TOY_TRAIN, TOY_HELD_OUT = (42, 200), (4242, 64)


def record(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


def test_criterion_01_block_params_exact():
    closed = mmrfc_total_params(128)
    mismatched = []
    for c in range(8, 129, 8):
        store = ParamStore()
        build_mmrfc(MmrfcConfig(c, 1), store, "m", np.random.default_rng(c))
        if conv_param_count(store) != mmrfc_total_params(c):
            mismatched.append(c)
    record(1, closed == 27360 and not mismatched,
           f"mmrfc_total_params(128) = {closed} (want 27360); built blocks C=8..128 mismatched at {mismatched or 'none'}")


def test_criterion_02_one_fifth_of_dense_conv():
    dense = plain_conv3x3_params(128)
    ratio = Fraction(27360, dense)
    record(2, dense == 147584 and Fraction(18, 100) <= ratio <= Fraction(21, 100),
           f"27360 / {dense} = {float(ratio):.4f} in [0.18, 0.21]")


def test_criterion_03_budget():
    r = analyze_graph(eadnet_graph(), (1024, 2048))
    ok = 300_000 <= r.total_params <= 400_000 and 15e9 <= r.total_flops <= 22e9
    record(3, ok, f"params {r.total_params:,} in [0.30M, 0.40M]; FLOPs {r.total_flops / 1e9:.2f}G in [15G, 22G]")


@pytest.mark.slow
def test_criterion_04_toy_training():
    train_set = synth_dataset(TOY_TRAIN[0], TOY_TRAIN[1], 64, 4)
    held_out = synth_dataset(TOY_HELD_OUT[0], TOY_HELD_OUT[1], 64, 4)
    model = build_eadnet(EadnetConfig(num_classes=4), seed=TOY_SEED)
    t0 = time.perf_counter()
    hist = train(model, train_set, TrainConfig(iters=TOY_ITERS, base_lr=TOY_LR, batch=TOY_BATCH, seed=TOY_SEED))
    minutes = (time.perf_counter() - t0) / 60
    m_train = evaluate(model, train_set, 4)[0]
    m_test = evaluate(model, held_out, 4)[0]
    final = float(np.mean([r.loss for r in hist[-50:]]))
    ok = m_train > 0.90 and m_test > 0.80 and final < hist[0].loss / 5
    record(4, ok, f"train mIoU {m_train:.4f} > 0.90, held-out mIoU {m_test:.4f} > 0.80, "
                  f"loss {hist[0].loss:.3f} -> {final:.3f}, {TOY_ITERS} iters in {minutes:.1f} min")


def test_criterion_05_gradients():
    worst, failed = {}, []
    for op in gradcheck.CASES:
        r = gradcheck.check_op(op, instances=20, seed=0)
        worst[op] = r.max_rel_error
        if not (r.passed and r.instances >= 20 and r.max_rel_error < 1e-3):
            failed.append(op)
    top = max(worst, key=worst.get)
    record(5, not failed, f"{len(worst)} ops x 20 instances, worst {top} {worst[top]:.2e} < 1e-3; "
                          f"failed: {failed or 'none'}")


def test_criterion_06_conv_oracle():
    rng = np.random.default_rng(6)
    kernels, dilations, strides = [(1, 1), (3, 1), (1, 3), (3, 3)], [1, 2, 6, 12, 24], [1, 2]
    cases, worst = 0, 0.0
    for (k, d, depthwise, s), rep in itertools.product(
            itertools.product(kernels, dilations, (False, True), strides), range(2)):
        c = int(rng.integers(1, 4)) * (1 if depthwise else 2)
        oc = c if depthwise else int(rng.integers(1, 4))
        groups = c if depthwise else 1
        h, w = (int(v) for v in rng.integers(3, 10, size=2))
        p = ConvParams.same(k, dilation=d, stride=s, groups=groups)
        x = rng.standard_normal((int(rng.integers(1, 3)), c, h, w)).astype(np.float32)
        wt = rng.standard_normal((oc, c // groups, *k)).astype(np.float32)
        b = rng.standard_normal(oc).astype(np.float32)
        worst = max(worst, float(np.abs(conv2d(x, wt, b, p) - conv2d_naive(x, wt, b, p)).max()))
        cases += 1
    record(6, cases >= 100 and worst < 1e-5, f"{cases} cases over the full grid, max |diff| {worst:.1e} < 1e-5")


def test_criterion_07_receptive_fields():
    checks = verify_branches(range(1, 7))
    bad = [(c.dilation, c.index) for c in checks if not c.ok]
    rects = [branch_receptive_field(s) for s in branch_specs(6)]
    expect = [(2 * s.d1 + 1, 2 * s.d2 + 1) for s in branch_specs(6)]
    ok = not bad and rects == expect and (49, 25) in rects and (25, 49) in rects and len(checks) == 24
    record(7, ok, f"{len(checks)} branch footprints (dr 1..6) equal analytic rectangles; dr=6 {rects}; "
                  f"mismatches {bad or 'none'}")


def test_criterion_08_poly_schedule():
    base, max_iter = 5e-4, 2000
    sched = PolySchedule(base, max_iter)
    its = [0, max_iter // 4, max_iter // 2, 3 * max_iter // 4, max_iter]
    err = max(abs(poly_lr(sched, i) - base * (1 - i / max_iter) ** 0.9) for i in its)
    record(8, err <= 1e-12, f"poly_lr at {its} within {err:.1e} of base*(1-i/max)^0.9")


def test_criterion_09_shapes():
    model = build_eadnet(EadnetConfig(num_classes=19), seed=0)
    bad = []
    for h, w in itertools.product((8, 16, 64, 128), repeat=2):
        y = forward(model, np.zeros((1, 3, h, w), np.float32))
        if y.shape != (1, 19, h, w):
            bad.append((h, w, y.shape))
    for c, dr in itertools.product(range(8, 129, 8), range(1, 7)):
        block = build_mmrfc(MmrfcConfig(c, dr), ParamStore(), "m", np.random.default_rng(dr))
        with no_grad():
            y = block(Var(np.ones((1, c, 5, 3), np.float32)))
        if y.shape != (1, c, 5, 3):
            bad.append((c, dr, y.shape))
    record(9, not bad, f"16 input sizes x 19 classes and 96 (C, dr) blocks keep their shapes; bad {bad or 'none'}")


def test_criterion_10_serialization(tmp_path):
    problems = []
    model = build_eadnet(EadnetConfig(num_classes=4), seed=3)
    save_weights(model.store, tmp_path / "w.bin")
    back = load_weights(tmp_path / "w.bin")
    if sorted(p.name for p in back) != sorted(p.name for p in model.store) or any(
            back[p.name].value.tobytes() != p.value.tobytes() or back[p.name].value.dtype != p.value.dtype
            for p in model.store):
        problems.append("weights")
    report = analyze_graph(eadnet_graph(), (1024, 2048))
    text = report.to_json()
    if CostReport.from_json(text) != report or CostReport.from_json(text).to_json() != text:
        problems.append("cost report")
    if json.loads(text)["total_params"] != report.total_params:
        problems.append("cost json")
    img = np.random.default_rng(0).random((1, 3, 16, 24)).astype(np.float32)
    write_ppm(img, tmp_path / "i.ppm")
    if np.abs(load_ppm(tmp_path / "i.ppm") - img).max() > 0.5 / 255 + 1e-7:
        problems.append("ppm")
    labels = np.random.default_rng(1).integers(0, 4, (16, 24)).astype(np.uint8)
    labels[0, :3] = 255
    write_pgm(labels, tmp_path / "l.pgm")
    if not np.array_equal(load_pgm_labels(tmp_path / "l.pgm"), labels):
        problems.append("pgm")
    record(10, not problems, f"weights bitwise, CostReport JSON, PPM (<= 1/255) and PGM round trips; "
                             f"failed: {problems or 'none'}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
