"""Acceptance suite: one PASS/FAIL/SKIP line per criterion.

Run with ``pytest tests/test_acceptance.py -v``. Criteria that need the FER
CSV read it from ``$ECNN_DATA`` and skip with a reason when it is unset. The
full-scale reproduction only runs when ``ECNN_FULL_RUN=1`` as well.
"""

import copy
import hashlib
import math
import os
import time
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from ecnn import checkpoint, data, evaluation, hog, visualization
from ecnn import layers as L
from ecnn.netspec import build_model
from ecnn.training import (
    TRAIN_PRESETS, TrainConfig, grad_check, sanity_initial_loss, sanity_overfit, train)

from conftest import FIXTURE, numeric_grad_array, numeric_grad_scalar, rel_error
from test_layers import conv_cases, naive_conv, naive_conv_backward

DATA = os.environ.get("ECNN_DATA")
FULL_RUN = os.environ.get("ECNN_FULL_RUN") == "1"
SEEDS = range(5)
_desk_runs = {}


@pytest.fixture
def line(capsys):
    def emit(n, title, ok, detail):
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
        with capsys.disabled():
            print(f"\n[criterion {n:>2}] {status} {title}: {detail}")
    return emit


def _needs_data(line, n, title):
    if not DATA:
        reason = "ECNN_DATA is not set; the FER CSV is required"
        line(n, title, None, reason)
        pytest.skip(reason)
    if not Path(DATA).is_file():
        reason = f"ECNN_DATA={DATA} does not exist"
        line(n, title, None, reason)
        pytest.skip(reason)


# 1 -------------------------------------------------------------------------------

def test_c01_initial_loss(line):
    t = time.perf_counter()
    reports = {p: sanity_initial_loss(p) for p in ("shallow", "deep")}
    elapsed = time.perf_counter() - t
    ok = all(r.passed for r in reports.values()) and elapsed < 5 * len(reports)
    detail = ", ".join(f"{p} loss {r.measured:.4f}" for p, r in reports.items())
    line(1, "initial loss within 0.05 of ln 7 = 1.9459", ok,
         f"{detail}; {elapsed / len(reports):.1f}s per model (limit 5s)")
    assert ok


# 2 -------------------------------------------------------------------------------

def test_c02_overfit(line):
    if DATA and Path(DATA).is_file():
        splits, source = data.load_fer_csv(DATA, {"train": 20, "val": 1, "test": 1}), "FER rows"
    else:
        splits, source = data.load_fer_csv(FIXTURE), "synthetic fixture rows"
    train_set = data.prepare(*splits, augment=False)[0]
    t = time.perf_counter()
    reports = {p: sanity_overfit(p, train_set, n_small=20) for p in ("shallow", "deep")}
    elapsed = time.perf_counter() - t
    ok = all(r.passed for r in reports.values()) and elapsed < 300
    detail = "; ".join(f"{p} loss {r.measured:.4f} ({r.detail})" for p, r in reports.items())
    line(2, "overfit 20 samples: 100% train accuracy, loss < 0.05", ok,
         f"{detail}; {elapsed:.0f}s total on {source} (limit 300s)")
    assert ok


# 3 -------------------------------------------------------------------------------

def _layer_errors(seed):
    r = np.random.default_rng(seed)
    errs = {}
    x, w, b = r.standard_normal((2, 3, 6, 6)), r.standard_normal((4, 3, 3, 3)), r.standard_normal(4)
    out, cache = L.conv_forward(x, w, b, 1, 1)
    dout = r.standard_normal(out.shape)
    dx, dw, db = L.conv_backward(dout, cache)
    errs["conv"] = max(
        rel_error(dx, numeric_grad_array(lambda v: L.conv_forward(v, w, b, 1, 1)[0], x, dout)),
        rel_error(dw, numeric_grad_array(lambda v: L.conv_forward(x, v, b, 1, 1)[0], w, dout)),
        rel_error(db, numeric_grad_array(lambda v: L.conv_forward(x, w, v, 1, 1)[0], b, dout)))

    x = r.standard_normal((4, 6))
    x[np.abs(x) < 1e-3] = 0.5
    dout = r.standard_normal(x.shape)
    errs["relu"] = rel_error(L.relu_backward(dout, L.relu_forward(x)[1]),
                             numeric_grad_array(lambda v: L.relu_forward(v)[0], x, dout))

    x = r.permutation(64).reshape(1, 4, 4, 4).astype(np.float64)
    dout = r.standard_normal((1, 4, 2, 2))
    errs["maxpool"] = rel_error(L.maxpool_backward(dout, L.maxpool_forward(x)[1]),
                                numeric_grad_array(lambda v: L.maxpool_forward(v)[0], x, dout))

    for name, fwd, bwd, shape in (
            ("batchnorm", L.batchnorm_forward, L.batchnorm_backward, (5, 4)),
            ("spatial batchnorm", L.spatial_batchnorm_forward, L.spatial_batchnorm_backward,
             (2, 4, 3, 3))):
        x = r.standard_normal(shape)
        g, be = r.standard_normal(4), r.standard_normal(4)
        dout = r.standard_normal(shape)

        def f(xv=x, gv=g, bv=be, fwd=fwd):
            return fwd(xv, gv, bv, L.BatchNormState.fresh(4), "train")[0]

        dx, dg, dbe = bwd(dout, fwd(x, g, be, L.BatchNormState.fresh(4), "train")[1])
        errs[name] = max(rel_error(dx, numeric_grad_array(lambda v: f(xv=v), x, dout)),
                         rel_error(dg, numeric_grad_array(lambda v: f(gv=v), g, dout)),
                         rel_error(dbe, numeric_grad_array(lambda v: f(bv=v), be, dout)))

    x = r.standard_normal((4, 5))
    dout = r.standard_normal(x.shape)

    def drop(v):
        return L.dropout_forward(v, 0.6, "train", np.random.default_rng(seed))[0]

    mask = L.dropout_forward(x, 0.6, "train", np.random.default_rng(seed))[1]
    errs["dropout"] = rel_error(L.dropout_backward(dout, mask), numeric_grad_array(drop, x, dout))

    x, w, b = r.standard_normal((3, 2, 2)), r.standard_normal((4, 5)), r.standard_normal(5)
    dout = r.standard_normal((3, 5))
    dx, dw, db = L.affine_backward(dout, L.affine_forward(x, w, b)[1])
    errs["affine"] = max(
        rel_error(dx, numeric_grad_array(lambda v: L.affine_forward(v, w, b)[0], x, dout)),
        rel_error(dw, numeric_grad_array(lambda v: L.affine_forward(x, v, b)[0], w, dout)),
        rel_error(db, numeric_grad_array(lambda v: L.affine_forward(x, w, v)[0], b, dout)))

    s, y = r.standard_normal((5, 7)), r.integers(0, 7, 5)
    errs["softmax loss"] = rel_error(L.softmax_loss(s, y)[1],
                                     numeric_grad_scalar(lambda v: L.softmax_loss(v, y)[0], s))
    errs["tiny model"] = max(grad_check("conv:2x3x3,pool|fc:4|input:8x8", seed=seed).values())
    return errs


def test_c03_gradient_fidelity(line):
    t = time.perf_counter()
    worst = {}
    for seed in SEEDS:
        for name, e in _layer_errors(seed).items():
            worst[name] = max(worst.get(name, 0.0), e)
    elapsed = time.perf_counter() - t
    ok = max(worst.values()) < 1e-4 and elapsed < 120
    name, e = max(worst.items(), key=lambda kv: kv[1])
    line(3, "finite-difference checks < 1e-4, 5 seeds each", ok,
         f"{len(worst)} ops, worst {name} {e:.2e}; {elapsed:.1f}s (limit 120s)")
    assert ok


# 4 -------------------------------------------------------------------------------

def test_c04_conv_oracle(line):
    worst = 0.0
    cases = conv_cases()
    for n, c, h, w_, f, k, stride, pad in cases:
        r = np.random.default_rng(n * 1000 + h * 10 + k)
        x, w, b = r.standard_normal((n, c, h, w_)), r.standard_normal((f, c, k, k)), r.standard_normal(f)
        out, cache = L.conv_forward(x, w, b, stride, pad)
        worst = max(worst, np.max(np.abs(out - naive_conv(x, w, b, stride, pad))))
        dout = r.standard_normal(out.shape)
        for got, want in zip(L.conv_backward(dout, cache),
                             naive_conv_backward(dout, x, w, stride, pad)):
            worst = max(worst, np.max(np.abs(got - want)))
    ok = worst < 1e-10
    line(4, "fast conv matches nested-loop oracle within 1e-10", ok,
         f"{len(cases)} random shape/stride/pad cases, max abs diff {worst:.1e}")
    assert ok


# 5 -------------------------------------------------------------------------------

def test_c05_batchnorm_statistics(line):
    r = np.random.default_rng(5)
    x = 4.0 + 3.0 * r.standard_normal((256, 10))
    # eps = 0 isolates the normalisation itself; with eps the variance is var/(var+eps)
    out, _ = L.batchnorm_forward(x, np.ones(10), np.zeros(10), L.BatchNormState.fresh(10, eps=0.0),
                                 "train")
    mean_err = np.max(np.abs(out.mean(axis=0)))
    var_err = np.max(np.abs(out.var(axis=0) - 1))
    xs = r.standard_normal((3, 4, 5, 6))
    g, b = r.standard_normal(4), r.standard_normal(4)
    sp, _ = L.spatial_batchnorm_forward(xs, g, b, L.BatchNormState.fresh(4), "train")
    flat, _ = L.batchnorm_forward(xs.transpose(0, 2, 3, 1).reshape(-1, 4), g, b,
                                  L.BatchNormState.fresh(4), "train")
    ref = flat.reshape(3, 5, 6, 4).transpose(0, 3, 1, 2)
    bitwise = np.ascontiguousarray(sp).tobytes() == np.ascontiguousarray(ref).tobytes()
    ok = mean_err < 1e-10 and var_err < 1e-8 and bitwise
    line(5, "batch-norm train statistics and spatial construction", ok,
         f"|mean| {mean_err:.1e}, |var-1| {var_err:.1e}, spatial bitwise equal: {bitwise}")
    assert ok


# 6 -------------------------------------------------------------------------------

def test_c06_hog_invariants(line):
    r = np.random.default_rng(6)
    lengths, shift_err, block_max = set(), 0.0, 0.0
    for _ in range(20):
        img = r.uniform(0, 255, (48, 48))
        v = hog.hog_extract(img)
        lengths.add(v.size)
        shift_err = max(shift_err, np.max(np.abs(v - hog.hog_extract(img + r.uniform(-80, 80)))))
        block_max = max(block_max, np.linalg.norm(v.reshape(25, 36), axis=1).max())
        assert np.array_equal(v, hog.hog_extract(img))
    zero = hog.hog_extract(np.zeros((48, 48)))
    ok = lengths == {900} and shift_err <= 1e-12 and not zero.any() and block_max <= 1 + 1e-9
    line(6, "HOG length, brightness invariance, zero image, block norms", ok,
         f"length {sorted(lengths)}, shift diff {shift_err:.1e}, zero image all-zero "
         f"{not zero.any()}, max block norm {block_max:.12f}")
    assert ok


# 7 -------------------------------------------------------------------------------

def test_c07_data_pipeline(line):
    train_raw, val_raw, test_raw = data.load_fer_csv(FIXTURE)
    usages = [row.rsplit(",", 1)[1] for row in FIXTURE.read_text().splitlines()[1:]]
    expected = (usages.count("Training"), usages.count("PublicTest"), usages.count("PrivateTest"))
    counts = (len(train_raw), len(val_raw), len(test_raw))
    aug = data.augment_hflip(train_raw)
    n = len(train_raw)
    involution = np.array_equal(aug.images[n:][..., ::-1], train_raw.images)
    tr, *_ = data.prepare(train_raw, val_raw, test_raw, augment=False)
    mean_err = np.max(np.abs(tr.images.mean(axis=0)))
    ok = counts == expected == (48, 8, 8) and len(aug) == 2 * n and involution and mean_err < 1e-9
    line(7, "fixture split mapping, flip augmentation, mean subtraction", ok,
         f"splits {counts}, augmented {len(aug)} = 2x{n}, flip involution {involution}, "
         f"post-normalisation |mean| {mean_err:.1e}")
    assert ok


# 10 ------------------------------------------------------------------------------

def test_c10_evaluation_integrity(line, tmp_path):
    r = np.random.default_rng(10)
    model = build_model("conv:4x3x3,sbn,pool|fc:16,bn|input:16x16", seed=1)
    x = r.standard_normal((300, 1, 16, 16))
    d = data.Dataset(x, r.integers(0, 7, 300), "test")
    acc, cm = evaluation.evaluate(model, d)
    exact = Fraction(int(np.trace(cm.counts)), cm.total) == \
        Fraction(int(np.sum(evaluation.predict(model, x) == d.labels)), len(d))
    trace_ok = exact and np.trace(cm.counts) / cm.total == acc
    rows_ok = np.array_equal(cm.counts.sum(axis=1), np.bincount(d.labels, minlength=7))
    path = tmp_path / "cm.csv"
    evaluation.write_confusion_csv(cm, path)
    back = evaluation.read_confusion_csv(path)
    lossless = np.array_equal(back.counts, cm.counts) and back.class_names == cm.class_names
    ok = trace_ok and rows_ok and lossless
    line(10, "confusion trace/N = accuracy, row sums, CSV round trip", ok,
         f"accuracy {acc:.4f}, trace/N exact {trace_ok}, row sums {rows_ok}, lossless {lossless}")
    assert ok


# 8 / 11 --------------------------------------------------------------------------

def _desk_run(tag):
    train_raw, val_raw, test_raw = data.load_fer_csv(DATA, {"train": 2000, "val": 500, "test": 1})
    tr, va, *_ = data.prepare(train_raw, val_raw, test_raw)
    cfg = replace(TRAIN_PRESETS["shallow"], epochs=15, seed=42, train_acc_samples=500)
    t = time.perf_counter()
    res = train("shallow", cfg, tr, va)
    elapsed = time.perf_counter() - t
    _desk_runs[tag] = (res, elapsed)
    return res, elapsed


@pytest.mark.dataset
def test_c08_desk_scale_learning(line):
    title = "shallow preset, 2000/500 FER subset, 15 epochs, val >= 35%"
    _needs_data(line, 8, title)
    res, elapsed = _desk_run("first")
    acc = res.history.val_acc_per_epoch[-1]
    ok = acc >= 0.35
    line(8, title, ok, f"final val {100 * acc:.1f}% (best {100 * res.best_val_acc:.1f}%), "
                       f"{elapsed / 60:.1f} min (target 30 min)")
    assert ok


@pytest.mark.dataset
def test_c09_full_scale(line):
    title = "full-scale reproduction (not a gate)"
    _needs_data(line, 9, title)
    if not FULL_RUN:
        reason = "multi-hour run; set ECNN_FULL_RUN=1 to enable"
        line(9, title, None, reason)
        pytest.skip(reason)
    splits = data.load_fer_csv(DATA)
    tr, va, te, norm, raw = data.prepare(*splits)
    hogs = [hog.hog_batch(raw.images), hog.hog_batch(splits[1].images),
            hog.hog_batch(splits[2].images)]
    targets = {"shallow": (0.55, 0.54), "deep": (0.65, 0.64)}
    acc = {}
    for preset in targets:
        for hybrid in (False, True):
            cfg = replace(TRAIN_PRESETS[preset], hybrid=hybrid)
            h = hogs if hybrid else [None] * 3
            res = train(preset, cfg, tr, va, h[0], h[1])
            acc[preset, hybrid] = (evaluation.evaluate(res.best_model, va, h[1])[0],
                                   evaluation.evaluate(res.best_model, te, h[2])[0])
    ok = all(abs(acc[p, False][i] - targets[p][i]) <= 0.05 for p in targets for i in (0, 1)) and \
        all(abs(acc[p, True][i] - acc[p, False][i]) <= 0.02 for p in targets for i in (0, 1))
    detail = "; ".join(f"{p}{'+hog' if h else ''} val {100 * v:.1f}% test {100 * t:.1f}%"
                       for (p, h), (v, t) in acc.items())
    gain = acc["deep", False][0] - acc["shallow", False][0]
    detail += (f"; deep - shallow val: {100 * gain:+.2f} points, "
               f"{100 * gain / acc['shallow', False][0]:+.2f}% relative")
    line(9, title, ok, detail)


@pytest.mark.dataset
def test_c11_determinism_fer(line, tmp_path):
    title = "two seeded desk-scale runs are bitwise identical"
    _needs_data(line, 11, title)
    first = _desk_runs.get("first") or _desk_run("first")
    second = _desk_run("second")
    blobs = []
    for k, (res, _) in enumerate((first, second)):
        d = tmp_path / str(k)
        d.mkdir()
        res.history.write_csv(d)
        blobs.append([(d / "history.csv").read_bytes(), (d / "epochs.csv").read_bytes(),
                      checkpoint.dumps(res.model), checkpoint.dumps(res.best_model)])
    ok = blobs[0] == blobs[1]
    line(11, title, ok, "history, epoch table and checkpoints compared byte for byte")
    assert ok


def test_c11_determinism_synthetic(line, tmp_path):
    # same check on synthetic data so determinism is exercised without the FER file
    tr = data.synthetic_faces(300, seed=11)
    va = data.synthetic_faces(60, seed=12, split="val")
    tr, va, *_ = data.prepare(tr, va, va)
    cfg = replace(TRAIN_PRESETS["shallow"], epochs=2, seed=42, train_acc_samples=100)
    blobs = []
    for k in range(2):
        res = train("shallow", cfg, tr, va)
        d = tmp_path / str(k)
        d.mkdir()
        res.history.write_csv(d)
        blobs.append([(d / "history.csv").read_bytes(), (d / "epochs.csv").read_bytes(),
                      checkpoint.dumps(res.model), checkpoint.dumps(res.best_model)])
    ok = blobs[0] == blobs[1]
    line(11, "determinism on a synthetic stand-in (shallow preset, 2 epochs)", ok,
         "history, epoch table and checkpoints compared byte for byte")
    assert ok


# 12 ------------------------------------------------------------------------------

def test_c12_visualization_formats(line, tmp_path):
    pgm = tmp_path / "g.pgm"
    visualization.write_pgm(np.array([[0, 255], [128, 64]], dtype=np.uint8), pgm)
    golden = pgm.read_bytes() == b"P5\n2 2\n255\n\x00\xff\x80\x40"

    model = build_model("conv:4x3x3,sbn,pool|conv:4x3x3,pool|fc:8", seed=2)
    ckpt = tmp_path / "m.ckpt"
    checkpoint.save(model, ckpt)
    digest = hashlib.sha256(ckpt.read_bytes()).hexdigest()
    loaded = checkpoint.load(ckpt)
    img = np.random.default_rng(12).uniform(0, 255, (1, 48, 48))
    identity = visualization.deepdream(loaded, img, 2, 0).tobytes() == img.tobytes()
    visualization.capture_activations(loaded, img)
    visualization.deepdream(loaded, img, 2, 3)
    visualization.render_grid(visualization.first_layer_filters(loaded), 8)
    untouched = hashlib.sha256(ckpt.read_bytes()).hexdigest() == digest and \
        checkpoint.dumps(loaded) == ckpt.read_bytes()
    ok = golden and identity and untouched
    line(12, "PGM golden bytes, zero-step DeepDream, checkpoints untouched", ok,
         f"golden {golden}, identity {identity}, checksum unchanged {untouched}")
    assert ok
