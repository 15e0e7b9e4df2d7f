"""Acceptance suite: one test per contract criterion, at stated tolerances.

Run `pytest -v tests/test_acceptance.py` for one line per criterion, or
`pytest -s` to see the explicit PASS lines. The end-to-end learning
criteria train a small network once (session fixture) and reuse it.
"""

import json
import time

import numpy as np
import pytest

from cordseg import cli, dataset_io, postprocess, tiling, unet
from cordseg import tensor_core as tc

from oracles import (
    conv2d_loops,
    dilate_loops,
    erode_loops,
    fd_gradient,
    flood_fill_labels,
    max_rel_err,
    maxpool2x2_loops,
    upconv2x2_loops,
)


def report(name):
    print(f"\nACCEPTANCE {name}: PASS")


# ---------------------------------------------------------------------------
# session fixtures: synthetic datasets and one trained desk-scale model
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def datasets(workdir):
    data = workdir / "data"
    rc = cli.main(
        ["synth", "--train", "120", "--test", "30", "--seed", "7",
         "--full", "15", "--full-width", "768", "--full-height", "512",
         "--out", str(data)]
    )
    assert rc == 0
    return {
        "tiles": data / "manifest.json",
        "full": data / "full" / "manifest.json",
    }


@pytest.fixture(scope="session")
def desk_model(workdir, datasets, timings):
    weights_path = workdir / "desk.weights"
    t0 = time.monotonic()
    rc = cli.main(
        ["train", "--manifest", str(datasets["tiles"]), "--epochs", "30",
         "--seed", "0", "--out", str(weights_path)]
    )
    timings["train"] = time.monotonic() - t0
    assert rc == 0
    return weights_path


@pytest.fixture(scope="session")
def timings():
    return {}


# ---------------------------------------------------------------------------
# layer oracle equivalence
# ---------------------------------------------------------------------------


def test_criterion_layer_oracles_match_naive_loops():
    rng = np.random.default_rng(2024)
    t0 = time.monotonic()
    for _ in range(100):
        n = int(rng.integers(1, 3))
        ic, oc = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        kh = int(rng.choice([1, 3]))
        h, w = int(rng.integers(kh, 9)), int(rng.integers(kh, 9))
        x = rng.uniform(-1, 1, (n, ic, h, w)).astype(np.float32)
        p = tc.ConvParams(
            rng.uniform(-1, 1, (oc, ic, kh, kh)).astype(np.float32),
            rng.uniform(-1, 1, oc).astype(np.float32),
        )
        padding = "same" if rng.random() < 0.5 else "valid"
        got = tc.conv2d(x, p, padding)
        assert np.abs(got - conv2d_loops(x, p.kernel, p.bias, padding)).max() < 1e-6

    for _ in range(100):
        n = int(rng.integers(1, 3))
        ic, oc = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        h, w = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        x = rng.uniform(-1, 1, (n, ic, h, w)).astype(np.float32)
        p = tc.ConvParams(
            rng.uniform(-1, 1, (oc, ic, 2, 2)).astype(np.float32),
            rng.uniform(-1, 1, oc).astype(np.float32),
        )
        got = tc.upconv2x2(x, p)
        assert np.abs(got - upconv2x2_loops(x, p.kernel, p.bias)).max() < 1e-6

    for _ in range(100):
        n, c = int(rng.integers(1, 3)), int(rng.integers(1, 4))
        h, w = 2 * int(rng.integers(1, 6)), 2 * int(rng.integers(1, 6))
        x = rng.uniform(-1, 1, (n, c, h, w)).astype(np.float32)
        out, _ = tc.maxpool2x2(x)
        np.testing.assert_array_equal(out, maxpool2x2_loops(x))

    elapsed = time.monotonic() - t0
    assert elapsed < 60
    report(f"layer oracle equivalence (300 cases, {elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# gradient correctness
# ---------------------------------------------------------------------------


def _per_layer_gradcheck(rng):
    worst = 0.0
    # conv2d: kernel, bias and input gradients against a linear readout
    for _ in range(8):
        ic, oc = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        h = int(rng.integers(4, 7))
        x = rng.uniform(-1, 1, (1, ic, h, h))
        p = tc.ConvParams(rng.uniform(-1, 1, (oc, ic, 3, 3)), rng.uniform(-1, 1, oc))
        readout = rng.uniform(-1, 1, (1, oc, h, h))

        def scalar():
            return float((tc.conv2d(x, p, "same") * readout).sum())

        gx, gk, gb = tc.conv2d_backward(x, p, readout, "same")
        worst = max(worst, max_rel_err(gk, fd_gradient(scalar, p.kernel)))
        worst = max(worst, max_rel_err(gb, fd_gradient(scalar, p.bias)))
        worst = max(worst, max_rel_err(gx, fd_gradient(scalar, x)))
    # upconv2x2
    for _ in range(6):
        ic, oc = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        h = int(rng.integers(2, 5))
        x = rng.uniform(-1, 1, (1, ic, h, h))
        p = tc.ConvParams(rng.uniform(-1, 1, (oc, ic, 2, 2)), rng.uniform(-1, 1, oc))
        readout = rng.uniform(-1, 1, (1, oc, 2 * h, 2 * h))

        def scalar():
            return float((tc.upconv2x2(x, p) * readout).sum())

        gx, gk, gb = tc.upconv2x2_backward(x, p, readout)
        worst = max(worst, max_rel_err(gk, fd_gradient(scalar, p.kernel)))
        worst = max(worst, max_rel_err(gb, fd_gradient(scalar, p.bias)))
        worst = max(worst, max_rel_err(gx, fd_gradient(scalar, x)))
    # maxpool: inputs kept away from window ties
    for _ in range(4):
        h = 2 * int(rng.integers(2, 5))
        x = rng.permutation(h * h).reshape(1, 1, h, h).astype(np.float64)
        readout = rng.uniform(-1, 1, (1, 1, h // 2, h // 2))

        def scalar():
            return float((tc.maxpool2x2(x)[0] * readout).sum())

        out, rec = tc.maxpool2x2(x)
        gx = tc.maxpool2x2_backward(rec, readout)
        worst = max(worst, max_rel_err(gx, fd_gradient(scalar, x, h=0.25)))
    # relu, away from the kink
    for _ in range(4):
        x = rng.uniform(0.05, 1, (1, 2, 4, 4)) * rng.choice([-1.0, 1.0], (1, 2, 4, 4))
        readout = rng.uniform(-1, 1, x.shape)

        def scalar():
            return float((tc.relu(x) * readout).sum())

        gx = tc.relu_backward(x, readout)
        worst = max(worst, max_rel_err(gx, fd_gradient(scalar, x, h=1e-4)))
    # sigmoid + bce chain
    for _ in range(4):
        z = rng.uniform(-2, 2, (1, 1, 4, 4))
        t = (rng.random((1, 1, 4, 4)) > 0.5).astype(np.float64)

        def scalar():
            return tc.bce_loss(tc.sigmoid(z), t)[0]

        probs = tc.sigmoid(z)
        loss, gp = tc.bce_loss(probs, t)
        gz = tc.sigmoid_backward(probs, gp)
        worst = max(worst, max_rel_err(gz, fd_gradient(scalar, z)))
    return worst


def test_criterion_gradient_correctness():
    t0 = time.monotonic()
    rng = np.random.default_rng(77)
    per_layer_worst = _per_layer_gradcheck(rng)
    assert per_layer_worst < 1e-3

    # full network at depth 1, base 2, tile 8; biases jittered off the relu
    # kink so the loss is differentiable at the checkpoint
    cfg = unet.UNetConfig(depth=1, base_channels=2, tile=8)
    weights = {
        name: tc.ConvParams(p.kernel.astype(np.float64), rng.normal(0, 0.05, p.bias.shape))
        for name, p in unet.build(cfg, seed=1).items()
    }
    x = rng.normal(size=(1, 1, 8, 8))
    target = (rng.random((1, 1, 8, 8)) > 0.5).astype(np.float64)
    _, grads = unet.loss_and_grads(weights, cfg, x, target)
    flat = unet.flatten_params(weights)

    def loss():
        return unet.loss_and_grads(unet.unflatten_params(flat), cfg, x, target)[0]

    full_worst = 0.0
    for name, arr in flat.items():
        fd = fd_gradient(loss, arr, h=1e-5)
        full_worst = max(full_worst, max_rel_err(grads[name], fd))
    assert full_worst < 1e-2

    elapsed = time.monotonic() - t0
    assert elapsed < 120
    report(
        f"gradient correctness (per-layer {per_layer_worst:.2e}, "
        f"full net {full_worst:.2e}, {elapsed:.1f}s)"
    )


# ---------------------------------------------------------------------------
# architecture fidelity
# ---------------------------------------------------------------------------


def test_criterion_architecture_fidelity():
    assert unet.conv_layer_count(unet.FULL_SCALE_CONFIG) == 23
    weights = unet.build(unet.FULL_SCALE_CONFIG, seed=0)
    assert len(weights) == 23
    x = np.random.default_rng(0).random((1, 1, 256, 256), dtype=np.float32)
    out = unet.forward(weights, unet.FULL_SCALE_CONFIG, x)
    assert out.shape == (1, 1, 256, 256)
    assert ((out > 0) & (out < 1)).all()
    report("architecture fidelity (23 conv layers, 256x256 forward)")


# ---------------------------------------------------------------------------
# tiling
# ---------------------------------------------------------------------------


def test_criterion_tiling_round_trip():
    t0 = time.monotonic()
    rng = np.random.default_rng(5)
    img = rng.integers(0, 256, (2700, 3840), dtype=np.uint8)
    grid, tiles = tiling.split(img, 256)
    assert (grid.columns, grid.rows) == (15, 11)
    assert (grid.pad_right, grid.pad_bottom) == (0, 116)
    np.testing.assert_array_equal(tiling.stitch(grid, tiles), img)

    for _ in range(50):
        w = int(rng.integers(1, 700))
        h = int(rng.integers(1, 700))
        side = int(rng.choice([16, 32, 64, 128]))
        small = rng.integers(0, 256, (h, w), dtype=np.uint8)
        g, t = tiling.split(small, side)
        np.testing.assert_array_equal(tiling.stitch(g, t), small)

    elapsed = time.monotonic() - t0
    assert elapsed < 60
    report(f"tiling round trip (15x11 grid, 116 px pad, 50 random dims, {elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# post-processing oracles
# ---------------------------------------------------------------------------


def test_criterion_postprocess_oracles():
    rng = np.random.default_rng(31)
    for i in range(200):
        h, w = int(rng.integers(1, 18)), int(rng.integers(1, 18))
        mask = rng.random((h, w)) < rng.uniform(0.1, 0.7)
        iters = int(rng.integers(1, 3))
        np.testing.assert_array_equal(
            postprocess.dilate(mask, iters), dilate_loops(mask, iters)
        )
        np.testing.assert_array_equal(
            postprocess.erode(mask, iters), erode_loops(mask, iters)
        )
        connectivity = 8 if i % 2 == 0 else 4
        labeled = postprocess.connected_components(mask, connectivity)
        oracle_labels, n = flood_fill_labels(mask, connectivity)
        assert len(labeled.regions) == n
        np.testing.assert_array_equal(labeled.labels, oracle_labels)

    diagonal = np.array([[True, False], [False, True]])
    assert len(postprocess.connected_components(diagonal, 8).regions) == 1
    assert len(postprocess.connected_components(diagonal, 4).regions) == 2
    report("post-processing oracles (200 masks, diagonal connectivity case)")


# ---------------------------------------------------------------------------
# decision rule
# ---------------------------------------------------------------------------


def test_criterion_decision_rule():
    assert postprocess.decide_count(11, 10).verdict == "positive"
    assert postprocess.decide_count(10, 10).verdict == "negative"
    report("decision rule (11 -> positive, 10 -> negative at threshold 10)")


# ---------------------------------------------------------------------------
# end-to-end desk-scale learning
# ---------------------------------------------------------------------------


def test_criterion_desk_scale_learning(workdir, datasets, desk_model, timings):
    t0 = time.monotonic()
    log = json.loads(desk_model.with_suffix(".weights.log.json").read_text())
    final_loss = log["epochs"][-1]["mean_loss"]
    assert final_loss < 0.15

    eval_path = workdir / "eval_unet.json"
    rc = cli.main(
        ["evaluate", "--manifest", str(datasets["tiles"]), "--weights",
         str(desk_model), "--tile", "64", "--out", str(eval_path)]
    )
    assert rc == 0
    tile_eval = json.loads(eval_path.read_text())
    assert len(tile_eval["ious"]) == 30
    assert tile_eval["mean_iou"] >= 0.70

    full_eval_path = workdir / "eval_full.json"
    rc = cli.main(
        ["evaluate", "--manifest", str(datasets["full"]), "--weights",
         str(desk_model), "--tile", "64", "--out", str(full_eval_path)]
    )
    assert rc == 0
    full_eval = json.loads(full_eval_path.read_text())
    assert len(full_eval["cases"]) == 15
    assert full_eval["case_accuracy"] >= 0.85

    elapsed = timings["train"] + (time.monotonic() - t0)
    assert elapsed < 15 * 60
    report(
        f"desk-scale learning (loss {final_loss:.4f}, IoU {tile_eval['mean_iou']:.3f}, "
        f"case accuracy {full_eval['case_accuracy']:.3f}, {elapsed:.0f}s)"
    )


# ---------------------------------------------------------------------------
# baseline ordering
# ---------------------------------------------------------------------------


def test_criterion_baseline_ordering(workdir, datasets, desk_model):
    unet_eval = json.loads((workdir / "eval_unet.json").read_text())
    km_path = workdir / "eval_kmeans.json"
    rc = cli.main(
        ["evaluate", "--manifest", str(datasets["tiles"]), "--segmenter", "kmeans",
         "--out", str(km_path)]
    )
    assert rc == 0
    km_eval = json.loads(km_path.read_text())
    gap = unet_eval["mean_iou"] - km_eval["mean_iou"]
    assert km_eval["mean_iou"] < unet_eval["mean_iou"]
    assert gap >= 0.10
    report(
        f"baseline ordering (kmeans {km_eval['mean_iou']:.3f} < "
        f"unet {unet_eval['mean_iou']:.3f}, gap {gap:.3f})"
    )


# ---------------------------------------------------------------------------
# determinism
# ---------------------------------------------------------------------------


def test_criterion_determinism(workdir, datasets, desk_model):
    small = workdir / "det_data"
    rc = cli.main(
        ["synth", "--train", "8", "--test", "0", "--seed", "3", "--out", str(small)]
    )
    assert rc == 0
    weight_files = []
    for run in ("r1", "r2"):
        out = workdir / f"det_{run}.weights"
        rc = cli.main(
            ["train", "--manifest", str(small / "manifest.json"), "--epochs", "3",
             "--seed", "5", "--out", str(out)]
        )
        assert rc == 0
        weight_files.append(out.read_bytes())
    assert weight_files[0] == weight_files[1]

    # infer with the trained model so the reports carry real regions
    full_manifest = dataset_io.load_manifest(datasets["full"])
    image_path = full_manifest.image_path(full_manifest.cases[0])
    reports = []
    for run in ("ra", "rb"):
        out_dir = workdir / f"det_infer_{run}"
        rc = cli.main(
            ["infer", str(image_path), "--weights", str(desk_model),
             "--tile", "64", "--out", str(out_dir)]
        )
        assert rc == 0
        stem = image_path.stem
        report_bytes = (out_dir / f"{stem}.report.json").read_bytes()
        if run == "ra":
            assert json.loads(report_bytes)["count"] > 0
        reports.append(report_bytes + (out_dir / f"{stem}.mask.pgm").read_bytes())
    assert reports[0] == reports[1]
    report("determinism (byte-identical weight files and reports)")
