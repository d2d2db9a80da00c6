"""Acceptance criteria 1-9. Each test prints one PASS/FAIL line before asserting.

Criteria 5-7 share one full-size two-stage training run (32 background scenes of
64x64x20, 60 epochs per stage), which takes several minutes single-threaded.
"""
import hashlib
import math
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from rebelhad import detector, losses, trainer
from rebelhad.cli import DEFAULT_ANOMALIES, DEFAULT_ANOMALY_SIZE, DEFAULT_CONTRAST, main
from rebelhad.evaluation import auc, mauc, roc
from rebelhad.gradsuite import run_suite
from rebelhad.hsidata import SceneSpec, synth_scene
from rebelhad.networks import SpaFen, SpectralStageModel, prune_to_spe_fen
from rebelhad.trainer import TrainConfig

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance] criterion {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")
        return ok
    return emit


def _hashes(tree):
    return {name: hashlib.sha256(p.value.tobytes()).hexdigest() for name, p in tree}


# -- 1 ---------------------------------------------------------------------


def test_criterion_1_gradient_suite(report):
    started = time.perf_counter()
    worst = run_suite(seeds=range(20), h=1e-4)
    seconds = time.perf_counter() - started
    top = max(worst, key=worst.get)
    ok = all(v < 1e-4 for v in worst.values()) and seconds < 60
    assert report(1, ok, f"worst {top} {worst[top]:.2e} < 1e-4 over 20 seeds, {seconds:.1f}s < 60s"), worst


# -- 2 ---------------------------------------------------------------------


def _rx_oracle(data):
    b = data.shape[0]
    px = data.reshape(b, -1).T
    xc = px - px.mean(axis=0)
    cov = xc.T @ xc / px.shape[0]
    eps = max(1e-6 * np.trace(cov) / b, 1e-12)
    m = np.hstack([cov + eps * np.eye(b), np.eye(b)])
    for col in range(b):  # Gauss-Jordan with partial pivoting
        piv = col + int(np.argmax(np.abs(m[col:, col])))
        m[[col, piv]] = m[[piv, col]]
        m[col] /= m[col, col]
        for row in range(b):
            if row != col:
                m[row] -= m[row, col] * m[col]
    inv = m[:, b:]
    return np.einsum("pi,ij,pj->p", xc, inv, xc).reshape(data.shape[1:])


def test_criterion_2_rx_oracle(report):
    r = np.random.default_rng(2024)
    worst_oracle = worst_affine = 0.0
    for _ in range(200):
        b, h, w = int(r.integers(1, 9)), int(r.integers(2, 17)), int(r.integers(2, 17))
        data = r.standard_normal((b, h, w)) * r.uniform(0.1, 3.0, size=(b, 1, 1))
        s = detector.rx(data)
        worst_oracle = max(worst_oracle, float(np.max(np.abs(s - _rx_oracle(data)))))
        a = r.uniform(0.2, 5.0) * r.choice([-1.0, 1.0])
        shift = r.standard_normal((b, 1, 1))
        worst_affine = max(worst_affine, float(np.max(np.abs(detector.rx(a * data + shift) - s))))
    ok = worst_oracle < 1e-8 and worst_affine < 1e-8
    assert report(2, ok, f"oracle {worst_oracle:.1e}, affine {worst_affine:.1e}, both < 1e-8 on 200 cubes")


# -- 3 ---------------------------------------------------------------------


def test_criterion_3_auc_oracle(report):
    r = np.random.default_rng(3)
    exact = True
    worst_area = 0.0
    for _ in range(500):
        n = int(r.integers(2, 1001))
        s = np.round(r.standard_normal(n), int(r.integers(0, 4)))
        t = r.uniform(size=n) < r.uniform(0.02, 0.5)
        t[0], t[-1] = True, False
        pos, neg = s[t], s[~t]
        wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
        value = auc(s, t)
        exact &= value == wins / (len(pos) * len(neg))
        worst_area = max(worst_area, abs(roc(s, t).area() - value))
    ok = bool(exact) and worst_area < 1e-12
    assert report(3, ok, f"pairwise oracle exact={bool(exact)}, ROC area gap {worst_area:.1e} < 1e-12")


# -- 4 ---------------------------------------------------------------------


def test_criterion_4_loss_identities(report):
    f = np.random.default_rng(4).standard_normal((2, 4, 8, 8))
    x = np.array([1.0, -1.0, 1.0, -1.0]).reshape(1, 1, 2, 2)
    y = np.array([1.0, 1.0, -1.0, -1.0]).reshape(1, 1, 2, 2)
    vals = {
        "cos aligned": (losses.loss_cos(f, f), 2.0),
        "cos opposed": (losses.loss_cos(f, -f), 0.0),
        "cc orthogonal": (losses.loss_cc(x, y), 0.0),
        "var zero": (losses.loss_var(np.zeros_like(f), 1.0), 1.0),
        "z zero": (losses.loss_z(np.zeros((1, 1, 8, 8))), math.log(2.0)),
    }
    worst = max(abs(v - e) for v, e in vals.values())
    assert report(4, worst < 1e-12, f"max deviation {worst:.1e} over {len(vals)} identities"), vals


# -- 5, 6, 7 share one full-size run ----------------------------------------


@pytest.fixture(scope="module")
def smoke():
    corpus = [synth_scene(SceneSpec(seed=1000 + s))[0] for s in range(32)]
    cfg = TrainConfig(seed=0)
    with threadpool_limits(limits=1):
        started = time.perf_counter()
        model, log1 = trainer.fit_spectral(corpus, cfg)
        spe = prune_to_spe_fen(model)
        teacher_before = _hashes(spe.params)
        spa, frn, log2 = trainer.train_stage2(corpus, spe, cfg)
        seconds = time.perf_counter() - started
    return {
        "corpus": corpus, "cfg": cfg, "model": model, "spe": spe, "spa": spa, "frn": frn,
        "log1": log1, "log2": log2, "seconds": seconds, "teacher_before": teacher_before,
    }


def test_criterion_5_freeze_and_prune(report, smoke):
    bands = smoke["corpus"][0].data.shape[0]
    cfg = smoke["cfg"]
    model = smoke["model"]
    fresh = _hashes(SpectralStageModel(bands, seed=cfg.seed).params)
    trained = _hashes(model.params)
    stage1_frozen = all(trained[n] == fresh[n] for n, p in model.params if p.frozen)
    teacher_same = _hashes(smoke["spe"].params) == smoke["teacher_before"]
    fresh_spa = _hashes(SpaFen(bands, seed=cfg.seed ^ trainer._STUDENT_SALT).params)
    now_spa = _hashes(smoke["spa"].params)
    backbone_same = all(now_spa[n] == fresh_spa[n] for n, p in smoke["spa"].params if p.frozen)
    r = np.random.default_rng(5)
    prune_exact = True
    for _ in range(100):
        x = r.uniform(size=(1, bands, 8, 8))
        prune_exact &= np.array_equal(smoke["spe"].forward(x), model.spe_path(x))
    ok = stage1_frozen and teacher_same and backbone_same and bool(prune_exact)
    detail = (f"stage-1 frozen {stage1_frozen}, teacher {teacher_same}, student backbone {backbone_same}, "
              f"pruned path bitwise on 100 inputs {bool(prune_exact)}")
    assert report(5, ok, detail)


def test_criterion_6_two_stage_smoke(report, smoke):
    totals = smoke["log1"].totals
    ratio = totals[-1] / totals[0]
    abs_cos = trainer.mean_abs_cosine(smoke["spe"], smoke["spa"], smoke["corpus"])
    stage2 = smoke["log2"].totals
    parts = {
        "stage-1 ratio < 0.5": ratio < 0.5,
        "mean |cos| < 0.2": abs_cos < 0.2,
        "runtime < 600s": smoke["seconds"] < 600,
    }
    detail = (f"stage-1 epoch60/epoch1 {totals[-1]:.4f}/{totals[0]:.4f} = {ratio:.3f}; "
              f"stage-2 total {stage2[0]:.3f} -> {stage2[-1]:.3f}; mean |cos| {abs_cos:.3f}; "
              f"{smoke['seconds']:.0f}s; failing parts: {[k for k, v in parts.items() if not v] or 'none'}")
    assert report(6, all(parts.values()), detail)


def test_criterion_7_detection_smoke(report, smoke):
    scenes = [synth_scene(SceneSpec(anomaly_count=DEFAULT_ANOMALIES, anomaly_size=DEFAULT_ANOMALY_SIZE,
                                    anomaly_contrast=DEFAULT_CONTRAST, seed=9000 + s)) for s in range(20)]
    rx_aucs = [auc(detector.rx(c), m) for c, m in scenes]
    add_aucs = [auc(detector.detect(c, smoke["spe"], smoke["spa"], "add"), m) for c, m in scenes]
    rx_m, add_m = mauc(rx_aucs), mauc(add_aucs)
    calibrated = min(rx_aucs) >= 0.90
    ok = calibrated and add_m >= rx_m - 0.02
    detail = (f"RX mAUC {rx_m:.4f} (min scene {min(rx_aucs):.4f} >= 0.90: {calibrated}); "
              f"additive fusion mAUC {add_m:.4f}, needs >= {rx_m - 0.02:.4f}")
    assert report(7, ok, detail)


# -- 8, 9 run through the command line at reduced size -----------------------

SMALL = ["--height", "32", "--width", "32", "--spectral-bands", "20"]
FAST = ["--epochs", "3", "--batch", "4"]


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept")
    assert main(["synth", "--out", str(root), "--scenes", "3", "--train-scenes", "8", *SMALL, "--seed", "7"]) == 0
    return root


def test_criterion_8_ablation_tables(report, small_data, tmp_path):
    t3, t4 = tmp_path / "table3.csv", tmp_path / "table4.csv"
    common = ["--data", str(small_data / "train"), "--test-dir", str(small_data), *FAST]
    ok3 = main(["ablate", "--grid", "stage1", "--out", str(t3), *common]) == 0
    ok4 = main(["ablate", "--grid", "stage2", "--out", str(t4), *common]) == 0
    rows3 = t3.read_text().splitlines() if ok3 else []
    rows4 = t4.read_text().splitlines() if ok4 else []
    want3 = {"0,0,1", "1,1,0", "0,1,1", "1,0,1", "1,1,1"}  # sim,mse,z
    want4 = {"1,1,1,0", "0,0,0,1", "1,1,0,1", "1,0,1,1", "0,1,1,1", "1,1,1,1"}  # cc,cos,var,recon
    got3 = [ln.rsplit(",", 1) for ln in rows3[1:]]
    got4 = [ln.rsplit(",", 1) for ln in rows4[1:]]
    ok = (
        rows3[:1] == ["sim,mse,z,mAUC"] and rows4[:1] == ["cc,cos,var,recon,mAUC"]
        and len(got3) == 5 and {k for k, _ in got3} == want3
        and len(got4) == 6 and {k for k, _ in got4} == want4
        and all(0.0 <= float(v) <= 1.0 for _, v in got3 + got4)
    )
    assert report(8, ok, f"{len(got3)} stage-1 rows, {len(got4)} stage-2 rows, one mAUC each")


def _quickstart(root):
    data = root / "data"
    steps = [
        ["synth", "--out", str(data), "--scenes", "3", "--train-scenes", "8", *SMALL, "--seed", "7"],
        ["train-spectral", "--data", str(data / "train"), "--out", str(root / "m.spe"), *FAST, "--seed", "7"],
        ["train-spatial", "--data", str(data / "train"), "--teacher", str(root / "m.spe"),
         "--out", str(root / "m.spa"), *FAST, "--seed", "7"],
        ["detect", "--scene", str(data), "--spe", str(root / "m.spe"), "--spa", str(root / "m.spa"),
         "--fusion", "add", "--out", str(root / "scores")],
        ["eval", "--scores-dir", str(root / "scores"), "--truth-dir", str(data), "--out", str(root / "report.csv")],
    ]
    codes = [main([*s, "--threads", "1"]) for s in steps]
    outputs = {p.name: p.read_bytes() for p in sorted((root / "scores").glob("*.hcf"))}
    outputs["report.csv"] = (root / "report.csv").read_bytes()
    return codes, outputs


def test_criterion_9_determinism(report, tmp_path):
    codes_a, out_a = _quickstart(tmp_path / "a")
    codes_b, out_b = _quickstart(tmp_path / "b")
    ok = codes_a == codes_b == [0] * 5 and out_a == out_b and len(out_a) == 4
    assert report(9, ok, f"{len(out_a)} files byte-identical across two seed-7 runs: {out_a == out_b}")
