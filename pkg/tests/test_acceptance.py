"""The ten acceptance criteria, one test each (criterion 6 reuses criterion 5's A2 run).

Each test prints a ``CRITERION n PASS|FAIL`` line; the lines are repeated in
the terminal summary.
"""

import time

import numpy as np
import pytest

from stripeclean import ops
from stripeclean.attention import BRANCH_PRESETS
from stripeclean.baselines import gf_destripe, mhe_destripe
from stripeclean.cli import main
from stripeclean.degrade import StripeNoiseSpec, stripe_field, synth_stripe
from stripeclean.evaluation import psnr, roughness, ssim
from stripeclean.gradcheck import finite_diff_check
from stripeclean.model import (PRESETS, SAMPLING_LAYOUTS, build, count_parameters, layout_config, load_model,
                               save_model, state_of)
from stripeclean.nn import Conv2d
from stripeclean.tensor import Tensor, no_grad
from stripeclean.wavelet import RHDWTVariant, hdwt, ihdwt

from desk_protocol import make_desk_data, run_desk


@pytest.fixture(scope="module")
def desk_data(tmp_path_factory):
    return make_desk_data(tmp_path_factory.mktemp("desk"))


@pytest.fixture(scope="module")
def desk_a2_seed0(desk_data):
    return run_desk(desk_data, "A2", seed=0)


# -- 1 ------------------------------------------------------------------------------

def test_c01_wavelet_exactness(criterion):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst_rec, worst_energy = 0.0, 0.0
    for _ in range(100):
        shape = (int(rng.integers(1, 5)), int(rng.integers(1, 9)),
                 2 * int(rng.integers(1, 33)), 2 * int(rng.integers(1, 33)))
        x = rng.uniform(0, 1, shape).astype(np.float32)
        bands = hdwt(Tensor(x)).data
        back = ihdwt(Tensor(bands)).data
        assert back.dtype == np.float32
        worst_rec = max(worst_rec, float(np.abs(back - x).max()))
        ratio = float((bands.astype(np.float64) ** 2).sum() / (x.astype(np.float64) ** 2).sum())
        worst_energy = max(worst_energy, abs(ratio - 4.0))
    secs = time.perf_counter() - t0
    criterion(1, worst_rec <= 1e-6 and worst_energy <= 1e-5 and secs < 5,
              f"max |ihdwt(hdwt(x)) - x| = {worst_rec:.2e} (<= 1e-6), max |energy ratio - 4| = "
              f"{worst_energy:.2e} (<= 1e-5), {secs:.2f} s (< 5 s)")


# -- 2 ------------------------------------------------------------------------------

def test_c02_stripe_aggregation(criterion):
    t0 = time.perf_counter()
    kinds = [lambda s: StripeNoiseSpec.gaussian(0.1, s), lambda s: StripeNoiseSpec.uniform(0.1, s),
             lambda s: StripeNoiseSpec.periodic(6 + s % 4, 0.1, True, s)]
    ok, min_share = True, 1.0
    for i in range(50):
        field = stripe_field(kinds[i % 3](i), (64, 64))
        bands = hdwt(Tensor(field[None, None])).data[0]
        ok &= bool(np.all(bands[1] == 0.0) and np.all(bands[3] == 0.0))
        share = float((bands[0] ** 2).sum() + (bands[2] ** 2).sum()) / float((bands ** 2).sum())
        min_share = min(min_share, share)
    secs = time.perf_counter() - t0
    criterion(2, ok and min_share == 1.0 and secs < 5,
              f"LH = HH = 0 exactly on 50 fields: {ok}, min LL+HL energy share = {min_share:.6f}, {secs:.2f} s")


# -- 3 ------------------------------------------------------------------------------

def _op_cases(rng):
    def t(*shape, scale=1.0):
        return Tensor(scale * rng.standard_normal(shape), requires_grad=True)

    x4, w3, b3 = t(2, 3, 6, 8), t(4, 3, 3, 3), t(4)
    wt, bt = t(3, 2, 2, 2), t(2)
    a, bb, a2 = t(2, 3, 4, 5), t(2, 3, 1, 5), t(2, 2, 4, 5)
    g, beta = Tensor(rng.uniform(0.5, 1.5, 3), requires_grad=True), t(3)
    col, h4 = t(2, 3, 1, 5), t(1, 4, 4, 6)
    tgt = Tensor(rng.standard_normal((2, 3, 6, 8)))

    def weighted(y):
        k = Tensor(np.random.default_rng(y.data.size).standard_normal(y.shape))
        return (y * k).sum()

    return {
        "conv2d": (lambda: weighted(ops.conv2d(x4, w3, b3, 1, 1)), [x4, w3, b3]),
        "conv2d_stride2": (lambda: weighted(ops.conv2d(x4, w3, b3, 2, 0)), [x4, w3, b3]),
        "conv_transpose2d": (lambda: weighted(ops.conv_transpose2d(x4, wt, bt, 2)), [x4, wt, bt]),
        "maxpool2d": (lambda: weighted(ops.maxpool2d(x4)), [x4]),
        "avgpool2d": (lambda: weighted(ops.avgpool2d(x4)), [x4]),
        "channel_pool": (lambda: weighted(ops.channel_pool(x4)), [x4]),
        "column_avg": (lambda: weighted(ops.column_avg(x4)), [x4]),
        "column_max": (lambda: weighted(ops.column_max(x4)), [x4]),
        "expand_rows": (lambda: weighted(ops.expand_rows(col, 4)), [col]),
        "bilinear_upsample2x": (lambda: weighted(ops.bilinear_upsample2x(x4)), [x4]),
        "leaky_relu": (lambda: weighted(ops.leaky_relu(x4)), [x4]),
        "sigmoid": (lambda: weighted(ops.sigmoid(x4)), [x4]),
        "tanh": (lambda: weighted(ops.tanh(x4)), [x4]),
        "concat": (lambda: weighted(ops.concat([a, a2], 1)), [a, a2]),
        "split": (lambda: weighted(ops.split(x4, [1, 2], 1)[1]), [x4]),
        "add_broadcast": (lambda: weighted(a + bb), [a, bb]),
        "sub_broadcast": (lambda: weighted(a - bb), [a, bb]),
        "mul_broadcast": (lambda: weighted(a * bb), [a, bb]),
        "div_scalar": (lambda: weighted(a / 3.0), [a]),
        "neg_reshape_mean": (lambda: (-(a.reshape(6, 20))).mean() * 3.0, [a]),
        "batch_norm_train": (lambda: weighted(ops.batch_norm2d(x4, g, beta, np.zeros(3), np.ones(3), True)),
                             [x4, g, beta]),
        "batch_norm_eval": (lambda: weighted(ops.batch_norm2d(x4, g, beta, np.full(3, 0.1), np.full(3, 2.0),
                                                              False)), [x4, g, beta]),
        "mse": (lambda: ops.mse(x4, tgt), [x4]),
        "hdwt": (lambda: weighted(hdwt(h4)), [h4]),
        "ihdwt": (lambda: weighted(ihdwt(h4)), [h4]),
    }


def test_c03_gradient_correctness(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_op, worst_name = 0.0, ""
    for name, (f, params) in _op_cases(rng).items():
        rep = finite_diff_check(f, params, tol=1e-4)
        if rep.max_error >= worst_op:
            worst_op, worst_name = rep.max_error, name

    m = build(PRESETS["toy"], seed=0).to_dtype(np.float64)
    for mod in m.modules():
        if isinstance(mod, Conv2d) and mod.zero_init:
            mod.weight.data = 0.05 * rng.standard_normal(mod.weight.shape)
    for p in m.parameters():
        if p.ndim == 1:
            p.data = 0.05 * rng.standard_normal(p.shape)
    x = Tensor(rng.uniform(0, 1, (2, 1, 16, 16)))
    clean = Tensor(rng.uniform(0, 1, (2, 1, 16, 16)))
    e2e = finite_diff_check(lambda: ops.mse(m(x)[1], clean), dict(m.named_parameters()),
                            h=1e-6, tol=1e-3, max_entries=3, seed=0)
    secs = time.perf_counter() - t0
    criterion(3, worst_op <= 1e-4 and e2e.passed and secs < 300,
              f"worst op rel err {worst_op:.2e} ({worst_name}, <= 1e-4), toy ARCNet rel err "
              f"{e2e.max_error:.2e} over {len(e2e.errors)} tensors (<= 1e-3), {secs:.1f} s")


# -- 4 ------------------------------------------------------------------------------

def test_c04_ablation_constructability(criterion):
    t0 = time.perf_counter()
    base = PRESETS["desk"]
    configs = {f"layout {k}": layout_config(k, base) for k in SAMPLING_LAYOUTS}
    configs.update({f"rhdwt {v.value}": base.replace(rhdwt_variant=v) for v in RHDWTVariant})
    configs.update({f"branches {k}": base.replace(toggles=t) for k, t in BRANCH_PRESETS.items()})
    bad = []
    x = Tensor(np.random.default_rng(4).uniform(0, 1, (1, 1, 64, 64)).astype(np.float32))
    for name, cfg in configs.items():
        m = build(cfg, seed=0, zero_branches=False)
        res, restored = m(x)
        ops.mse(restored, x).backward()
        grads_ok = all(p.grad is not None and np.isfinite(p.grad).all() for p in m.parameters())
        if res.shape != x.shape or restored.shape != x.shape or not grads_ok:
            bad.append(name)
    secs = time.perf_counter() - t0
    criterion(4, not bad and len(configs) == 16 and secs < 60,
              f"{len(configs) - len(bad)}/{len(configs)} variants build, run forward+backward and keep "
              f"1x1x64x64{' (failed: ' + ', '.join(bad) + ')' if bad else ''}, {secs:.1f} s (< 60 s)")


# -- 5 ------------------------------------------------------------------------------

def test_c05_desk_learning(criterion, desk_a2_seed0):
    r = desk_a2_seed0
    gain_psnr = r.psnr_restored - r.psnr_degraded
    gain_ssim = r.ssim_restored - r.ssim_degraded
    criterion(5, gain_psnr >= 3.0 and gain_ssim >= 0.02 and r.seconds <= 1800,
              f"held-out PSNR {r.psnr_degraded:.2f} -> {r.psnr_restored:.2f} dB (+{gain_psnr:.2f}, need +3.0), "
              f"SSIM {r.ssim_degraded:.4f} -> {r.ssim_restored:.4f} (+{gain_ssim:.4f}, need +0.02), "
              f"{r.seconds / 60:.1f} min")


# -- 6 ------------------------------------------------------------------------------

def test_c06_a2_versus_s3(criterion, desk_data, desk_a2_seed0):
    a2 = [desk_a2_seed0.psnr_restored, run_desk(desk_data, "A2", seed=1).psnr_restored]
    s3 = [run_desk(desk_data, "S3", seed=s).psnr_restored for s in (0, 1)]
    ma, ms = float(np.mean(a2)), float(np.mean(s3))
    criterion(6, ma >= ms - 0.3,
              f"mean held-out PSNR A2 {ma:.2f} dB (seeds 0/1: {a2[0]:.2f}/{a2[1]:.2f}) vs S3 {ms:.2f} dB "
              f"({s3[0]:.2f}/{s3[1]:.2f}); need A2 >= S3 - 0.3")


# -- 7 ------------------------------------------------------------------------------

def test_c07_baseline_efficacy(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    rho_cut, psnr_gain, gf_ratio = [], [], []
    for i in range(10):
        clean = np.full((128, 128), rng.uniform(0.2, 0.8))
        degraded = synth_stripe(clean, StripeNoiseSpec.gaussian(0.05, seed=100 + i))[0]
        out = mhe_destripe(degraded)
        rho_cut.append(1 - roughness(out) / roughness(degraded))
        psnr_gain.append(psnr(out, clean) - psnr(degraded, clean))
        gf_ratio.append(float((gf_destripe(degraded) - clean).std()) / 0.05)
    secs = time.perf_counter() - t0
    ok = min(rho_cut) >= 0.8 and min(psnr_gain) >= 6.0 and max(gf_ratio) < 0.1 and secs < 30
    criterion(7, ok, f"MHE roughness cut min {min(rho_cut):.1%} (>= 80%), PSNR gain min {min(psnr_gain):.2f} dB "
                     f"(>= 6); GF residual std max {max(gf_ratio):.1%} of sigma (< 10%), {secs:.1f} s")


# -- 8 ------------------------------------------------------------------------------

def _loop_psnr(a, b):
    s = 0.0
    for u, v in zip(a.ravel(), b.ravel()):
        s += (u - v) ** 2
    return 10 * np.log10(1.0 / (s / a.size))


def _loop_rho(a):
    h, w = a.shape
    num = sum(abs(a[y, x + 1] - a[y, x]) for y in range(h) for x in range(w - 1))
    num += sum(abs(a[y + 1, x] - a[y, x]) for y in range(h - 1) for x in range(w))
    return num / sum(abs(v) for v in a.ravel())


def _loop_ssim(a, b):
    r = np.arange(11) - 5.0
    g = np.exp(-r * r / 4.5)
    win = np.outer(g, g) / np.outer(g, g).sum()
    c1, c2 = 1e-4, 9e-4
    vals = []
    for i in range(a.shape[0] - 10):
        for j in range(a.shape[1] - 10):
            pa, pb = a[i:i + 11, j:j + 11], b[i:i + 11, j:j + 11]
            ma, mb = (win * pa).sum(), (win * pb).sum()
            va, vb = (win * (pa - ma) ** 2).sum(), (win * (pb - mb) ** 2).sum()
            cov = (win * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_c08_metric_oracles(criterion):
    rng = np.random.default_rng(8)
    x = rng.uniform(0, 0.9, (32, 32))
    exact = psnr(x + 0.1, x) == 20.0
    ident = ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    flat = roughness(np.full((16, 16), 0.4)) == 0.0
    worst = 0.0
    for _ in range(20):
        a = rng.uniform(0, 1, (24, 24))
        b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
        worst = max(worst, abs(psnr(a, b) - _loop_psnr(a, b)), abs(ssim(a, b) - _loop_ssim(a, b)),
                    abs(roughness(a) - _loop_rho(a)))
    criterion(8, exact and ident and flat and worst <= 1e-6,
              f"PSNR(gap 0.1) == 20.0: {exact}, SSIM(x,x) == 1: {ident}, rho(const) == 0: {flat}, "
              f"max deviation from loop oracles on 20 images {worst:.1e} (<= 1e-6)")


# -- 9 ------------------------------------------------------------------------------

def test_c09_parameter_scaling_and_checkpoint(criterion, tmp_path):
    ratio = count_parameters(build(PRESETS["full"])) / count_parameters(build(PRESETS["light"]))
    model = build(PRESETS["light"], seed=9, zero_branches=False)
    save_model(model, tmp_path / "m.arcn")
    back = load_model(tmp_path / "m.arcn")
    pa, _ = state_of(model)
    pb, _ = state_of(back)
    same_params = pa.keys() == pb.keys() and all(pa[k].tobytes() == pb[k].tobytes() for k in pa)
    x = Tensor(np.random.default_rng(9).uniform(0, 1, (1, 1, 32, 32)).astype(np.float32))
    model.eval(), back.eval()
    with no_grad():
        same_out = model(x)[0].data.tobytes() == back(x)[0].data.tobytes()
    criterion(9, 3.5 <= ratio <= 4.2 and same_params and same_out,
              f"full/light parameter ratio {ratio:.3f} (in [3.5, 4.2]), checkpoint parameters bitwise: "
              f"{same_params}, forward bitwise: {same_out}")


# -- 10 -----------------------------------------------------------------------------

def _pipeline(root):
    root.mkdir()
    cfg = root / "toy.cfg"
    cfg.write_text("preset=toy\ntrain.batch_size=8\n")
    steps = [
        ["synth", "--builtin", "4", "--size", "64", "--count", "24", "--patch", "32", "--level", "0.1",
         "--export-png", "--seed", "10", "--out", str(root / "corpus")],
        ["train", "--corpus", str(root / "corpus"), "--config", str(cfg), "--epochs", "2", "--seed", "10",
         "--out", str(root / "run")],
        ["infer", "--ckpt", str(root / "run" / "last.arcn"), "--in", str(root / "corpus" / "degraded"),
         "--out", str(root / "restored")],
        ["eval", "--pred", str(root / "restored"), "--ref", str(root / "corpus" / "clean"),
         "--report", str(root / "report")],
    ]
    codes = [main(["--threads", "1", *s]) for s in steps]
    return codes, (root / "report" / "metrics.csv").read_bytes()


def test_c10_determinism(criterion, tmp_path, capsys):
    codes_a, csv_a = _pipeline(tmp_path / "a")
    codes_b, csv_b = _pipeline(tmp_path / "b")
    capsys.readouterr()
    ok = codes_a == codes_b == [0, 0, 0, 0] and csv_a == csv_b
    criterion(10, ok, f"exit codes {codes_a} / {codes_b}, metrics.csv identical: {csv_a == csv_b} "
                      f"({len(csv_a)} bytes, {len(csv_a.splitlines()) - 1} images)")
