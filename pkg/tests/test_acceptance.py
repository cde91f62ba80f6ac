"""Acceptance criteria, one test each.

Every test prints a single ``[ACCEPT n] PASS|FAIL ...`` line (shown even
under output capture) and then asserts.  Run alone with::

    pytest tests/test_acceptance.py -v
"""
import csv
import math
import time

import numpy as np
import pytest

from edrl_mea.dataio import (
    Dimension,
    FeatureTable,
    LabeledDataset,
    labels_for,
    undersample_majority,
)
from edrl_mea.edrl import EdrlConfig, build_edrl, train_edrl
from edrl_mea.evaluation import EvalReport, aggregate_noise, f1_binary
from edrl_mea.mea import MbplsConfig, fit_mbpls, predict
from edrl_mea.nn import finite_diff_check
from edrl_mea.noise import NoiseSpec, Waveform, mix_at_snr, read_wav, write_wav
from edrl_mea.pipeline import PipelineConfig, cmd_evaluate, cmd_prepare, cmd_train
from edrl_mea.synthetic import write_experiment
from oracles import least_squares_fit, match_up_to_sign, pls2_nipals, pls2_svd, standardize

LEVELS = (0.0, 5.0, 10.0, 15.0, 20.0)


@pytest.fixture
def verdict(capsys):
    def report(n, name, ok, detail=""):
        with capsys.disabled():
            print(f"\n[ACCEPT {n:>2}] {'PASS' if ok else 'FAIL'}  {name}  {detail}")
        assert ok, f"criterion {n} ({name}) failed: {detail}"
    return report


# --- 1 -----------------------------------------------------------------------

def test_c01_mbpls_single_block_matches_pls2(verdict):
    rng = np.random.default_rng(2024)
    cfg_tight = dict(tol=1e-14, max_nipals_iters=20000)
    worst, start = 0.0, time.perf_counter()
    for _ in range(20):
        n, N, q = int(rng.integers(12, 51)), int(rng.integers(2, 11)), int(rng.integers(1, 7))
        K = int(rng.integers(1, min(5, N) + 1))
        z, x = rng.normal(size=(n, N)), rng.normal(size=(n, q))
        model = fit_mbpls([z], x, MbplsConfig(K=K, **cfg_tight))
        mine = {"T": model.super_scores, "P": model.block_loadings,
                "V": model.response_loadings, "W": model.block_weights[0]}
        # two oracles: a textbook NIPALS loop and an SVD of the cross-product
        for ref in (pls2_nipals(z, x, K), pls2_svd(z, x, K)):
            worst = max(worst, *(match_up_to_sign(ref[k], mine[k]) for k in mine))
    seconds = time.perf_counter() - start
    verdict(1, "MBPLS oracle equivalence", worst < 1e-8 and seconds < 10,
            f"20 instances vs NIPALS and SVD oracles, max diff {worst:.2e} (tol 1e-8), "
            f"{seconds:.2f}s (limit 10s)")


# --- 2 -----------------------------------------------------------------------

def test_c02_mbpls_reconstruction_identities(verdict):
    rng = np.random.default_rng(7)
    blocks = [rng.normal(size=(40, p)) for p in (5, 4, 3)]
    x = np.hstack(blocks) @ rng.normal(size=(12, 6)) + 0.5 * rng.normal(size=(40, 6))
    model = fit_mbpls(blocks, x, MbplsConfig(K=6))
    zs = standardize(np.hstack(blocks))
    T, U, V = model.super_scores, model.response_scores, model.response_loadings
    errs, start = [], 0
    for c, b in enumerate(blocks):
        zc = zs[:, start:start + b.shape[1]]
        start += b.shape[1]
        errs.append(np.max(np.abs(zc - (T @ model.block_loading(c).T
                                        + model.residuals.block[c]))))
    xc = x - x.mean(axis=0)
    errs.append(np.max(np.abs(xc - (U @ V.T + model.residuals.response))))
    norms = np.linalg.norm(T, axis=0)
    ortho = np.max(np.abs(T.T @ T / np.outer(norms, norms) - np.eye(model.K)))
    worst = max(errs)
    verdict(2, "MBPLS reconstruction identities", worst < 1e-8 and ortho < 1e-8,
            f"max residual identity error {worst:.2e}, orthogonality {ortho:.2e}")


# --- 3 -----------------------------------------------------------------------

def test_c03_full_rank_least_squares(verdict):
    rng = np.random.default_rng(11)
    blocks = [rng.normal(size=(45, 4)), rng.normal(size=(45, 3)), rng.normal(size=(45, 2))]
    z = np.hstack(blocks)
    x = z @ rng.normal(size=(9, 5)) - 1.5
    model = fit_mbpls(blocks, x, MbplsConfig(K=9, tol=1e-14, max_nipals_iters=20000))
    err = np.max(np.abs(predict(model, blocks) - least_squares_fit(z, x)))
    verdict(3, "full-rank regression vs least squares", err < 1e-8, f"max diff {err:.2e}")


# --- 4 -----------------------------------------------------------------------

def _independent_loss_terms(block, x, kl_weight=0.1, rho=0.05):
    """Block loss pieces recomputed from raw weights, not the package forward pass.

    One cosine term per row and one KL term per latent unit; they sum to the loss.
    """
    def dense(layer, a, relu):
        out = a @ layer.weights.T + layer.bias
        return np.maximum(out, 0.0) if relu else out

    def branch(br):
        z = dense(br.latent, dense(br.encoder, x, True), True)
        return z, dense(br.decoder, z, True)

    def kl(z):
        rh = np.clip((1.0 / (1.0 + np.exp(-z))).mean(axis=0), 1e-7, 1 - 1e-7)
        return kl_weight * (rho * np.log(rho / rh) + (1 - rho) * np.log((1 - rho) / (1 - rh)))

    z_i, d_i = branch(block.intra)
    z_e, d_e = branch(block.inter)
    fused = dense(block.fusion, np.hstack([d_i, d_e]), False)
    cos = np.sum(x * fused, axis=1) / (np.linalg.norm(x, axis=1) * np.linalg.norm(fused, axis=1))
    return np.concatenate([(1.0 - cos) / x.shape[0], kl(z_i), kl(z_e)])


def test_c04_edrl_gradient_check(verdict):
    # biases are drawn away from zero: with zero bias a row whose encoder units
    # are all inactive sits exactly on a ReLU kink, where no gradient exists
    eps, package, local = 1e-6, 0.0, 0.0
    for seed in range(10):
        model = build_edrl(4, 2, EdrlConfig(seed=seed))
        block = model.blocks[seed % 2]
        assert block.inter.latent is model.shared_latent
        rng = np.random.default_rng(500 + seed)
        for layer in block.layers():
            layer.bias[:] = rng.normal(scale=0.1, size=layer.bias.shape)
        x = rng.normal(size=(6, 4))
        loss, analytic = block.loss_and_grad(x)
        assert abs(_independent_loss_terms(block, x).sum() - loss) < 1e-12
        package = max(package, finite_diff_check(block, x, eps))
        for param, grad in zip(block.parameters(), analytic):
            flat, g = param.reshape(-1), grad.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                plus = _independent_loss_terms(block, x)
                flat[i] = orig - eps
                minus = _independent_loss_terms(block, x)
                flat[i] = orig
                num = math.fsum(plus - minus) / (2 * eps)
                local = max(local, abs(g[i] - num) / max(abs(g[i]), abs(num), 1e-5))
    verdict(4, "EDRL block gradient check", package < 1e-5 and local < 1e-5,
            f"10 blocks, package check {package:.2e}, independent check {local:.2e} "
            f"(tol 1e-5, eps 1e-6)")


# --- 5 -----------------------------------------------------------------------

def test_c05_shared_latent_contract(verdict):
    rng = np.random.default_rng(3)
    train = [rng.normal(size=(40, 6)) + m for m in (-1.0, 0.0, 1.0)]
    val = [rng.normal(size=(8, 6)) + m for m in (-1.0, 0.0, 1.0)]

    def run(share):
        cfg = EdrlConfig(max_epochs=6, seed=0, share_latent=share)
        model = build_edrl(6, 3, cfg)
        train_edrl(model, train, val, cfg)
        return [b.inter.latent for b in model.blocks]

    shared, private = run(True), run(False)
    identical = all(np.array_equal(l.weights, shared[0].weights)
                    and np.array_equal(l.bias, shared[0].bias) for l in shared)
    spread = max(np.max(np.abs(l.weights - private[0].weights)) for l in private[1:])
    verdict(5, "shared-latent contract", identical and spread > 1e-6,
            f"shared identical={identical}, ablation max difference {spread:.2e}")


# --- 6 -----------------------------------------------------------------------

def test_c06_snr_exactness(verdict, tmp_path):
    rng = np.random.default_rng(99)
    pre, post = 0.0, 0.0
    for k in range(100):
        level = float(rng.choice(LEVELS))
        clean = Waveform(rng.normal(scale=0.1, size=int(rng.integers(1600, 16000))), 16000)
        noise = Waveform(rng.uniform(-0.3, 0.3, size=int(rng.integers(800, 24000))), 16000)
        mixed = mix_at_snr(clean, noise, NoiseSpec("n", level, k))
        # measured here from first principles, not with the package helper
        snr = 20 * np.log10(np.sqrt(np.mean(clean.samples ** 2))
                            / np.sqrt(np.mean((mixed.samples - clean.samples) ** 2)))
        pre = max(pre, abs(snr - level))
        write_wav(tmp_path / "c.wav", clean)
        write_wav(tmp_path / "m.wav", mixed)
        c, m = read_wav(tmp_path / "c.wav").samples, read_wav(tmp_path / "m.wav").samples
        snr_q = 20 * np.log10(np.sqrt(np.mean(c ** 2)) / np.sqrt(np.mean((m - c) ** 2)))
        post = max(post, abs(snr_q - level))
    verdict(6, "SNR exactness", pre < 1e-9 and post < 0.05,
            f"pre-quantization {pre:.2e} dB (tol 1e-9), 16-bit {post:.4f} dB (tol 0.05)")


# --- 7 -----------------------------------------------------------------------

def test_c07_f1_and_aggregation(verdict):
    cases = [
        # preds, truth, per-class F1 {label: value}, macro
        ([1, 1, 0, 0], [1, 0, 0, 0], {1: 2 / 3, 0: 4 / 5}, (2 / 3 + 4 / 5) / 2),
        ([1, 1, 1, 1], [1, 1, 0, 0], {1: 2 / 3, 0: 0.0}, 1 / 3),
        ([0, 1, 0, 1], [0, 1, 0, 1], {1: 1.0, 0: 1.0}, 1.0),
        ([1, 0, 1, 0], [0, 1, 0, 1], {1: 0.0, 0: 0.0}, 0.0),
        ([0, 0, 0, 1, 1, 0], [0, 0, 1, 1, 1, 1], {0: 4 / 6, 1: 4 / 6}, 4 / 6),
    ]
    exact = True
    for preds, truth, per_class, macro in cases:
        r = f1_binary(preds, truth, "MACRO", [0, 1])
        exact &= all(r.per_class[c] == v for c, v in per_class.items())
        exact &= r.score == macro
    zero_div = f1_binary([1, 1, 1, 1], [1, 1, 0, 0], labels=[0, 1]).zero_division == [0]
    rng = np.random.default_rng(0)
    agg = 0.0
    for _ in range(50):
        rows = rng.uniform(0, 1, 5)
        agg = max(agg, abs(aggregate_noise(list(zip(LEVELS, rows))) - sum(rows) / 5))
    verdict(7, "F1 correctness and aggregation", exact and zero_div and agg < 1e-12,
            f"hand cases exact={exact}, zero-division flagged={zero_div}, "
            f"aggregation error {agg:.1e}")


# --- 8 -----------------------------------------------------------------------

def test_c08_undersampling_and_label_protocol(verdict):
    counts_ok = True
    for neg, pos in ((3480, 1995), (2952, 2483)):
        labels = np.array([0] * neg + [1] * pos)
        table = FeatureTable(tuple(f"u{i}" for i in range(labels.size)),
                             np.zeros((labels.size, 1)))
        out = undersample_majority(LabeledDataset(table, labels, Dimension.AROUSAL), seed=0)
        m = min(neg, pos)
        counts_ok &= out.class_counts() == {0: m, 1: m}

    inventory = {"Anger": 319, "Happy": 263, "Neutral": 175, "Sad": 254}
    emotion = tuple(e for e, n in inventory.items() for _ in range(n))
    table = FeatureTable(tuple(f"e{i}" for i in range(len(emotion))),
                         np.zeros((len(emotion), 1)), emotion=emotion)
    v, a = labels_for(table, "V"), labels_for(table, "A")
    got = {"V+": int(v.sum()), "V-": int((v == 0).sum()),
           "A+": int(a.sum()), "A-": int((a == 0).sum())}
    want = {"V+": 438, "V-": 573, "A+": 582, "A-": 429}
    verdict(8, "undersampling and label protocol", counts_ok and got == want,
            f"undersampling ok={counts_ok}, category counts {got}")


# --- 9 and 10 ----------------------------------------------------------------

def _end_to_end(directory):
    path = write_experiment(directory, n_per_class=400, N=88, separation=2.0, seed=0,
                            dimensions=("A",),
                            forest={"n_estimators": [100, 200], "max_depth": [4, 8]})
    start = time.perf_counter()
    cfg = PipelineConfig.load(path)
    cmd_prepare(cfg)
    cmd_train(cfg)
    cmd_evaluate(cfg)
    return cfg, time.perf_counter() - start


@pytest.fixture(scope="module")
def first_run(tmp_path_factory):
    return _end_to_end(tmp_path_factory.mktemp("e2e_a"))


def test_c09_end_to_end_synthetic(verdict, first_run):
    cfg, seconds = first_run
    report = EvalReport.load_csv(cfg.out / "reports" / "report_intra.csv")
    clean = report.lookup("EDRL_MEA", "A", "CLEAN", None, None)
    noisy = [r for r in report.csv_rows() if r[0] == "EDRL_MEA" and r[2] == "NOISY"
             and r[4] != "mean"]
    by_level = {lvl: [] for lvl in LEVELS}
    for r in noisy:
        by_level[float(r[4])].append(float(r[5]))
    # noise increases as SNR falls
    curve = [float(np.mean(by_level[lvl])) for lvl in sorted(LEVELS, reverse=True)]
    worst_rise = max(b - a for a, b in zip(curve, curve[1:]))
    ok = seconds < 300 and clean >= 0.90 and worst_rise <= 0.02 \
        and all(len(v) == 5 for v in by_level.values())
    verdict(9, "end-to-end synthetic run", ok,
            f"{seconds:.1f}s (limit 300), clean macro-F1 {clean:.4f} (min 0.90), "
            f"20->0 dB curve {[round(c, 4) for c in curve]}, "
            f"largest rise {worst_rise:+.4f} (limit 0.02)")


def test_c10_determinism(verdict, first_run, tmp_path):
    cfg_a, _ = first_run
    cfg_b, _ = _end_to_end(tmp_path)
    a = (cfg_a.out / "reports" / "report_intra.csv").read_bytes()
    b = (cfg_b.out / "reports" / "report_intra.csv").read_bytes()
    with (cfg_a.out / "reports" / "report_intra.csv").open() as fh:
        n_rows = sum(1 for _ in csv.reader(fh)) - 1
    verdict(10, "determinism", a == b, f"report CSV byte-identical={a == b} ({n_rows} rows)")
