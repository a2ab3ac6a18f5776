"""Exit criteria: exact property suites (1-7) and paired directional reproductions (8-12).

The directional experiments train ~50 models (several minutes on one core). Set
``VQC_ACCEPTANCE_DIR`` to keep their outputs; finished cells are reused.
"""
import os
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import CRITERIA, central_diff, max_rel_err
from oracles import naive_ema
from vqc import cli
from vqc.codebook import Codebook, ema_update, kmeans, perplexity, quantize
from vqc.config import ExperimentConfig
from vqc.experiments import read_report, run_experiment
from vqc.numcore import Mlp, mlp_forward, mse
from vqc.vqvae import TrainConfig, VqVae, autoencoder_step, loss_and_grads, vq_step


def record(num, name, ok, detail):
    CRITERIA.append((num, name, bool(ok), detail))
    assert ok, f"criterion {num} ({name}) failed: {detail}"


def test_01_quantizer_matches_brute_force():
    rng = np.random.default_rng(100)
    mismatches = 0
    for _ in range(100):
        S, N, D = rng.integers(1, 257), rng.integers(1, 1025), rng.integers(1, 9)
        tokens, z = rng.normal(size=(S, D)), rng.normal(size=(N, D))
        idx, _ = quantize(Codebook.from_tokens(tokens), z)
        brute = np.array([np.argmin([np.sum((row - t) ** 2) for t in tokens]) for row in z])
        mismatches += int(np.sum(idx != brute))
    record(1, "quantizer oracle equivalence", mismatches == 0,
           f"{mismatches} mismatched assignments over 100 instances")


def test_02_ema_closed_form():
    rng = np.random.default_rng(200)
    worst = 0.0
    for _ in range(50):
        S, D, gamma = rng.integers(1, 12), rng.integers(1, 5), rng.uniform(0.5, 0.99)
        cb = Codebook.from_tokens(rng.normal(size=(S, D)), gamma, rng.uniform(0, 4, size=S))
        t, M, L = cb.tokens.copy(), cb.ema_sum.copy(), cb.ema_count.copy()
        for _ in range(rng.integers(1, 6)):
            z = rng.normal(size=(rng.integers(1, 40), D))
            idx, _ = quantize(cb, z)
            t, M, L = naive_ema(t, M, L, gamma, z, idx)
            ema_update(cb, z, idx)
            worst = max(worst, np.max(np.abs(cb.tokens - t)), np.max(np.abs(cb.ema_sum - M)),
                        np.max(np.abs(cb.ema_count - L)))
    record(2, "EMA closed form", worst <= 1e-12, f"max abs deviation {worst:.2e} (tol 1e-12)")


def test_03_kmeans_monotone():
    bad = 0
    for seed in range(20):
        rng = np.random.default_rng(300 + seed)
        z = rng.normal(size=(int(rng.integers(50, 400)), int(rng.integers(1, 5))))
        _, res = kmeans(z, int(rng.integers(2, 40)), seed=seed)
        h = res.objective_history
        bad += int(any(b > a for a, b in zip(h[:-1], h[1:])) or h[-1] > h[0])
    record(3, "K-means monotonicity", bad == 0, f"{bad}/20 instances with an increase")


def _frozen_objective(m, x, offset, zq):
    z = mlp_forward(m.encoder, x)
    return mse(mlp_forward(m.decoder, z + offset), x) + m.beta * mse(z, zq)


def test_04_gradient_checks():
    worst = 0.0
    for seed in range(3):
        rng = np.random.default_rng(400 + seed)
        enc = Mlp.build([3, 6, 6, 2], rng)
        dec = Mlp.build([2, 6, 6, 3], rng)
        m = VqVae(enc, dec, Codebook.from_tokens(rng.normal(size=(8, 1))), 0.25, 2)
        x = rng.normal(size=(9, 3))
        _, _, fwd = loss_and_grads(m, x)
        offset = fwd.quantized - fwd.embeddings
        f = lambda: _frozen_objective(m, x, offset, fwd.quantized)
        for layer in m.encoder.layers + m.decoder.layers:
            worst = max(worst, max_rel_err(layer.grad_weight, central_diff(f, layer.weight)),
                        max_rel_err(layer.grad_bias, central_diff(f, layer.bias)))
    record(4, "gradient checks", worst < 1e-4, f"max relative error {worst:.2e} (tol 1e-4)")


def test_05_straight_through_degeneracy():
    rng = np.random.default_rng(500)
    cfg = TrainConfig(lr=1e-2)
    m = VqVae(Mlp.build([3, 8, 8, 2], rng), Mlp.build([2, 8, 8, 3], rng),
              Codebook.from_tokens(np.zeros((1, 2))))
    x = rng.normal(size=(16, 3))
    m.codebook = Codebook.from_tokens(mlp_forward(m.encoder, x))
    enc, dec = m.encoder.copy(), m.decoder.copy()
    vq_step(m, x, cfg)
    autoencoder_step(enc, dec, x, cfg)
    diff = max(np.max(np.abs(a[0] - b[0])) for a, b in zip(
        list(m.encoder.params()) + list(m.decoder.params()),
        list(enc.params()) + list(dec.params())))
    record(5, "straight-through degeneracy", diff <= 1e-12, f"max param difference {diff:.2e}")


def test_06_perplexity_closed_forms():
    one = perplexity([3] * 10, 8)
    uni = perplexity(np.arange(40) % 8, 8)
    fix = perplexity([0, 0, 1, 2], 4)
    ok = abs(one - 1) < 1e-12 and abs(uni - 8) < 1e-12 and abs(fix - 2.8284) <= 1e-3
    record(6, "perplexity closed forms", ok, f"single={one:.6f} uniform={uni:.6f} fixture={fix:.4f}")


def test_07_determinism(tmp_path):
    conf = tmp_path / "det.conf"
    conf.write_text("experiment.kind = single-run\nexperiment.seeds = 3\n"
                    "data.points_per_cluster = 100\ntrain.epochs = 5\ntrain.pretrain_epochs = 2\n")
    for d in ("a", "b"):
        assert cli.main(["run", str(conf), "--out", str(tmp_path / d)]) == 0
    a = (tmp_path / "a/report.csv").read_bytes()
    b = (tmp_path / "b/report.csv").read_bytes()
    record(7, "determinism", a == b, "report.csv bytes identical" if a == b else "rows differ")


# -- directional reproductions ---------------------------------------------------------------


@pytest.fixture(scope="module")
def out_root(tmp_path_factory):
    env = os.environ.get("VQC_ACCEPTANCE_DIR")
    return Path(env) if env else tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def ablation(out_root):
    cfg = ExperimentConfig.for_kind("tokens-collapse-ablation", out_dir=out_root / "ablation")
    return run_experiment(cfg)


@pytest.fixture(scope="module")
def sweep(out_root):
    cfg = ExperimentConfig.for_kind("codebook-size-sweep", out_dir=out_root / "sweep")
    return run_experiment(cfg)


@pytest.fixture(scope="module")
def capacity(out_root):
    cfg = ExperimentConfig.for_kind("capacity-sweep", sweep=(4, 32), out_dir=out_root / "capacity")
    return run_experiment(cfg)


def test_08_tokens_collapse_ablation(ablation):
    summary = ablation["summary"]
    lines, ok = [], True
    for dim in (2, 3, 8):
        rows = [s for s in summary if s["sweep_value"] == dim]
        ppl_wins = sum(s["remedy_perplexity"] >= s["baseline_perplexity"] for s in rows)
        ent_wins = sum(s["remedy_entropy_ratio"] > s["baseline_entropy_ratio"] for s in rows)
        ok &= ppl_wins == 3 and ent_wins >= 2
        lines.append(f"dim {dim}: perplexity {ppl_wins}/3, entropy ratio {ent_wins}/3")
    record(8, "tokens-collapse ablation", ok, "; ".join(lines))


def test_09_initialization_effect(ablation):
    rows = [s for s in ablation["summary"] if s["sweep_value"] == 2]
    wins = sum(s["remedy_init_perplexity"] > s["baseline_init_perplexity"] for s in rows)
    detail = ", ".join(f"seed {s['seed']}: {s['remedy_init_perplexity']:.1f} vs "
                       f"{s['baseline_init_perplexity']:.1f}" for s in rows)
    record(9, "initialization effect (pretrained > untrained init perplexity, dim 2)",
           wins == 3, f"{wins}/3 ({detail})")


def test_10_codebook_size_sweep(sweep):
    trend = sweep["trend"]
    gap_wins = sum(t["gap"][-1] > t["gap"][0] for t in trend.values())
    mono = sum(t["remedy_nondecreasing"] for t in trend.values())
    detail = "; ".join(f"seed {s}: gap {t['gap'][0]:.1f} -> {t['gap'][-1]:.1f}"
                       for s, t in trend.items())
    record(10, "codebook-size sweep", gap_wins >= 2 and mono >= 2,
           f"gap(2048)>gap(32) {gap_wins}/3, remedy non-decreasing {mono}/3 ({detail})")


def test_11_capacity_sweep(capacity):
    rows = capacity["rows"]
    by = {(r.seed, r.sweep_value): r for r in rows}
    seeds = sorted({r.seed for r in rows})
    cov32 = sum(by[s, 32].mode_coverage == 1.0 for s in seeds)
    cov4 = sum(by[s, 4].mode_coverage < 1.0 for s in seeds)
    mse_w = sum(by[s, 4].recon_mse > by[s, 32].recon_mse for s in seeds)
    ood_w = sum(by[s, 4].ood_fraction > by[s, 32].ood_fraction for s in seeds)
    ok = cov32 == 3 and cov4 == 3 and mse_w == 3 and ood_w >= 2
    record(11, "embeddings-collapse capacity sweep", ok,
           f"coverage(32)=1 {cov32}/3, coverage(4)<1 {cov4}/3 "
           f"[{', '.join(str(by[s, 4].mode_coverage) for s in seeds)}], "
           f"MSE(4)>MSE(32) {mse_w}/3, OOD(4)>OOD(32) {ood_w}/3")


def test_12_smoke_default_config(ablation):
    rec = next(r for r in ablation["records"]
               if r["arm"] == "baseline" and r["dim"] == 2 and r["seed"] == 0)
    assert rec["train"]["epochs"] == 200 and rec["train"]["codebook_size"] == 128
    final = rec["metrics"]["test_mse"]
    ok = rec["status"] == "ok" and rec["all_finite"] and final < rec["first_epoch_recon"]
    record(12, "smoke (default config, 200 epochs, dim 2)", ok,
           f"finite={rec['all_finite']}, test MSE {final:.4f} < first-epoch {rec['first_epoch_recon']:.4f}")
