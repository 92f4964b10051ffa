"""End-to-end acceptance checks, one PASS/FAIL line per criterion.

The pretraining criteria (6, 7) train six default-config models on 2,000
synthetic pairs each; on one core that takes roughly half an hour.  Set
CGDMER_JOBS to run the trials in parallel processes.
"""

import math
import os
import time

import numpy as np
import pytest

from cgdmer import cli, corpus
from cgdmer import numerics as nx
from cgdmer.disentangle import HeadSet, loss_orth, project
from cgdmer.ecg_mae import ECGMAE, EncoderConfig, loss_e_rec, masks_for_batch
from cgdmer.ecg_tokenizer import patchify, round_half_away, select_mask
from cgdmer.evaluate import macro_auc, one_hot
from cgdmer.text_mae import TextBatch, TextMAE, Vocab, loss_t_rec, mask_text, tokenize_text
from cgdmer.train import TrainConfig, fit, load_checkpoint
from cgdmer.verify.losses import LOSSES, TINY, check_loss
from cgdmer.verify.oracles import ref_pair_auc, run_oracles
from cgdmer.verify.primitives import PRIMITIVES, check_primitive

SEEDS = (0, 1, 2)
CONTRASTIVE_ONLY = dict(lambda0=0.0, lambda1=0.0, lambda2=0.0, lambda3=0.0)


def test_1_gradient_fidelity(report):
    t0 = time.time()
    worst, failed = 0.0, []
    for kind, names, check in (("primitive", PRIMITIVES, check_primitive), ("loss", LOSSES, check_loss)):
        for name in names:
            res = check(name, instances=20, seed=0)
            worst = max(worst, res.max_rel_err)
            if not res.passed:
                failed.append(f"{kind} {name}")
    secs = time.time() - t0
    ok = not failed and worst <= 1e-4 and secs < 120
    report(1, ok, f"{len(PRIMITIVES)} primitives + {len(LOSSES)} losses x 20 instances, worst rel err {worst:.2e} "
                  f"(tol 1e-4), {secs:.0f}s (limit 120s){'; failed: ' + ', '.join(failed) if failed else ''}")
    assert ok


def test_2_loss_oracles(report):
    t0 = time.time()
    results = run_oracles()
    secs = time.time() - t0
    bad = [o.name for o, passed, _ in results if not passed]
    trivial = max(err for o, _, err in results if o.kind == "trivial")
    derived = max(err for o, _, err in results if o.kind == "derived")
    ok = not bad and secs < 60
    report(2, ok, f"{len(results)} oracles, worst trivial err {trivial:.1e} (tol 1e-6), worst derived err "
                  f"{derived:.1e} (tol 1e-8), {secs:.1f}s{'; failed: ' + ', '.join(bad) if bad else ''}")
    assert ok


def test_3_masking_invariants(report):
    rng = np.random.default_rng(2024)
    checked = rejected = 0
    for _ in range(1000):
        leads, n = int(rng.integers(1, 13)), int(rng.integers(2, 101))
        r, seed = float(rng.uniform(0.01, 0.99)), int(rng.integers(1 << 31))
        k = round_half_away(n * r)
        if not 0 < k < n:
            with pytest.raises(ValueError):
                select_mask(leads, n, r, seed)
            rejected += 1
            continue
        m = select_mask(leads, n, r, seed)
        assert len(m) == leads * k
        assert (m.mask.sum(axis=1) == k).all()
        checked += 1
    deviations = []
    for n, r in ((4, 0.5), (8, 0.75)):
        freq = np.mean([select_mask(1, n, r, s).mask[0] for s in range(10000)], axis=0)
        deviations.append(float(np.abs(freq - r).max()))
    ok = max(deviations) <= 0.02
    report(3, ok, f"{checked} valid draws exact (+{rejected} degenerate draws rejected); Monte-Carlo max |freq - r| "
                  f"{max(deviations):.4f} over 10,000 draws (tol 0.02)")
    assert ok


def test_4_disentanglement_trainability(report):
    rng = np.random.default_rng(0)
    heads = HeadSet(rng, 16, 16, dtype=np.float64)
    xe, xt = nx.Tensor(rng.normal(size=(8, 16))), nx.Tensor(rng.normal(size=(8, 16)))
    params = heads.parameters()
    opt = nx.OptimizerState.for_params(params, lr_max=1e-3, weight_decay=0.0, total_steps=500)
    history = []
    for _ in range(500):
        loss = loss_orth(project(xe, heads, "ecg"), project(xt, heads, "text"))
        history.append(loss.item())
        nx.adamw_step(params, nx.backward(loss, params), opt, lr=1e-3)
    reached = next((i for i, v in enumerate(history) if v < 1e-3), None)
    bounded = all(0.0 <= v <= 2.0 for v in history)
    ok = reached is not None and bounded
    report(4, ok, f"L_orth {history[0]:.3f} -> {min(history):.2e}, below 1e-3 at step {reached} (limit 500); "
                  f"range [{min(history):.2e}, {max(history):.3f}] within [0, 2]: {bounded}")
    assert ok


def _sinusoids(count, leads, length, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(length)
    freq = rng.uniform(1.5, 3.5, size=(count, 1, 1)) / length
    phase = rng.uniform(0.0, 2 * np.pi, size=(count, leads, 1))
    return np.sin(2 * np.pi * freq * t + phase).astype(np.float32)


def _e_rec_run(seed, data, n, ratio, eval_masks):
    leads, length = data.shape[1:]
    mae = ECGMAE(np.random.default_rng(seed), leads, n, length // n, EncoderConfig(2, 2, 16, 32), 1, [4, 16], groups=2)
    params = mae.parameters()
    opt = nx.OptimizerState.for_params(params, lr_max=1e-2, weight_decay=0.0, total_steps=300)
    for step in range(300):
        x = data[np.random.default_rng([seed, step]).choice(len(data), 16, replace=False)]
        masks = masks_for_batch(leads, n, ratio, [[seed, step, i] for i in range(16)])
        out = mae.masked_forward(x, masks)
        loss = loss_e_rec(out.reconstructed_patches, mae.patch_targets(x, out.masked_index))
        nx.adamw_step(params, nx.backward(loss, params), opt, lr=nx.cosine_lr(step, opt))
    with nx.no_grad():
        out = mae.masked_forward(data, eval_masks)
        return loss_e_rec(out.reconstructed_patches, mae.patch_targets(data, out.masked_index)).item()


SENTENCES = [
    "Normal sinus rhythm.",
    "Sinus tachycardia at rest.",
    "Sinus bradycardia, otherwise normal.",
    "Irregular rhythm with variable intervals.",
    "Atrial fibrillation suspected.",
    "Left axis deviation noted.",
    "Borderline ecg, clinical correlation advised.",
    "No acute changes compared with prior.",
    "Low voltage in limb leads.",
    "Possible inferior infarct, age undetermined.",
]


def _t_rec_run(seed):
    vocab = Vocab.build(SENTENCES)
    model = TextMAE(np.random.default_rng(seed), len(vocab), 16, 8, 2, 16, 1, 1)
    ids = np.stack([tokenize_text(s, vocab, 16) for s in SENTENCES])
    params = model.parameters()
    opt = nx.OptimizerState.for_params(params, lr_max=3e-3, weight_decay=1e-5, total_steps=500)
    bound = 0.5 * math.log(len(vocab))
    for step in range(500):
        batch = TextBatch.from_masked([mask_text(x, 0.15, [seed, step, i]) for i, x in enumerate(ids)])
        loss = loss_t_rec(model, batch)
        if loss.item() < bound:
            return step, loss.item(), bound
        nx.adamw_step(params, nx.backward(loss, params), opt, lr=3e-3)
    return None, loss.item(), bound


def test_5_reconstruction_learning(report):
    leads, length, n, ratio = 2, 40, 4, 0.5
    data = _sinusoids(64, leads, length)
    grid = patchify(data, n).patches.astype(np.float64)
    mean_patch = grid.mean(axis=0)
    eval_masks = masks_for_batch(leads, n, ratio, [[99, i] for i in range(len(data))])
    baseline = np.mean([np.mean([((grid[b, l, j] - mean_patch[l, j]) ** 2).sum()
                                 for l in range(leads) for j in np.flatnonzero(m.mask[l])])
                        for b, m in enumerate(eval_masks)])
    e_losses = [_e_rec_run(s, data, n, ratio, eval_masks) for s in SEEDS]
    t_runs = [_t_rec_run(s) for s in SEEDS]
    e_ok = np.median(e_losses) < baseline
    t_ok = sum(step is not None for step, _, _ in t_runs) >= 2
    ok = bool(e_ok and t_ok)
    report(5, ok, f"L_e_rec after 300 steps {np.median(e_losses):.3f} (median, seeds "
                  f"{', '.join(f'{v:.3f}' for v in e_losses)}) vs mean-patch baseline {baseline:.3f}; "
                  f"L_t_rec below 0.5 ln V = {t_runs[0][2]:.3f} at steps {[s for s, _, _ in t_runs]} (limit 500)")
    assert ok


# ---------------------------------------------------------------------------
# end-to-end pretraining
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def trials():
    """Full objective and contrastive-only, three seeds, default config, 2,000 pairs each."""
    jobs = int(os.environ.get("CGDMER_JOBS", "1"))
    specs, plan = [], []
    for seed in SEEDS:
        cfg = TrainConfig(seed=seed)
        rate = cfg.length / 10.0
        train = corpus.generate(2000, seed, leads=cfg.leads, length=cfg.length, sample_rate=rate)
        held = corpus.generate(1000, seed + 1000, leads=cfg.leads, length=cfg.length, sample_rate=rate)
        for variant, kw in (("full", {}), ("contrastive-only", CONTRASTIVE_ONLY)):
            specs.append((cfg.replace(**kw), train, held))
            plan.append((variant, seed))
    results = {}
    for key, res in zip(plan, cli.run_trials(jobs, specs)):
        results[key] = res
    return results


def test_6_end_to_end_pretraining(report, trials):
    full = [trials["full", s] for s in SEEDS]
    zs = float(np.median([r["zeroshot_auc"] for r in full]))
    probe = {f: float(np.median([r[k] for r in full]))
             for f, k in ((0.01, "probe_auc_0.01"), (0.1, "probe_auc_0.1"), (1.0, "probe_auc"))}
    minutes = max(r["train_seconds"] for r in full) / 60
    monotone = probe[0.01] <= probe[0.1] <= probe[1.0]
    per_seed = ", ".join(f"{r['zeroshot_auc']:.3f}" for r in full)
    ok = zs >= 0.80 and probe[1.0] >= 0.85 and monotone and minutes <= 30
    report(6, ok, f"zero-shot macro AUC {zs:.4f} (median of 3, need >= 0.80; seeds {per_seed}); probe 1%/10%/100% "
                  f"{probe[0.01]:.4f}/{probe[0.1]:.4f}/{probe[1.0]:.4f} (need 100% >= 0.85, monotone: {monotone}); "
                  f"slowest run {minutes:.1f} min (limit 30)")
    assert ok


def test_7_ablation_ordering(report, trials):
    full = float(np.median([trials["full", s]["zeroshot_auc"] for s in SEEDS]))
    base = float(np.median([trials["contrastive-only", s]["zeroshot_auc"] for s in SEEDS]))
    ok = full - base >= 0.02
    report(7, ok, f"zero-shot median full {full:.4f} vs contrastive-only {base:.4f}, margin {full - base:+.4f} "
                  f"(need >= +0.02)")
    assert ok


def test_8_determinism_and_persistence(report, tmp_path):
    cfg = TrainConfig(**{**TINY, "batch_size": 8, "epochs": 2})
    records = corpus.generate(24, 5, leads=cfg.leads, length=cfg.length, sample_rate=4.0)
    fit(cfg, records, tmp_path / "a")
    fit(cfg, records, tmp_path / "b")
    same_csv = (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    fit(cfg, records, tmp_path / "c", max_steps=4)
    state = load_checkpoint(tmp_path / "c" / "checkpoint.bin")
    fit(cfg, records, tmp_path / "c", state=state)
    resumed = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "c" / f).read_bytes()
                  for f in ("metrics.csv", "checkpoint.bin", "epochs.json"))
    ok = same_csv and resumed
    report(8, ok, f"metrics CSV identical across identical-seed runs: {same_csv}; resume at step 4 of 6 "
                  f"matches uninterrupted run (metrics, checkpoint, epoch summaries): {resumed}")
    assert ok


def test_9_metric_correctness(report):
    rng = np.random.default_rng(9)
    worst, done = 0.0, 0
    while done < 100:
        m, c = int(rng.integers(4, 30)), int(rng.integers(2, 6))
        scores = np.round(rng.normal(size=(m, c)), 1)  # coarse rounding forces ties
        labels = one_hot(rng.integers(0, c, size=m), c)
        if labels.sum(axis=0).max() == m:
            continue  # a single class present: no AUC is defined
        res = macro_auc(scores, labels)
        for k, v in res.per_class.items():
            worst = max(worst, abs(v - ref_pair_auc(scores[:, k].tolist(), labels[:, k].tolist())))
        done += 1
    ok = worst <= 1e-12
    report(9, ok, f"macro_auc vs exhaustive pair counting on {done} tied score matrices, max |diff| {worst:.1e} "
                  f"(tol 1e-12)")
    assert ok
