"""cgdmer command-line interface.

    cgdmer gen --count 2000 --seed 7 --out data.ndjson
    cgdmer pretrain --dataset data.ndjson --out runs/a [--config cfg.json] [--set epochs=5]
    cgdmer zeroshot --checkpoint runs/a/checkpoint.bin --dataset eval.ndjson --out zs.json
    cgdmer probe --checkpoint runs/a/checkpoint.bin --dataset eval.ndjson --out probe.json
    cgdmer ablate --seeds 3 --out runs/ablate
    cgdmer sweep --out runs/sweep
    cgdmer gradcheck | losscheck
"""

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import corpus
from . import evaluate as ev
from .train import TrainConfig, fit, load_checkpoint

# Ladder of objectives, each adding one term to the previous.
ABLATION_LADDER = (
    ("contrastive-only", dict(lambda0=0.0, lambda1=0.0, lambda2=0.0, lambda3=0.0)),
    ("+e_rec", dict(lambda0=1.0, lambda1=0.0, lambda2=0.0, lambda3=0.0)),
    ("+t_rec", dict(lambda0=1.0, lambda1=1.0, lambda2=0.0, lambda3=0.0)),
    ("+orth", dict(lambda0=1.0, lambda1=1.0, lambda2=1.0, lambda3=0.0)),
    ("+siglip (full)", dict(lambda0=1.0, lambda1=1.0, lambda2=1.0, lambda3=1.0)),
)
SWEEP_N = (10, 25, 50, 100)
SWEEP_R = (0.25, 0.5, 0.75, 0.9)


class CLIError(Exception):
    def __init__(self, kind, message):
        self.kind = kind
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: usage: {message}\n")
        raise SystemExit(2)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def file_digest(path):
    """Git blob digest: sha1 of "blob <size>\\0" + content."""
    with open(path, "rb") as fh:
        data = fh.read()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(args, **forced):
    """JSON config file, then --set key=value pairs, then explicit flags."""
    base = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                base = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CLIError("config", f"cannot read config {args.config}: {exc}") from None
        if not isinstance(base, dict):
            raise CLIError("config", f"{args.config} must hold a JSON object")
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise CLIError("usage", f"--set expects key=value, got {item!r}")
        base[key.split(".")[-1]] = _parse_value(value)
    for key in ("epochs", "batch_size", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    base.update({k: v for k, v in forced.items() if v is not None})
    try:
        return TrainConfig.from_dict(base).validate()
    except (TypeError, ValueError) as exc:
        raise CLIError("config", str(exc)) from None


def manifest_path(out, is_dir):
    """Directory outputs get manifest.json inside; file outputs get <file>.manifest.json beside."""
    return os.path.join(out, "manifest.json") if is_dir else out + ".manifest.json"


def write_manifest(out, command, config=None, dataset=None, seeds=None, extra=None, is_dir=False):
    path = manifest_path(out, is_dir)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config": json.loads(config.to_json()) if config is not None else None,
        "dataset": dataset,
        "dataset_digest": file_digest(dataset) if dataset else None,
        "seeds": seeds,
        "created_unix": int(time.time()),
    }
    if extra:
        manifest.update(extra)
    ev.write_json(manifest, path)
    return manifest


def _read(path):
    try:
        return corpus.read_dataset(path)
    except OSError as exc:
        raise CLIError("io", f"cannot read dataset {path}: {exc.strerror}") from None
    except ValueError as exc:
        raise CLIError("dataset", str(exc)) from None


def _check_dataset_shape(ds, cfg):
    if (ds.leads, ds.length) != (cfg.leads, cfg.length):
        raise CLIError("config", f"dataset is {ds.leads}x{ds.length} but config expects {cfg.leads}x{cfg.length}")


def _default_sample_rate(length):
    # ten-second records
    return length / 10.0


def _prompts(names):
    by_name = {s.name: s.prompt for s in corpus.DEFAULT_CLASSES}
    missing = [n for n in names if n not in by_name]
    if missing:
        raise CLIError("prompts", f"no prompt for classes {missing}")
    return [by_name[n] for n in names]


def _eval_records(args, cfg):
    if args.dataset:
        ds = _read(args.dataset)
        _check_dataset_shape(ds, cfg)
        return ds.records, ds.class_names, args.dataset
    recs = corpus.generate(args.count, args.seed if args.seed is not None else cfg.seed + 1000,
                           leads=cfg.leads, length=cfg.length, sample_rate=_default_sample_rate(cfg.length))
    return recs, corpus.class_names(), None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen(args):
    if args.count < 1:
        raise CLIError("usage", "--count must be at least 1")
    rate = args.sample_rate or _default_sample_rate(args.length)
    try:
        records = corpus.generate(args.count, args.seed, leads=args.leads, length=args.length, sample_rate=rate)
    except ValueError as exc:
        raise CLIError("config", str(exc)) from None
    corpus.write_dataset(records, args.out)
    write_manifest(args.out, "gen", None, None, {"seed": args.seed},
                   {"dataset_digest": file_digest(args.out), "leads": args.leads, "length": args.length,
                    "sample_rate": rate})
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_pretrain(args):
    cfg = resolve_config(args, dataset=args.dataset, output_dir=args.out)
    if not cfg.dataset or not cfg.output_dir:
        raise CLIError("usage", "pretrain needs --dataset and --out (or dataset/output_dir in the config)")
    ds = _read(cfg.dataset)
    _check_dataset_shape(ds, cfg)
    state = None
    if args.resume:
        state = _load(args.resume)
    write_manifest(cfg.output_dir, "pretrain", cfg, cfg.dataset, {"seed": cfg.seed}, is_dir=True)
    t0 = time.time()
    state = fit(cfg, ds.records, cfg.output_dir, state=state, max_steps=args.max_steps,
                checkpoint_every=args.checkpoint_every)
    print(f"trained {state.step} steps in {time.time() - t0:.1f}s; checkpoint in {cfg.output_dir}")
    return 0


def _load(path):
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise CLIError("io", f"cannot read checkpoint {path}: {exc.strerror}") from None
    except ValueError as exc:
        raise CLIError("checkpoint", str(exc)) from None


def cmd_zeroshot(args):
    state = _load(args.checkpoint)
    cfg = state.config
    records, names, path = _eval_records(args, cfg)
    feats = ev.extract_features(state.model, records, state.vocab, cfg.max_len)
    _, res = ev.zero_shot(state.model, records, _prompts(names), state.vocab, cfg.max_len, feats=feats)
    out = ev.eval_report("zeroshot", None, res, names, ev.config_digest(cfg.to_json()), skipped=res.skipped)
    ev.write_json(out, args.out)
    if args.export_embeddings:
        ev.export_embeddings(records, feats, args.export_embeddings)
    write_manifest(args.out, "zeroshot", cfg, path, {"seed": args.seed}, {"checkpoint": args.checkpoint})
    print(f"zero-shot macro AUC {res.macro:.4f}")
    return 0


def cmd_probe(args):
    state = _load(args.checkpoint)
    cfg = state.config
    records, names, path = _eval_records(args, cfg)
    feats = ev.extract_features(state.model, records, state.vocab, cfg.max_len)
    x = ev.select_features(feats, args.features)
    labels = np.array([r.label for r in records])
    results = {}
    for frac in args.fractions:
        res = ev.linear_probe(x, labels, frac, args.probe_seed, args.split_seed, n_classes=len(names))
        results[str(frac)] = ev.eval_report("probe", args.split_seed, res, names, ev.config_digest(cfg.to_json()),
                                            fraction=frac, features=args.features, skipped=res.skipped)
        print(f"probe fraction {frac:g}: macro AUC {res.macro:.4f}")
    ev.write_json(results if len(results) > 1 else next(iter(results.values())), args.out)
    write_manifest(args.out, "probe", cfg, path, {"probe_seed": args.probe_seed, "split_seed": args.split_seed},
                   {"checkpoint": args.checkpoint})
    return 0


def run_trial(cfg, train_records, eval_records, names):
    """Pretrain, then zero-shot and linear probes at every label fraction on held-out records."""
    t0 = time.time()
    state = fit(cfg, train_records)
    seconds = time.time() - t0
    feats = ev.extract_features(state.model, eval_records, state.vocab, cfg.max_len)
    _, zs = ev.zero_shot(state.model, eval_records, _prompts(names), state.vocab, cfg.max_len, feats=feats)
    labels = np.array([r.label for r in eval_records])
    out = {"zeroshot_auc": zs.macro}
    for frac in sorted(ev.PROBE_FRACTIONS, reverse=True):
        res = ev.linear_probe(feats["shared"], labels, frac, cfg.seed, n_classes=len(names))
        out["probe_auc" if frac == 1.0 else f"probe_auc_{frac:g}"] = res.macro
    out["final_full"] = state.epoch_means[max(state.epoch_means)]["full"]
    out["train_seconds"] = seconds
    return out


def run_trials(jobs, trials):
    """trials: list of (cfg, train_records, eval_records); results in input order."""
    names = corpus.class_names()
    if jobs <= 1:
        for cfg, tr, te in trials:
            yield run_trial(cfg, tr, te, names)
        return
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(run_trial, cfg, tr, te, names) for cfg, tr, te in trials]
        for f in futures:
            yield f.result()


def _trial_data(args, cfg, seed):
    rate = _default_sample_rate(cfg.length)
    train_recs = corpus.generate(args.count, seed, leads=cfg.leads, length=cfg.length, sample_rate=rate)
    eval_recs = corpus.generate(args.eval_count, seed + 1000, leads=cfg.leads, length=cfg.length, sample_rate=rate)
    return train_recs, eval_recs


def cmd_ablate(args):
    base = resolve_config(args)
    rows, trials, labels = [], [], []
    for s in range(args.seeds):
        seed = base.seed + s
        train_recs, eval_recs = _trial_data(args, base, seed)
        for name, lam in ABLATION_LADDER:
            trials.append((base.replace(seed=seed, **lam), train_recs, eval_recs))
            labels.append((name, seed))
    for (name, seed), res in zip(labels, run_trials(args.jobs, trials)):
        rows.append({"variant": name, "seed": seed, **res})
        print(f"{name:<16} seed {seed}: zero-shot {res['zeroshot_auc']:.4f}  probe {res['probe_auc']:.4f}",
              flush=True)
    os.makedirs(args.out, exist_ok=True)
    _write_csv(os.path.join(args.out, "ablation.csv"), rows)
    table = ["| variant | zero-shot AUC (median) | probe AUC (median) |", "|---|---|---|"]
    for name, _ in ABLATION_LADDER:
        zs = np.median([r["zeroshot_auc"] for r in rows if r["variant"] == name])
        pr = np.median([r["probe_auc"] for r in rows if r["variant"] == name])
        table.append(f"| {name} | {zs:.4f} | {pr:.4f} |")
    with open(os.path.join(args.out, "ablation.md"), "w") as fh:
        fh.write("\n".join(table) + "\n")
    print("\n".join(table))
    seeds = [base.seed + s for s in range(args.seeds)]
    write_manifest(args.out, "ablate", base, None, {"seeds": seeds}, is_dir=True)
    return 0


def cmd_sweep(args):
    base = resolve_config(args)
    rows, trials, grid = [], [], []
    train_recs, eval_recs = _trial_data(args, base, base.seed)
    for n in args.n_values:
        for r in args.r_values:
            try:
                cfg = base.replace(n_patches=n, mask_ratio=r).validate()
            except ValueError as exc:
                print(f"skip N={n} r={r}: {exc}")
                continue
            trials.append((cfg, train_recs, eval_recs))
            grid.append((n, r))
    for (n, r), res in zip(grid, run_trials(args.jobs, trials)):
        rows.append({"n_patches": n, "mask_ratio": r, **res})
        print(f"N={n:<4} r={r:<5} zero-shot {res['zeroshot_auc']:.4f}  probe {res['probe_auc']:.4f}", flush=True)
    os.makedirs(args.out, exist_ok=True)
    _write_csv(os.path.join(args.out, "sweep.csv"), rows)
    write_manifest(args.out, "sweep", base, None, {"seed": base.seed}, is_dir=True)
    return 0


def _write_csv(path, rows):
    if not rows:
        open(path, "w").close()
        return
    keys = list(rows[0])
    with open(path, "w") as fh:
        fh.write(",".join(keys) + "\n")
        for r in rows:
            fh.write(",".join(repr(r[k]) if isinstance(r[k], float) else str(r[k]) for k in keys) + "\n")


def cmd_gradcheck(args):
    from .verify.losses import LOSSES, check_loss
    from .verify.primitives import PRIMITIVES, check_primitive

    failed = 0
    for kind, names, check in (("primitive", PRIMITIVES, check_primitive), ("loss", LOSSES, check_loss)):
        for name in names:
            res = check(name, instances=args.instances, seed=args.seed)
            failed += not res.passed
            print(f"{'PASS' if res.passed else 'FAIL'} {kind} {name}: max rel err {res.max_rel_err:.2e}", flush=True)
    return 1 if failed else 0


def cmd_losscheck(args):
    from .verify.oracles import run_oracles

    failed = 0
    for oracle, ok, err in run_oracles():
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} {oracle.name}: |err| {err:.2e} (tol {oracle.tol:g})")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _config_flags(p):
    p.add_argument("--config", help="JSON file mirroring the training config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)


def _floats(text):
    return [float(v) for v in text.split(",")]


def _ints(text):
    return [int(v) for v in text.split(",")]


def build_parser():
    ap = _Parser(prog="cgdmer", description="Contrastive-generative ECG/report pretraining at desk scale.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="write a synthetic dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--leads", type=int, default=12)
    p.add_argument("--length", type=int, default=250)
    p.add_argument("--sample-rate", dest="sample_rate", type=float, help="Hz; default gives ten-second records")
    p.set_defaults(func=cmd_gen, parser=p)

    p = sub.add_parser("pretrain", help="train on a dataset file")
    _config_flags(p)
    p.add_argument("--dataset")
    p.add_argument("--out")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int, default=0)
    p.set_defaults(func=cmd_pretrain, parser=p)

    for name, func in (("zeroshot", cmd_zeroshot), ("probe", cmd_probe)):
        p = sub.add_parser(name, help=f"{name} evaluation of a checkpoint")
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--dataset", help="evaluation dataset; generated when omitted")
        p.add_argument("--count", type=int, default=1000, help="records to generate when --dataset is omitted")
        p.add_argument("--seed", type=int, help="generation seed when --dataset is omitted")
        p.add_argument("--out", required=True)
        if name == "probe":
            p.add_argument("--fractions", type=_floats, default=list(ev.PROBE_FRACTIONS))
            p.add_argument("--features", choices=ev.FEATURE_KINDS, default="shared")
            p.add_argument("--split-seed", dest="split_seed", type=int, default=0)
            p.add_argument("--probe-seed", dest="probe_seed", type=int, default=0)
        else:
            p.add_argument("--export-embeddings", dest="export_embeddings", help="NDJSON of h_sh / h_sp per record")
        p.set_defaults(func=func, parser=p)

    for name, func in (("ablate", cmd_ablate), ("sweep", cmd_sweep)):
        p = sub.add_parser(name, help="objective ladder" if name == "ablate" else "patch count x mask ratio grid")
        _config_flags(p)
        p.add_argument("--out", required=True)
        p.add_argument("--count", type=int, default=2000 if name == "ablate" else 500)
        p.add_argument("--eval-count", dest="eval_count", type=int, default=1000 if name == "ablate" else 500)
        p.add_argument("--jobs", type=int, default=1, help="run independent trials in this many processes")
        if name == "ablate":
            p.add_argument("--seeds", type=int, default=3)
        else:
            p.add_argument("--n-values", dest="n_values", type=_ints, default=list(SWEEP_N))
            p.add_argument("--r-values", dest="r_values", type=_floats, default=list(SWEEP_R))
        p.set_defaults(func=func, parser=p)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every primitive and loss")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck, parser=p)

    p = sub.add_parser("losscheck", help="closed-form and scalar-loop loss oracles")
    p.set_defaults(func=cmd_losscheck, parser=p)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CLIError as exc:
        if exc.kind in ("usage", "config"):
            args.parser.print_usage(sys.stderr)
        sys.stderr.write(f"error: {exc.kind}: {exc}\n")
        return 2
    except OSError as exc:
        sys.stderr.write(f"error: io: {exc}\n")
        return 1
    except ValueError as exc:
        sys.stderr.write(f"error: value: {str(exc).splitlines()[0] if str(exc) else type(exc).__name__}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
