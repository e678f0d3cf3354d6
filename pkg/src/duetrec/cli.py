"""``duetrec`` command line: prepare, train, evaluate, predict, sweep, synth.

Exit status is 0 on success, 1 when a command fails at run time and 2 for
usage errors (argparse's own convention).
"""
import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import dataio, synth
from .config import ConfigError, config_hash, load_resolved, read_ini, resolve, train_config_from, write_ini
from .dataio import SplitConfig
from .duet import TrainConfig, TrainingError, load_model, save_model, train, write_train_log
from .evalkit import evaluate
from .numkit import CheckpointError

log = logging.getLogger("duetrec")

SWEEP_PARAMS = ("desc_len", "dim_word", "dim_entity")
TRAIN_FLAGS = {
    "epochs": int, "lr": float, "dim_word": int, "dim_entity": int, "desc_len": int,
    "seed": int, "batch_size": int, "sample_size": int,
}


class CommandError(RuntimeError):
    """Failure reported to the user as ``error: ...`` with exit status 1."""


def _data_section(data_dir):
    path = os.path.join(data_dir, "config.ini")
    if not os.path.exists(path):
        return {}
    return load_resolved(path)["data"]


def resolve_run_config(data_dir, config_path=None, overrides=None):
    """Defaults, then the config file, then command-line flags."""
    partial = read_ini(config_path) if config_path else {}
    flat = {}
    for section, values in partial.items():
        if section not in ("data", "eval"):
            flat.update(values)
    flat.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        cfg = TrainConfig().replace(**flat)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return resolve(cfg, _data_section(data_dir), partial.get("eval"))


def run_training(data_dir, out_dir, resolved):
    """Train on a prepared dataset and write checkpoint, log and resolved config."""
    ds = dataio.load_dataset(data_dir)
    cfg = train_config_from(resolved)
    digest = config_hash(resolved)
    os.makedirs(out_dir, exist_ok=True)
    model, rows = train(ds, cfg=cfg)
    ckpt = os.path.join(out_dir, "model.ckpt")
    save_model(model, ckpt, {"config_hash": digest, "resolved_config": resolved})
    write_train_log(os.path.join(out_dir, "train_log.csv"), rows)
    write_ini(resolved, os.path.join(out_dir, "config.ini"))
    return model, ckpt, digest


def _read_meta(ckpt):
    try:
        with open(ckpt + ".json", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CheckpointError(f"missing checkpoint sidecar {ckpt + '.json'}") from None


def run_evaluation(model, meta, out_dir):
    threshold = meta.get("resolved_config", {}).get("eval", {}).get("f1_threshold", 0.5)
    report = evaluate(model, model.dataset.test, seed=model.cfg.seed,
                      config_hash=meta.get("config_hash", ""), threshold=threshold)
    report.write(out_dir)
    return report


def cmd_prepare(args):
    interactions = dataio.load_interactions(args.interactions)
    texts = dataio.load_item_texts(args.items) if args.items else {}
    triples = dataio.load_triples(args.triples) if args.triples else []
    cfg = SplitConfig(train_fraction=args.split, seed=args.seed, kcore=args.kcore,
                      positive_threshold=args.threshold)
    ds = dataio.prepare(interactions, texts, triples, cfg, neg_ratio=args.neg_ratio, min_count=args.min_count)
    dataio.save_dataset(ds, args.out)
    data = {"kcore": args.kcore, "threshold": float(args.threshold), "split": float(args.split),
            "seed": args.seed, "neg_ratio": args.neg_ratio, "min_count": args.min_count}
    write_ini({"data": data}, os.path.join(args.out, "config.ini"))
    print(json.dumps(ds.stats, sort_keys=True))


def cmd_train(args):
    overrides = {k: getattr(args, k) for k in TRAIN_FLAGS}
    resolved = resolve_run_config(args.data, args.config, overrides)
    _, ckpt, digest = run_training(args.data, args.out, resolved)
    print(f"wrote {ckpt} (config {digest})")


def cmd_evaluate(args):
    ds = dataio.load_dataset(args.data)
    meta = _read_meta(args.checkpoint)
    model = load_model(args.checkpoint, ds)
    report = run_evaluation(model, meta, args.out)
    print(json.dumps(report.to_json(), sort_keys=True))


def cmd_predict(args):
    ds = dataio.load_dataset(args.data)
    if args.user not in ds.users:
        raise CommandError(f"unknown user {args.user!r}")
    if args.topk < 1:
        raise CommandError("--topk must be positive")
    model = load_model(args.checkpoint, ds)
    u = ds.users[args.user]
    seen = set(model.history.get(u, ()))
    item_ids = sorted(i for i, n in ds.items.items() if n not in seen)
    items = np.array([ds.items[i] for i in item_ids], dtype=np.int64)
    p_l, p_g, p_f = model.predict_batch(np.full(len(items), u), items)
    order = sorted(range(len(items)), key=lambda n: (-p_f[n], item_ids[n]))[:args.topk]
    out = csv.writer(sys.stdout, delimiter="\t", lineterminator="\n")
    out.writerow(["item_id", "p_l", "p_g", "p_f"])
    for n in order:
        out.writerow([item_ids[n], f"{p_l[n]:.6f}", f"{p_g[n]:.6f}", f"{p_f[n]:.6f}"])


def cmd_sweep(args):
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise CommandError(f"--values must be comma-separated integers, got {args.values!r}") from None
    if not values:
        raise CommandError("--values is empty")
    base = {k: getattr(args, k) for k in ("epochs", "seed")}
    rows = []
    for value in values:
        resolved = resolve_run_config(args.data, args.config, {**base, args.param: value})
        run_dir = os.path.join(args.out, f"{args.param}={value}")
        model, ckpt, _ = run_training(args.data, run_dir, resolved)
        report = run_evaluation(model, _read_meta(ckpt), run_dir)
        rows.append((value, report))
        log.info("%s=%d auc=%.4f", args.param, value, report.auc)
    with open(os.path.join(args.out, "sweep.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "auc", "mae", "rmse", "f1"])
        for value, r in rows:
            w.writerow([value] + [f"{getattr(r, k):.6f}" for k in ("auc", "mae", "rmse", "f1")])
    print(f"wrote {os.path.join(args.out, 'sweep.csv')} ({len(rows)} rows)")


def cmd_synth(args):
    cfg = synth.SynthConfig(n_users=args.n_users, n_items=args.n_items, n_topics=args.n_topics,
                            interactions_per_user=args.interactions_per_user, noise_rate=args.noise_rate,
                            seed=args.seed)
    data = synth.generate(cfg, args.out)
    print(json.dumps({k: v for k, v in data.stats.items() if k != "config"}, sort_keys=True))


def build_parser():
    p = argparse.ArgumentParser(prog="duetrec", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prepare", help="binarize, k-core filter, split and tokenize raw data")
    s.add_argument("--interactions", required=True, help="TSV of user, item, rating[, timestamp]")
    s.add_argument("--items", help="JSONL of item_id, title, description")
    s.add_argument("--triples", help="TSV of head, relation, tail")
    s.add_argument("--out", required=True)
    s.add_argument("--kcore", type=int, default=10)
    s.add_argument("--threshold", type=float, default=3.0)
    s.add_argument("--split", type=float, default=0.8, help="train fraction")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--neg-ratio", type=int, default=1)
    s.add_argument("--min-count", type=int, default=2)
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train", help="train the duet model on a prepared dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="INI file with data/local/global/train/eval sections")
    for name, kind in TRAIN_FLAGS.items():
        s.add_argument("--" + name.replace("_", "-"), type=kind, dest=name)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="write report.json and report.csv for the test split")
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("predict", help="top-K unseen items for one user")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--user", required=True)
    s.add_argument("--topk", type=int, default=10)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("sweep", help="train and evaluate once per value of one hyperparameter")
    s.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    s.add_argument("--values", required=True, help="comma-separated integers")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("synth", help="write a synthetic dataset with planted topics")
    d = synth.SynthConfig()
    s.add_argument("--out", required=True)
    s.add_argument("--n-users", type=int, default=d.n_users)
    s.add_argument("--n-items", type=int, default=d.n_items)
    s.add_argument("--n-topics", type=int, default=d.n_topics)
    s.add_argument("--interactions-per-user", type=int, default=d.interactions_per_user)
    s.add_argument("--noise-rate", type=float, default=d.noise_rate)
    s.add_argument("--seed", type=int, default=d.seed)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return 2
    except (CommandError, CheckpointError, TrainingError, synth.SynthConfigError,
            dataio.ParseError, dataio.LinkageError, OSError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and not isinstance(exc, dataio.LinkageError) else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
