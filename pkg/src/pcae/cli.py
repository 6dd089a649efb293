"""Command-line entry point: synth, ingest, train and eval subcommands.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .config import TRAIN_PRESETS, dump_config, load_config
from .dataset import ingest, read_manifest
from .errors import CheckpointError, InvalidInput, NumericalAbort, PcaeError, ShapeError
from .evaluation import (
    attention_summary,
    dense_pool,
    extract_features,
    mean_chamfer,
    received_attention,
    retrieval_map,
    train_linear_svm,
    upsample,
)
from .geometry import PointCloud, build_pyramid, write_xyz
from .model import forward, make_batch
from .storage import load_checkpoint, load_dataset, save_checkpoint, save_dataset
from .synthetic import write_fixture
from .training import train, write_history_csv

log = logging.getLogger("pcae")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
TASKS = ("classify", "retrieve", "upsample", "attention", "reconstruct")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad arguments; 2 means a data error here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _existing(path, what):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _threads(n):
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


# ----------------------------------------------------------------- commands


def cmd_synth(args):
    manifest = write_fixture(args.out, args.per_class, args.test_per_class, args.seed)
    print(f"wrote {manifest}")


def cmd_ingest(args):
    entries = read_manifest(_existing(args.manifest, "manifest"))
    ds, errors = ingest(entries, args.points, args.seed)
    for path, msg in errors:
        print(f"error: {path}: {msg}", file=sys.stderr)
    if len(ds) == 0:
        raise InvalidInput(f"no valid entries in {args.manifest}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(out, ds)
    print(f"wrote {len(ds)} clouds x {ds.n_points} points to {out} ({len(errors)} skipped)")


def cmd_train(args):
    data = load_dataset(_existing(args.data, "dataset"))
    if args.config:
        _existing(args.config, "config file")
    overrides = [tuple(s.split("=", 1)) for s in args.set]
    if any(len(p) != 2 for p in overrides):
        raise UsageError("--set expects key=value")
    model, tcfg = load_config(args.config, overrides, train=TRAIN_PRESETS["desk"])
    train_ds = data.subset("train") if "train" in data.splits else data
    if train_ds.n_points != model.n_points:
        raise InvalidInput(f"dataset has {train_ds.n_points} points per cloud, config expects {model.n_points}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(model, tcfg))

    def progress(rec):
        log.info("epoch %d  local %.5f  global %.5f  total %.5f  lr %.2e",
                 rec.epoch, rec.local, rec.global_, rec.total, rec.lr)

    clouds = [PointCloud(p, i) for p, i in zip(train_ds.points, train_ds.ids)]
    res = train(clouds, model, tcfg, checkpoint_dir=out if tcfg.save_every else None, progress=progress)
    save_checkpoint(out / "model.ckpt", res.params, model, {"epochs": tcfg.epochs, "seed": tcfg.seed})
    write_history_csv(out / "loss.csv", res.history)
    if res.history:
        plotting.plot_loss_history(res.history, out / "loss.png")
        last = res.history[-1]
        print(f"final loss total {last.total:.6f} (local {last.local:.6f}, global {last.global_:.6f})")
    print(f"wrote {out / 'model.ckpt'}")


def _clouds(ds):
    return [PointCloud(p, i) for p, i in zip(ds.points, ds.ids)]


def _eval_split(data):
    return data.subset("test") if "test" in data.splits else data


def task_classify(data, params, config, out, args):
    train_ds = data.subset("train") if "train" in data.splits else data
    test_ds = _eval_split(data)
    ftr = extract_features(_clouds(train_ds), params, config, train_ds.labels, args.seed)
    fte = extract_features(_clouds(test_ds), params, config, test_ds.labels, args.seed)
    ftr.write_csv(out / "features_train.csv")
    fte.write_csv(out / "features_test.csv")
    svm = train_linear_svm(ftr, seed=args.seed)
    pred = np.asarray(svm.predict(fte.features))
    truth = np.asarray(fte.labels)
    acc = float(np.mean(pred == truth)) if len(truth) else 0.0
    print(f"accuracy: {acc:.4f}")
    rows = []
    for cls in sorted(set(fte.labels)):
        mask = truth == cls
        hit = float(np.mean(pred[mask] == cls))
        rows.append((cls, int(mask.sum()), hit))
        print(f"  {cls:<16} n={int(mask.sum()):<5d} accuracy {hit:.4f}")
    with open(out / "classification.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "count", "accuracy"])
        w.writerows(rows)
        w.writerow(["all", len(truth), f"{acc:.4f}"])


def task_retrieve(data, params, config, out, args):
    ds = _eval_split(data)
    table = extract_features(_clouds(ds), params, config, ds.labels, args.seed)
    res = retrieval_map(table)
    print(f"mAP: {res.mAP:.4f}")
    res.write_pr_csv(out / "pr_curve.csv")
    if len(res.recall):
        plotting.plot_pr_curve(res.recall, res.precision, out / "pr_curve.png", f"mAP {res.mAP:.3f}")


def task_upsample(data, params, config, out, args):
    ds = _eval_split(data)
    target = args.target or min(4 * config.n_points, config.dense_size)
    pairs, rows = [], []
    for k, cloud in enumerate(_clouds(ds)[: args.limit or None]):
        dense = upsample(cloud, target, params, config, args.seed)
        write_xyz(out / f"{cloud.id}_up{target}.xyz", dense)
        pairs.append((dense.points, cloud.points))
        rows.append((cloud.id, len(dense), mean_chamfer([pairs[-1]])))
        if k == 0:
            plotting.plot_clouds([cloud.points, dense.points], out / f"{cloud.id}_upsample.png",
                                 ["input", f"upsampled x{target}"])
    with open(out / "upsample_report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "points", "chamfer"])
        w.writerows(rows)
    print(f"upsampled {len(rows)} clouds to {target} points; mCD {mean_chamfer(pairs):.6f}")


def _write_matrix_rows(path, prefix_names, blocks):
    """``blocks`` is a list of (prefix tuple, 2-D array)."""
    width = max(b.shape[1] for _, b in blocks)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(prefix_names) + ["row"] + [f"c{j}" for j in range(width)])
        for prefix, mat in blocks:
            for i, row in enumerate(mat):
                w.writerow(list(prefix) + [i] + [repr(float(v)) for v in row])


def task_attention(data, params, config, out, args):
    ds = _eval_split(data)
    frozen = params.frozen()
    vectors = []
    for k, cloud in enumerate(_clouds(ds)[: args.limit or None]):
        batch = make_batch([cloud], config, args.seed)
        maps = forward(frozen, batch, config, keep_attention=True).encoder.attention_maps
        if "region" in maps:
            region = np.asarray(maps["region"][0])[0]
            np.savetxt(out / f"{cloud.id}_attn_region.csv", region, delimiter=",", fmt="%.17g")
            for i, (cs, rv) in enumerate(zip(attention_summary(region), received_attention(region))):
                vectors.append((cloud.id, "region", i, cs, rv))
            if k == 0:
                plotting.plot_attention_vector(received_attention(region), out / f"{cloud.id}_attn_region.png",
                                               "attention received per region")
        if "scale" in maps:
            scale = np.asarray(maps["scale"][0])[0]  # (M, T, T)
            _write_matrix_rows(out / f"{cloud.id}_attn_scale.csv", ["region"],
                               [((m,), scale[m]) for m in range(len(scale))])
            cs = np.mean([attention_summary(s) for s in scale], axis=0)
            rv = np.mean([received_attention(s) for s in scale], axis=0)
            vectors += [(cloud.id, "scale", i, a, b) for i, (a, b) in enumerate(zip(cs, rv))]
        if "point" in maps:
            blocks = []
            for t, beta in enumerate(maps["point"]):
                beta = np.asarray(beta)[0]  # (M, K_t, K_t)
                blocks += [((m, t), beta[m]) for m in range(len(beta))]
            _write_matrix_rows(out / f"{cloud.id}_attn_point.csv", ["region", "scale"], blocks)
        if not maps:
            raise InvalidInput("the checkpoint has every attention block disabled")
    with open(out / "attention_vectors.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "level", "index", "column_sum", "received"])
        w.writerows((i, lv, j, repr(float(a)), repr(float(b))) for i, lv, j, a, b in vectors)
    print(f"wrote attention maps for {len({v[0] for v in vectors})} clouds")


def task_reconstruct(data, params, config, out, args):
    ds = _eval_split(data)
    frozen = params.frozen()
    pairs = []
    for k, cloud in enumerate(_clouds(ds)[: args.limit or None]):
        pyr = build_pyramid(cloud, config.n_regions, config.scales, args.seed)
        dec = forward(frozen, make_batch([(cloud, pyr)], config), config).decoder
        recon = dec.reconstructed_cloud.data[0]
        write_xyz(out / f"{cloud.id}_recon.xyz", recon)
        for t, area in enumerate(dec.reconstructed_areas):
            write_xyz(out / f"{cloud.id}_areas_scale{t}.xyz", area.data[0].reshape(-1, 3))
        pairs.append((recon, cloud.points))
        if k == 0:
            plotting.plot_clouds([cloud.points, recon, dense_pool(cloud, params, config, args.seed)],
                                 out / f"{cloud.id}_reconstruct.png", ["input", "global", "areas"])
    print(f"reconstructed {len(pairs)} clouds; mean Chamfer {mean_chamfer(pairs):.6f}")


TASK_FUNCS = {
    "classify": task_classify,
    "retrieve": task_retrieve,
    "upsample": task_upsample,
    "attention": task_attention,
    "reconstruct": task_reconstruct,
}


def cmd_eval(args):
    data = load_dataset(_existing(args.data, "dataset"))
    params, config, _ = load_checkpoint(_existing(args.ckpt, "checkpoint"))
    if data.n_points != config.n_points:
        raise CheckpointError(
            f"checkpoint expects clouds of {config.n_points} points (M={config.n_regions}, "
            f"K={list(config.scales)}), dataset has {len(data)} clouds of {data.n_points} points")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    TASK_FUNCS[args.task](data, params, config, out, args)


# ------------------------------------------------------------------ parsing


def build_parser():
    p = _Parser(prog="pcae", description="Multi-scale attention point-cloud auto-encoder.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    p.add_argument("--threads", type=int, default=0, help="cap BLAS threads (1 = fully deterministic)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write the synthetic sphere/box/plane fixture and its manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--per-class", type=int, default=4)
    s.add_argument("--test-per-class", type=int, default=2)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", help="sample and normalize manifest entries into a dataset file")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--points", type=int, default=256)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", help="train the auto-encoder on the train split")
    s.add_argument("--data", required=True)
    s.add_argument("--config", help="key = value file (model.* / train.* fields, preset names)")
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="run a downstream task with a trained checkpoint")
    s.add_argument("--data", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--task", required=True, choices=TASKS)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--target", type=int, default=0, help="upsample output size (default 4N, capped at the dense pool)")
    s.add_argument("--limit", type=int, default=0, help="process at most this many clouds")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with _threads(args.threads):
            args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InvalidInput, ShapeError, CheckpointError, PcaeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
