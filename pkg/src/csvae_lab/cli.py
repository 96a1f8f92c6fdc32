"""Command-line surface.

Subcommands: generate-data, train, eval, switch, plot-latent, inspect.
Exit codes: 0 success, 2 config error (argparse usage errors share this code),
3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import (DESK_MILESTONES, RunConfig, load_config, serialize_config,
                     validate_config)
from .checkpoint import (load_classifier, load_model, model_spec_from_config,
                         save_classifier, save_model)
from .data import (SPLIT_NAMES, TEST, GlyphConfig, LabeledDataset, load_dataset,
                   make_glyphs, make_swiss_roll, pair_group_size, save_dataset, split)
from .errors import ConfigError, CsvaeLabError, DataError, NumericalError
from .evaluation import (eval_identity_mse, eval_switch_accuracy, linear_probe_accuracy,
                         mi_probe, train_attr_classifier, encode_z_means, encode_w_means)
from .figures import mosaic, svg_scatter, write_pgm
from .manipulate import (class_latent_mean, embed_block, pca_sampling_points,
                         switch_condvae, switch_csvae, switch_vae, w_grid, w_pca)
from .models import TrainState, build_model, reconstruct, train
from .optim import LrSchedule


def _resolved_config(cfg: RunConfig, dataset: LabeledDataset) -> RunConfig:
    """Fill x_shape / k from the dataset so the config echo is self-contained."""
    model = replace(cfg.model)
    if not model.x_shape:
        model.x_shape = tuple(int(d) for d in dataset.dims)
    if model.k == 0:
        model.k = dataset.k
    return replace(cfg, model=model)


def _load_dataset_from_config(cfg: RunConfig, override_path: str | None) -> LabeledDataset:
    path = override_path or cfg.data.path
    if path:
        return load_dataset(path)
    if cfg.data.generator == "swiss-roll":
        ds = make_swiss_roll(cfg.data.n, cfg.data.noise_sd, cfg.data.seed)
        return split(ds, cfg.data.split, seed=cfg.data.seed)
    if cfg.data.generator == "glyphs":
        gcfg = GlyphConfig(size=cfg.data.size, attributes=tuple(cfg.data.attributes),
                           paired=cfg.data.paired)
        ds = make_glyphs(gcfg, cfg.data.n, cfg.data.seed)
        group = pair_group_size(ds) if cfg.data.paired else 1
        return split(ds, cfg.data.split, seed=cfg.data.seed, group_size=group)
    raise ConfigError("config names neither data.path nor data.generator")


def _schedule(cfg: RunConfig) -> LrSchedule:
    return LrSchedule(initial_lr=cfg.optim.lr, milestones=tuple(cfg.optim.milestones),
                      gamma=cfg.optim.gamma)


def _write_kv(path: Path, records: dict) -> None:
    with open(path, "w") as fh:
        for key in sorted(records):
            fh.write(f"{key} = {records[key]}\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- generate-data ---------------------------------------------------------------------


def cmd_generate_data(args) -> int:
    if args.generator == "swiss-roll":
        ds = make_swiss_roll(args.n, args.noise_sd, args.seed)
        group = 1
    else:
        attrs = tuple(a.strip() for a in args.attributes.split(",") if a.strip())
        gcfg = GlyphConfig(size=args.size, attributes=attrs, paired=args.paired)
        ds = make_glyphs(gcfg, args.n, args.seed)
        group = pair_group_size(ds) if args.paired else 1
    props = tuple(float(p) for p in args.split.split(","))
    ds = split(ds, props, seed=args.seed, group_size=group)
    save_dataset(ds, args.out)
    counts = np.bincount(ds.split_tags, minlength=3)
    print(f"wrote {args.out}: n={ds.n} dims={ds.dims} k={ds.k}")
    for i, name in enumerate(ds.attr_names):
        print(f"  attr {name}: marginal {ds.y[:, i].mean():.4f}")
    print(f"  split: " + " ".join(f"{n}={c}" for n, c in zip(SPLIT_NAMES, counts)))
    return 0


# -- train -----------------------------------------------------------------------------


def _loss_csv(path: Path, curve, schedule: LrSchedule, start_epoch: int) -> None:
    from .optim import lr_at
    with open(path, "w") as fh:
        fh.write("epoch,recon,kl_w,kl_z,m2,n,main_total,adversary_total,lr\n")
        for i, lb in enumerate(curve):
            epoch = start_epoch + i
            vals = lb.as_dict()
            fh.write(f"{epoch}," + ",".join(f"{vals[k]:.10g}" for k in
                     ("recon", "kl_w", "kl_z", "m2", "n", "main_total",
                      "adversary_total")) + f",{lr_at(schedule, epoch):.10g}\n")


def cmd_train(args) -> int:
    state = None
    if args.resume:
        model, cfg, state = load_model(args.resume)
        if state is None:
            raise DataError("checkpoint carries no optimizer state; cannot resume")
        dataset = _load_dataset_from_config(cfg, args.dataset)
    else:
        if not args.config:
            raise ConfigError("train requires --config (or --resume)")
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        dataset = _load_dataset_from_config(cfg, args.dataset)
        cfg = _resolved_config(cfg, dataset)
        if cfg.model.kind == "classifier":
            raise ConfigError("use eval --train-classifier for classifiers")
        validate_config(cfg)
        model = build_model(model_spec_from_config(cfg), seed=cfg.seed)
    if args.out:
        cfg.out = args.out
    epochs = args.epochs if args.epochs is not None else cfg.optim.epochs
    if epochs < 1:
        raise ConfigError("epochs must be >= 1")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    schedule = _schedule(cfg)
    start_epoch = state.epoch if state else 0

    t0 = time.time()
    result = train(model, dataset, epochs=epochs, seed=cfg.seed, schedule=schedule,
                   batch_size=cfg.optim.batch_size, state=state, log_every=args.log_every)
    wall = time.time() - t0

    ckpt_path = out / "checkpoint.csvc"
    save_model(ckpt_path, model, cfg, result.state)
    _loss_csv(out / "loss_curve.csv", result.curve, schedule, start_epoch)
    with open(out / "manifest.txt", "w") as fh:
        fh.write(f"version = csvae-lab {__version__}\n")
        fh.write(f"wall_time_s = {wall:.2f}\n")
        fh.write(f"epochs = {start_epoch} .. {result.state.epoch}\n")
        fh.write("config:\n")
        for line in serialize_config(cfg).splitlines():
            fh.write(f"  {line}\n")
    final = result.curve[-1]
    print(f"trained {model.spec.kind} for {epochs} epochs in {wall:.1f}s "
          f"(main {final.main_total:.4f}, recon {final.recon:.4f})")
    print(f"wrote {ckpt_path}")
    return 0


# -- eval ------------------------------------------------------------------------------


def _get_classifier(args, dataset, out: Path):
    if args.classifier:
        clf, _ = load_classifier(args.classifier)
        return clf
    if not args.train_classifier:
        raise ConfigError("eval accuracy needs --classifier or --train-classifier")
    clf = train_attr_classifier(dataset, seed=args.seed or 0)
    cfg = RunConfig()
    cfg.model.kind = "classifier"
    cfg.model.x_shape = tuple(int(d) for d in dataset.dims)
    cfg.model.k = dataset.k
    cfg.model.label_mode = clf.mode
    cfg.data.attributes = tuple(dataset.attr_names)
    cfg.seed = args.seed or 0
    save_classifier(out / "classifier.csvc", clf, cfg)
    print(f"trained classifier: val accuracy {clf.val_accuracy:.4f} "
          f"(majority {clf.majority_rate:.4f})")
    return clf


def cmd_eval(args) -> int:
    dataset = load_dataset(args.dataset)
    out = _out_dir(args)
    models = []
    for path in args.checkpoint:
        model, _, _ = load_model(path)
        models.append(model)

    records = {}
    lines = []
    if args.method == "accuracy":
        clf = _get_classifier(args, dataset, out)
        header = f"{'model':<14}" + "".join(f"{n + '-on':>12}{n + '-off':>12}"
                                            for n in dataset.attr_names) + f"{'overall':>10}"
        lines.append(header)
        for model in models:
            rep = eval_switch_accuracy(model, clf, dataset, policy=args.policy,
                                       threads=args.threads)
            row = f"{rep.model_kind:<14}"
            for name in dataset.attr_names:
                for s in (1, 0):
                    h, t = rep.counts[(name, s)]
                    row += f"{h / max(t, 1):>12.4f}"
                    records[f"method1.{rep.model_kind}.{name}.{'on' if s else 'off'}"] = \
                        f"{h / max(t, 1):.6f}"
            row += f"{rep.overall:>10.4f}"
            records[f"method1.{rep.model_kind}.overall"] = f"{rep.overall:.6f}"
            lines.append(row)
        stem = "accuracy_report"
    elif args.method == "mse":
        group = args.group_size or pair_group_size(dataset)
        lines.append(f"{'model':<14}{'target-changed':>16}{'original-changed':>18}"
                     f"{'target-original':>18}")
        for model in models:
            rep = eval_identity_mse(model, dataset, group_size=group)
            lines.append(f"{rep.model_kind:<14}{rep.l1:>16.6f}"
                         f"{rep.original_vs_changed:>18.6f}{rep.target_vs_original:>18.6f}")
            for key, val in (("target_changed", rep.l1),
                             ("original_changed", rep.original_vs_changed),
                             ("target_original", rep.target_vs_original)):
                records[f"method2.{rep.model_kind}.{key}"] = f"{val:.9f}"
        stem = "mse_report"
    else:  # mi
        lines.append(f"{'model':<14}{'H(Y)':>10}{'H(Y|Z)':>10}{'I(Y;Z)':>10}{'probe-acc':>11}")
        for model in models:
            est = mi_probe(model, dataset, seed=args.seed or 0)
            lines.append(f"{model.spec.kind:<14}{est.h_y:>10.4f}{est.h_y_given_z:>10.4f}"
                         f"{est.mi:>10.4f}{est.probe_accuracy:>11.4f}")
            for key, val in (("h_y", est.h_y), ("h_y_given_z", est.h_y_given_z),
                             ("mi", est.mi), ("mi_raw", est.mi_raw),
                             ("probe_accuracy", est.probe_accuracy)):
                records[f"mi.{model.spec.kind}.{key}"] = f"{val:.6f}"
        stem = "mi_report"

    table = "\n".join(lines)
    print(table)
    (out / f"{stem}.txt").write_text(table + "\n")
    _write_kv(out / f"{stem}.kv", records)
    print(f"wrote {out / (stem + '.txt')} and .kv")
    return 0


# -- switch ----------------------------------------------------------------------------


def _parse_indices(raw: str, available: int) -> list:
    if raw:
        idx = [int(p) for p in raw.split(",") if p.strip() != ""]
    else:
        idx = list(range(min(8, available)))
    for i in idx:
        if not 0 <= i < available:
            raise DataError(f"input index {i} out of range (test split has {available})")
    return idx


def _switch_points(args, model, dataset):
    """Policy -> list of (label, full W vector | scalar) switch parameters."""
    spec = model.spec
    attrs = [int(a) for a in str(args.attr).split(",")]
    if args.policy == "grid":
        grids = [w_grid(spec, a, steps=args.steps, extent=args.extent) for a in attrs]
        if len(attrs) == 1:
            return [(f"g{i}", p) for i, p in enumerate(grids[0].points)]
        points = []
        for i, pa in enumerate(grids[0].points):
            for j, pb in enumerate(grids[1].points):
                points.append((f"g{i}x{j}", pa + pb))
        return points
    if args.policy == "pca":
        basis = w_pca(model, dataset, attrs[0], n_components=args.components)
        return [(f"pc{i}", p) for i, p in enumerate(pca_sampling_points(spec, basis))]
    if args.policy == "scalar-p":
        values = [float(v) for v in args.p.split(",")]
        return [(f"p{v:g}", v) for v in values]
    return [("class-mean", None)]


def cmd_switch(args) -> int:
    model, _, _ = load_model(args.checkpoint)
    dataset = load_dataset(args.dataset)
    out = _out_dir(args)
    spec = model.spec
    policy_kinds = {"grid": ("csvae",), "pca": ("csvae",),
                    "scalar-p": ("condvae", "condvae_info"), "class-mean": ("vae",)}
    if spec.kind not in policy_kinds[args.policy]:
        raise ConfigError(f"policy {args.policy!r} does not apply to a {spec.kind} model")
    sub = dataset.subset(TEST)
    idx = _parse_indices(args.inputs, sub.n)
    x = sub.x[idx]
    y = sub.y[idx].astype(np.float64)
    points = _switch_points(args, model, dataset)
    attrs = [int(a) for a in str(args.attr).split(",")]

    outputs = []  # rows (inputs) x columns (points)
    for i in range(len(idx)):
        row = []
        xi, yi = x[i:i + 1], y[i:i + 1]
        for _, point in points:
            if spec.kind == "csvae":
                keep = tuple(a for a in range(spec.k) if a not in attrs) if args.keep_others \
                    else ()
                row.append(switch_csvae(model, xi, point, keep_blocks=keep, y=yi)[0])
            elif spec.kind == "vae":
                means = {s: class_latent_mean(model, dataset, attrs[0], s) for s in (0, 1)}
                target = 1 if args.target == "on" else 0
                row.append(switch_vae(model, xi, 1 - target, target, means)[0])
            else:
                row.append(switch_condvae(model, xi, yi, attrs[0], point)[0])
        outputs.append(row)

    include_recon = args.include_recon == "yes" or (
        args.include_recon == "auto" and len(idx) == 1)
    if len(dataset.dims) == 3:
        tiles = []
        for i, row in enumerate(outputs):
            recon = [reconstruct(model, x[i:i + 1],
                                 None if spec.kind == "vae" else y[i:i + 1])[0]]
            imgs = (recon if include_recon else []) + row
            tiles.append([np.clip(im[:, :, 0], 0, 1) for im in imgs])
        path = out / "switch_mosaic.pgm"
        write_pgm(path, mosaic(tiles))
        print(f"wrote {path} ({len(tiles)} rows x {len(tiles[0])} columns)")
    else:
        path = out / "switch_points.txt"
        with open(path, "w") as fh:
            fh.write("# input point " + " ".join(f"x{j}" for j in range(spec.x_dim)) + "\n")
            for i, row in enumerate(outputs):
                for (label, _), vec in zip(points, row):
                    fh.write(f"{idx[i]} {label} " + " ".join(f"{v:.8g}" for v in vec) + "\n")
        print(f"wrote {path}")
    return 0


# -- plot-latent -----------------------------------------------------------------------


def cmd_plot_latent(args) -> int:
    model, _, _ = load_model(args.checkpoint)
    dataset = load_dataset(args.dataset)
    out = _out_dir(args)
    spec = model.spec
    if dataset.n == 0:
        raise DataError("empty dataset")
    z = encode_z_means(model, dataset)
    w = encode_w_means(model, dataset) if spec.kind == "csvae" and spec.w_dim else None
    labels = dataset.y[:, 0]

    def probe_acc(feats):
        return linear_probe_accuracy(feats, dataset.y, dataset.split_tags,
                                     seed=args.seed or 0)

    planes = []
    wanted = args.plane
    if wanted in ("all", "z"):
        if spec.z_dim < 2:
            if wanted == "z":
                raise DataError("z has fewer than 2 dimensions")
        else:
            planes.append(("latent_z.svg", z[:, :2], "Z projection", ("z1", "z2"), z))
    if wanted in ("all", "w"):
        if w is None or spec.w_dim_per_attr < 2:
            if wanted == "w":
                raise DataError("this model has no 2-D W blocks")
        else:
            for a, name in enumerate(dataset.attr_names[:spec.k]):
                blk = w[:, a * spec.w_dim_per_attr:(a * spec.w_dim_per_attr) + 2]
                planes.append((f"latent_w_{name}.svg", blk, f"W projection ({name})",
                               ("w1", "w2"), w))
    if wanted in ("all", "mixed"):
        if w is not None and spec.z_dim >= 2:
            mixed = np.column_stack([z[:, 1], w[:, 0]])
            planes.append(("latent_mixed.svg", mixed, "(z2, w1) projection",
                           ("z2", "w1"), mixed))
        elif wanted == "mixed":
            raise DataError("mixed plane needs a csvae with z_dim >= 2")

    for fname, pts, title, axis_names, probe_feats in planes:
        acc = probe_acc(probe_feats)
        svg_scatter(out / fname, pts, labels, title,
                    caption=f"linear probe accuracy on these coordinates: {acc:.4f}",
                    axis_names=axis_names)
        print(f"wrote {out / fname} (probe {acc:.4f})")
    return 0


# -- inspect ---------------------------------------------------------------------------


def cmd_inspect(args) -> int:
    from .checkpoint import checkpoint_from_bytes
    blob = Path(args.checkpoint).read_bytes()
    data = checkpoint_from_bytes(blob)  # validates CRC
    print(f"checkpoint: kind={data.kind} tensors={len(data.tensors)} checksum OK")
    if data.opt_epoch is not None:
        print(f"optimizer state: epoch={data.opt_epoch} steps={data.opt_steps}")
    print("config echo:")
    for line in data.config_text.splitlines():
        print(f"  {line}")
    print("tensors:")
    for name, arr in data.tensors:
        norm = float(np.linalg.norm(arr.astype(np.float64)))
        print(f"  {name:<28} shape={tuple(arr.shape)} l2={norm:.6g}")
    return 0


# -- parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csvae-lab",
        description="Latent-subspace generative-model laboratory")
    parser.add_argument("--version", action="version", version=f"csvae-lab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default="out")
        p.add_argument("--threads", type=int, default=1)

    g = sub.add_parser("generate-data", help="write a synthetic dataset file")
    g.add_argument("generator", choices=("swiss-roll", "glyphs"))
    g.add_argument("--n", type=int, default=10_000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise-sd", type=float, default=0.0)
    g.add_argument("--size", type=int, default=32)
    g.add_argument("--attributes", default="stripes")
    g.add_argument("--paired", action="store_true")
    g.add_argument("--split", default="0.8,0.1,0.1")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate_data)

    t = sub.add_parser("train", help="train a model from a config")
    t.add_argument("--config")
    t.add_argument("--dataset")
    t.add_argument("--resume")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--log-every", type=int, default=0)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", default="")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="run a quantitative protocol")
    e.add_argument("--method", choices=("accuracy", "mse", "mi"), required=True)
    e.add_argument("--checkpoint", action="append", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--classifier")
    e.add_argument("--train-classifier", action="store_true")
    e.add_argument("--policy", choices=("default", "identity"), default="default")
    e.add_argument("--group-size", type=int, default=0)
    common(e)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("switch", help="generate attribute-switched outputs")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--policy", choices=("grid", "pca", "scalar-p", "class-mean"),
                   required=True)
    s.add_argument("--inputs", default="")
    s.add_argument("--attr", default="0", help="attribute index, or two comma-separated "
                   "indices for a joint grid")
    s.add_argument("--steps", type=int, default=4)
    s.add_argument("--extent", type=float, default=None)
    s.add_argument("--components", type=int, default=2)
    s.add_argument("--p", default="1.0")
    s.add_argument("--target", choices=("on", "off"), default="on")
    s.add_argument("--keep-others", action="store_true",
                   help="keep non-manipulated W blocks at their encoded values")
    s.add_argument("--include-recon", choices=("auto", "yes", "no"), default="auto")
    common(s)
    s.set_defaults(func=cmd_switch)

    p = sub.add_parser("plot-latent", help="emit latent scatter SVGs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--plane", choices=("all", "z", "w", "mixed"), default="all")
    common(p)
    p.set_defaults(func=cmd_plot_latent)

    i = sub.add_parser("inspect", help="dump a checkpoint header")
    i.add_argument("--checkpoint", required=True)
    i.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args) or 0
    except ConfigError as exc:
        print(f"csvae-lab: config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"csvae-lab: numerical failure: {exc}", file=sys.stderr)
        return 4
    except DataError as exc:
        print(f"csvae-lab: data error: {exc}", file=sys.stderr)
        return 3
    except CsvaeLabError as exc:
        print(f"csvae-lab: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
