"""Command-line interface.

Subcommands: analyze, train, eval, gradcheck, equiv-check, bench,
dump-features. Exit codes: 0 success, 1 verification failure, 2 usage or
config error, 3 numerical failure.
"""

import argparse
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import config as cfgmod
from . import costs, data, kernels, models, training, verify
from .errors import (ConfigError, DataError, FormatError, NumericsError,
                     ParseError, SplitMixerError)

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def _parse_synthetic(spec):
    opts = {"n": 512, "classes": 4, "size": 32, "seed": 0, "noise": 0.1}
    body = spec[len("synthetic"):].lstrip(":")
    if body:
        for item in body.split(","):
            if "=" not in item:
                raise ParseError(f"bad synthetic spec item {item!r}")
            k, v = item.split("=", 1)
            if k not in opts:
                raise ParseError(f"unknown synthetic option {k!r}")
            opts[k] = float(v) if k == "noise" else int(v)
    return opts


def resolve_datasets(source, test_source=None, limit_per_class=None, subset_seed=0):
    """Turn --data/--test-data specs into (train_ds, test_ds).

    'synthetic[:k=v,...]' builds the deterministic synthetic set (test split
    drawn with seed+1). Anything else is a CIFAR-10 binary file or directory;
    directories use data_batch*.bin for train and test_batch*.bin for test.
    Bare names resolve under $SPMX_DATA_DIR when they do not exist as given.
    """
    if source.startswith("synthetic"):
        opts = _parse_synthetic(source)
        train_ds = data.synthetic_dataset(opts["seed"], opts["n"], opts["classes"],
                                          size=opts["size"], noise=opts["noise"])
        test_ds = data.synthetic_dataset(opts["seed"] + 1, max(opts["n"] // 5, opts["classes"]),
                                         opts["classes"], size=opts["size"],
                                         noise=opts["noise"])
    else:
        path = Path(source)
        if not path.exists():
            root = data.default_data_dir()
            if root is not None and (root / source).exists():
                path = root / source
            else:
                raise DataError(f"dataset path {source!r} not found"
                                + (f" (also tried {root / source})" if root else ""))
        if path.is_dir():
            train_files = sorted(path.glob("data_batch*.bin"))
            test_files = sorted(path.glob("test_batch*.bin"))
            if not train_files:
                raise FormatError(f"no data_batch*.bin under {path}")
            train_ds = _load_files(train_files)
            test_ds = _load_files(test_files) if test_files else None
        else:
            train_ds = data.load_cifar_binary(path)
            test_ds = None
        if test_source:
            test_ds = data.load_cifar_binary(test_source)
    if limit_per_class:
        train_ds = data.take_per_class(train_ds, int(limit_per_class),
                                       seed=int(subset_seed))
    return train_ds, test_ds


def _load_files(files):
    parts = [data.load_cifar_binary(f) for f in files]
    return data.Dataset(np.concatenate([p.images for p in parts]),
                        np.concatenate([p.labels for p in parts]),
                        parts[0].classes)


def _model_flags(parser, include_name=True):
    if include_name:
        parser.add_argument("--model", help="SplitMixer-<A>-<h>/<b> or ConvMixer-<h>/<b>")
    parser.add_argument("--alpha", help="overlap ratio for variants I/V, e.g. 2/3")
    parser.add_argument("--segments", type=int, help="segment count for II/III/IV/3D")
    parser.add_argument("--classes", type=int)
    parser.add_argument("--patch", type=int, help="patch size p")
    parser.add_argument("--kernel", type=int, help="spatial kernel size k")
    parser.add_argument("--act", choices=models.ACTIVATIONS)
    parser.add_argument("--norm", choices=models.NORMS)
    parser.add_argument("--residual", choices=models.RESIDUALS)
    parser.add_argument("--spatial", choices=models.SPATIAL_MODES)
    parser.add_argument("--channel", choices=models.CHANNEL_MODES)


def _model_overrides(args):
    return {
        "name": getattr(args, "model", None),
        "alpha": args.alpha,
        "segments": args.segments,
        "classes": args.classes,
        "p": args.patch,
        "k": args.kernel,
        "activation": args.act,
        "norm": args.norm,
        "residual": args.residual,
        "spatial": args.spatial,
        "channel": args.channel,
    }


def _run_config(args, need_model=True):
    flags = {"model": _model_overrides(args)}
    if hasattr(args, "data"):
        flags["data"] = {"source": args.data,
                         "test_source": getattr(args, "test_data", None),
                         "limit_per_class": getattr(args, "limit_per_class", None),
                         "subset_seed": getattr(args, "subset_seed", None)}
    if hasattr(args, "epochs"):
        flags["train"] = {"epochs": args.epochs, "batch": args.batch,
                          "max_lr": args.max_lr, "weight_decay": args.wd,
                          "clip": args.clip, "seed": args.seed,
                          "augment": args.augment, "timing": args.timing}
    if hasattr(args, "out"):
        flags["output"] = {"dir": args.out}
    run = cfgmod.merge_run_config(getattr(args, "config", None), flags)
    if need_model and not run.model.get("name") and not run.model.get("variant"):
        raise ConfigError("no model given; pass --model or a config file")
    return run


# -- analyze ----------------------------------------------------------------

def cmd_analyze(args):
    run = _run_config(args)
    config = run.model_config()
    input_hw = args.input
    if args.sweep:
        knob = {"alpha": "alpha", "segments": "segments"}[args.sweep]
        rows = costs.sweep(config, knob=knob, input_hw=input_hw)
        print(f"# sweep over {knob} for {config.name()} (input {input_hw})")
        print("knob,value,params,macs,analytic_saving")
        for r in rows:
            print(f"{r['knob']},{r['value']},{r['params']},{r['macs']},"
                  f"{float(r['saving']):.6f}")
        return EXIT_OK
    report = costs.count_flops(config, input_hw)
    print(f"# {config.name()} on {input_hw}x{input_hw} input")
    print("# MACs count one multiply-accumulate; bias adds included; "
          "norm/activation excluded")
    print(report.table())
    if report.analytic_params_saving is not None:
        sv = report.analytic_params_saving
        print(f"analytic per-block channel-mix saving: {sv} ({float(sv):.4f})")
    cmp = costs.compare_to_baseline(config, input_hw)
    print(f"vs ConvMixer-{config.h}/{config.b}: params {cmp['params']}/"
          f"{cmp['baseline_params']} = {cmp['params_ratio']:.4f}, "
          f"macs {cmp['macs']}/{cmp['baseline_macs']} = {cmp['macs_ratio']:.4f}")
    if args.csv:
        Path(args.csv).write_text(report.csv_text())
        print(f"wrote {args.csv}")
    return EXIT_OK


# -- train / eval -------------------------------------------------------------

def cmd_train(args):
    run = _run_config(args)
    config = run.model_config()
    settings = run.train_settings()
    out_dir = Path(run.output.get("dir", "runs/latest"))
    train_ds, test_ds = resolve_datasets(
        run.data.get("source", "synthetic"),
        run.data.get("test_source"),
        run.data.get("limit_per_class"),
        run.data.get("subset_seed") or 0)
    if train_ds.classes != config.classes:
        raise ConfigError(f"model has {config.classes} classes but dataset has "
                          f"{train_ds.classes}")
    model = models.build(config, seed=settings.seed)
    print(f"training {config.name()} ({model.trainable_count()} params) on "
          f"{train_ds.n} samples, backend={kernels.active_backend()}")
    if config.channel_variant() == "II":
        bounds = models.mixers.segment_bounds(config.h, config.s)
        for i in range(config.b):
            a, b = bounds[i % config.s]
            print(f"  block {i}: segment {i % config.s} [{a},{b})")
    rows = training.train(model, train_ds, test_ds, settings,
                          out_dir=out_dir, log=print, resume=args.resume,
                          stop_after=args.stop_after)
    last = rows[-1] if rows else None
    if last is not None:
        acc = last.test_acc if last.test_acc is not None else last.train_acc
        print(f"done: final train_acc={last.train_acc:.4f} "
              f"best checkpoint at {out_dir / 'best.spmx'} (metric {acc:.4f})")
    return EXIT_OK


def cmd_eval(args):
    model, _ = ckpt.load_checkpoint(args.checkpoint)
    train_ds, test_ds = resolve_datasets(args.data)
    ds = test_ds if args.split == "test" and test_ds is not None else train_ds
    if args.threads > 1:
        acc, loss = _evaluate_parallel(model, ds, args.batch, args.threads)
    else:
        acc, loss = training.evaluate(model, ds, args.batch)
    print(f"{model.config.name()}: top1={acc:.4f} loss={loss:.4f} "
          f"({ds.n} samples, split={args.split})")
    return EXIT_OK


def _evaluate_parallel(model, ds, batch_size, threads):
    chunks = np.array_split(np.arange(ds.n), threads)
    clones = [model.clone() for _ in chunks]

    def work(pair):
        clone, idx = pair
        sub = ds.subset(idx)
        acc, loss = training.evaluate(clone, sub, batch_size)
        return acc * sub.n, loss * sub.n

    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(work, zip(clones, chunks)))
    correct = sum(p[0] for p in parts)
    loss = sum(p[1] for p in parts)
    return correct / ds.n, loss / ds.n


# -- verification -------------------------------------------------------------

def cmd_gradcheck(args):
    run = _run_config(args)
    config = run.model_config(p=args.patch or 2, k=args.kernel or 3)
    if config.h > 16:
        raise ConfigError(f"full-model gradcheck is O(params) forwards; "
                          f"h={config.h} > 16 refused")
    ok = True
    for seed in range(args.seeds):
        report = verify.gradcheck_model(config, seed, batch=args.batch,
                                        image_hw=args.image,
                                        threshold=args.threshold)
        print(report.summary())
        if args.csv:
            Path(args.csv).write_text(report.csv_text())
        ok &= report.passed
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_equiv(args):
    ok = True
    ran = False
    if args.separable:
        ran = True
        diff = verify.check_separable(args.kernel or 5, args.h or 8, args.seed)
        good = diff < 1e-5
        ok &= good
        print(f"separable 1Dx1D vs rank-1 2D depthwise: max|diff|={diff:.3e} "
              f"{'PASS' if good else 'FAIL'} (tol 1e-5)")
    if args.segments or not args.separable:
        ran = True
        h = args.h or 8
        s = args.segments or 2
        diff = verify.check_III_equiv_3d(h, s, args.seed)
        good = diff < 1e-6
        ok &= good
        print(f"mixer III vs strided 3D conv (h={h}, s={s}): max|diff|={diff:.3e} "
              f"{'PASS' if good else 'FAIL'} (tol 1e-6)")
    if not ran:
        raise ConfigError("nothing to check; pass --segments and/or --separable")
    return EXIT_OK if ok else EXIT_VERIFY


# -- bench --------------------------------------------------------------------

def cmd_bench(args):
    run = _run_config(args)
    config = run.model_config()
    backends = ([kernels.active_backend()] if args.backend == "auto"
                else kernels.available() if args.backend == "both"
                else [args.backend])
    model = models.build(config, seed=0)
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (args.batch, config.in_channels, args.input,
                           args.input)).astype(np.float32)
    macs = costs.count_flops(config, args.input).total_macs
    print(f"# {config.name()} eval-mode forward, batch {args.batch}, "
          f"{args.warmup} warmup + {args.batches} measured batches, "
          f"{macs} MACs/image (cost model)")
    for backend in backends:
        prev = kernels.use(backend)
        try:
            rates, passes = _bench_forward(model, x, args.warmup, args.batches,
                                           args.threads)
        finally:
            kernels.use(prev)
        mean = statistics.fmean(rates)
        std = statistics.pstdev(rates)
        print(f"backend={backend}: {mean:.1f} +- {std:.1f} img/sec "
              f"({passes} forward passes)")
    return EXIT_OK


def _bench_forward(model, x, warmup, measured, threads=1):
    passes = 0
    rates = []
    n = x.shape[0]
    for i in range(warmup + measured):
        t0 = time.perf_counter()
        if threads > 1:
            _parallel_forward(model, x, threads)
        else:
            model.forward(x, train=False)
        dt = time.perf_counter() - t0
        passes += 1
        if i >= warmup:
            rates.append(n / dt)
    return rates, passes


def _parallel_forward(model, x, threads):
    chunks = np.array_split(x, threads)
    clones = [model.clone() for _ in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(lambda cz: cz[0].forward(cz[1], train=False),
                      zip(clones, chunks)))


# -- feature dumps --------------------------------------------------------------

def cmd_dump_features(args):
    if args.checkpoint:
        model, _ = ckpt.load_checkpoint(args.checkpoint)
    else:
        run = _run_config(args)
        model = models.build(run.model_config(), seed=args.seed)
    train_ds, _ = resolve_datasets(args.data)
    if not 0 <= args.index < train_ds.n:
        raise ConfigError(f"--index {args.index} outside dataset of {train_ds.n}")
    image = train_ds.images[args.index]
    written = models.dump_features(model, image, args.out)
    print(f"wrote {len(written)} maps to {args.out} "
          f"(taps 0..{model.config.b}, {model.config.h} channels each)")
    return EXIT_OK


# -- wiring ---------------------------------------------------------------------

def make_parser():
    ap = argparse.ArgumentParser(
        prog="splitmixer",
        description="SplitMixer micro-framework: cost analysis, training, "
                    "verification, benchmarking.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("analyze", help="parameter/MAC report and savings")
    _model_flags(p)
    p.add_argument("--input", type=int, default=32, help="input side length")
    p.add_argument("--sweep", choices=("alpha", "segments"))
    p.add_argument("--csv", help="also write the per-layer report as CSV")
    p.add_argument("--config")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("train", help="train a model")
    _model_flags(p)
    p.add_argument("--data", help="dataset dir/file or synthetic[:k=v,...]")
    p.add_argument("--test-data", dest="test_data")
    p.add_argument("--limit-per-class", dest="limit_per_class", type=int)
    p.add_argument("--subset-seed", dest="subset_seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--max-lr", dest="max_lr", type=float)
    p.add_argument("--wd", type=float)
    p.add_argument("--clip", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--augment", choices=("on", "off"))
    p.add_argument("--timing", choices=("wall", "off"),
                   help="wall writes real epoch seconds into metrics.csv "
                        "(breaks byte-for-byte determinism)")
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--resume", help="resume from a last.spmx checkpoint")
    p.add_argument("--stop-after", dest="stop_after", type=int,
                   help="stop after N epochs, keeping the full-length schedule "
                        "(useful to simulate interruption before --resume)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of a small model")
    _model_flags(p)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--threshold", type=float, default=verify.GRAD_THRESHOLD)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--image", type=int, default=8)
    p.add_argument("--csv")
    p.add_argument("--config")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("equiv-check", help="structural equivalence oracles")
    p.add_argument("--h", type=int)
    p.add_argument("--segments", type=int)
    p.add_argument("--separable", action="store_true")
    p.add_argument("--kernel", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_equiv)

    p = sub.add_parser("bench", help="forward-pass throughput")
    _model_flags(p)
    p.add_argument("--input", type=int, default=32)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--batches", type=int, default=100)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--backend", choices=("auto", "numpy", "cython", "both"),
                   default="auto")
    p.add_argument("--config")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("dump-features", help="write per-channel PGM feature maps")
    _model_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(fn=cmd_dump_features)
    return ap


def main(argv=None):
    args = make_parser().parse_args(argv)
    if hasattr(args, "augment") and args.augment is not None:
        args.augment = args.augment == "on"
    if hasattr(args, "timing") and args.timing is not None:
        args.timing = args.timing == "wall"
    try:
        return args.fn(args)
    except (ConfigError, ParseError, FormatError, DataError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericsError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except SplitMixerError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
