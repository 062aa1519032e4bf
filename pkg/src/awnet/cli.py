"""Command-line entry point: ``awnet <subcommand>``.

Exit codes: 0 all checks passed, 1 a check failed (or training diverged),
2 usage or format error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path


from . import __version__, bench, kernels, verify
from .data import Dataset, encode_cifar, gen_shapes, load_source
from .errors import AwnetError, DivergenceError
from .models import ARCHS, build_arch
from .profile import profile
from .train import (TrainConfig, evaluate, fit, load_checkpoint, model_from_checkpoint,
                    parse_kv)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _emit_results(results, fmt, out=None) -> bool:
    out = out or sys.stdout
    ok = all(r.passed for r in results)
    for r in results:
        if fmt == "records":
            print(json.dumps(dataclasses.asdict(r)), file=out)
        else:
            print(r.line(), file=out)
    if fmt != "records":
        failed = sum(not r.passed for r in results)
        print(f"{len(results) - failed}/{len(results)} properties passed", file=out)
    return ok


def cmd_verify(args) -> int:
    results = verify.run_all(seed=args.seed, quick=args.quick)
    return EXIT_OK if _emit_results(results, args.format) else EXIT_FAIL


def cmd_gradcheck(args) -> int:
    seeds = range(args.seed, args.seed + args.seeds)
    results = verify.gradcheck_suite(seeds, eps=args.eps, tol=args.tol, only=args.only)
    if not results:
        print(f"no gradient case matches {args.only!r}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK if _emit_results(results, args.format) else EXIT_FAIL


def overhead_line(base, variant) -> str:
    """Overhead as the difference of the displayed (2-decimal) totals, plus raw counts."""
    dp = round(variant.total_params / 1e6, 2) - round(base.total_params / 1e6, 2)
    df = round(variant.total_flops / 1e9, 2) - round(base.total_flops / 1e9, 2)
    raw_p = variant.total_params - base.total_params
    raw_f = variant.total_flops - base.total_flops
    return (f"overhead vs none: {dp:.2f}M params ({raw_p:,}), "
            f"{df:.2f}G FLOPs ({raw_f:,} MACs)")


def cmd_profile(args) -> int:
    graph = build_arch(args.arch, args.attention, args.classes)
    hw = args.input or (224 if graph.stem == "imagenet" else 32)
    rep = profile(graph, hw)
    if args.format == "records":
        print(rep.records())
        return EXIT_OK
    print(rep.table(per_layer=args.per_layer))
    if graph.attention != "none":
        base = profile(build_arch(args.arch, "none", args.classes), hw)
        print(overhead_line(base, rep))
    return EXIT_OK


def _config_from_args(args) -> TrainConfig:
    values = {}
    if args.config:
        values.update(parse_kv(Path(args.config).read_text()))
    for f in dataclasses.fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return TrainConfig.from_mapping(values, TrainConfig())


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    fmt = args.format

    def report(rec):
        if fmt == "records":
            print(json.dumps(rec), flush=True)
        else:
            print(f"epoch {rec['epoch']:>3}  lr {rec['lr']:.4g}  train_loss {rec['train_loss']:.4f}"
                  f"  val_acc {rec['val_acc']:.4f}", flush=True)

    try:
        history = fit(cfg, on_epoch=report)
    except DivergenceError as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_FAIL
    if fmt != "records":
        print(f"final val_acc {history[-1]['val_acc']:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    cfg = ck.train_config()
    model = model_from_checkpoint(ck)
    if args.data_path:
        ds = load_source(args.data or (cfg.data if cfg.data != "shapes" else "cifar10"), "val",
                         path=args.data_path)
    elif cfg.data == "shapes":
        ds = load_source("shapes", "val", cfg.seed, args.n or cfg.n_val, hw=cfg.hw,
                         classes=cfg.classes)
    else:
        ds = load_source(cfg.data, "val", path=cfg.val_path or cfg.data_path)
    acc = evaluate(model, ds)
    if args.format == "records":
        print(json.dumps({"checkpoint": str(args.checkpoint), "epoch": ck.epoch,
                          "n": len(ds), "val_acc": acc}))
    else:
        print(f"epoch {ck.epoch}  n={len(ds)}  val_acc {acc:.4f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    sweep = bench.AW_SWEEP[:2] if args.quick else bench.AW_SWEEP
    aw_rows = bench.bench_aw(sweep, repeat=args.repeat, seed=args.seed)
    k_rows = bench.bench_kernels(repeat=args.repeat, seed=args.seed)
    if args.format == "records":
        for group, rows in (("aw_conv2d", aw_rows), ("kernels", k_rows)):
            for r in rows:
                print(json.dumps({"group": group, **dataclasses.asdict(r)}))
        return EXIT_OK
    print(f"# active kernel backend: {kernels.backend_name()} (informational timings)")
    print(bench.format_timings(aw_rows, "aw_conv2d forward+backward: loop vs grouped"))
    print(bench.format_timings(k_rows, "im2col+col2im: numpy vs numba"))
    return EXIT_OK


def cmd_gen_data(args) -> int:
    if args.split is None:
        ds = gen_shapes(args.seed, args.n, args.classes, 32)
    else:
        ds = load_source("shapes", args.split, args.seed, args.n, classes=args.classes)
    raw = encode_cifar(Dataset(ds.images, ds.labels, ds.classes, "cifar10"), "cifar10")
    Path(args.out).write_bytes(raw)
    print(f"wrote {len(ds)} records ({len(raw)} bytes) to {args.out}")
    return EXIT_OK


def _add_format(p):
    p.add_argument("--format", choices=("table", "records"), default="table",
                   help="records = one JSON object per line")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="awnet", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="oracle, identity and invariant suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true", help="a quarter of the instances")
    _add_format(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=10, help="number of consecutive seeds")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--only", help="substring filter on case names")
    _add_format(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("profile", help="parameter and FLOP counts")
    p.add_argument("--arch", choices=ARCHS, default="resnet50")
    p.add_argument("--attention", default="none")
    p.add_argument("--input", type=int, help="input resolution (default 224 or 32 by stem)")
    p.add_argument("--classes", type=int)
    p.add_argument("--per-layer", action="store_true")
    _add_format(p)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("train", help="train on shapes or CIFAR")
    p.add_argument("--config", help="flat key=value file; flags override it")
    for f in dataclasses.fields(TrainConfig):
        typ = {"int": int, "float": float}.get(str(f.type).split("|")[0].strip(), str)
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=typ, default=None)
    _add_format(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", choices=("cifar10", "cifar100"))
    p.add_argument("--data-path")
    p.add_argument("--n", type=int, help="shapes validation size (default: from checkpoint)")
    _add_format(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="informational timings")
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true")
    _add_format(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen-data", help="write a shapes dataset in CIFAR-10 binary layout")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=1500)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--split", choices=("train", "val"),
                   help="derive the stream the trainer uses for this split")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)
    return ap


def run(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (AwnetError, ValueError, KeyError, OSError) as e:
        print(f"awnet {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
