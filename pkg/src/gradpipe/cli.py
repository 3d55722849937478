"""Command-line entry point: train / verify / bench / emit-plotdata.

Exit codes: 0 success (or verification passed), 1 verification failed,
2 configuration error, 3 I/O error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from typing import Optional

from .bench import default_bench_config, run_bench
from .config import RunConfig
from .errors import ConfigError, GradpipeError, IoError, NumericError
from .plots import emit_plotdata, render_bench_figure
from .runfiles import MetricsWriter, save_weights, write_manifest, write_report
from .training import train
from .verify import verify_gradients, verify_staleness_from_config, verify_theorem

EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(doc)


def _parse_int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip() != ""]


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    over = {}
    for field in (
        "seed",
        "mode",
        "batch_size",
        "precision",
        "eval_every",
        "out_dir",
    ):
        v = getattr(args, field, None)
        if v is not None:
            over[field] = v
    if getattr(args, "modules", None) is not None:
        over["modules"] = args.modules
        over["split_points"] = ()
    elif getattr(args, "split_points", None) is not None:
        over["split_points"] = tuple(_parse_int_list(args.split_points))
        cfg = replace(cfg, modules=None)
    cfg = cfg.with_overrides(**over)
    it = getattr(args, "iterations", None)
    ep = getattr(args, "epochs", None)
    if it is not None and ep is not None:
        raise ConfigError("give --iterations or --epochs, not both")
    if it is not None:
        cfg = replace(cfg, iterations=it, epochs=None)
    elif ep is not None:
        cfg = replace(cfg, iterations=None, epochs=ep)
    if getattr(args, "deterministic_timings", False):
        cfg = replace(cfg, deterministic_timings=True)
    return cfg


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    cfg = _apply_overrides(cfg, args)
    cfg.validate()
    out_dir = cfg.out_dir
    if out_dir is None:
        raise ConfigError("an output directory is required (config out_dir or --out-dir)")
    os.makedirs(out_dir, exist_ok=True)

    from .training import resolve_partition

    part = resolve_partition(cfg)
    metrics_path = os.path.join(out_dir, "metrics.csv")
    with open(metrics_path, "w", newline="", encoding="utf-8") as fh:
        writer = MetricsWriter(fh, part.K)
        try:
            result = train(cfg, on_row=writer.write_row)
        except NumericError:
            print(f"numeric divergence; partial metrics left in {metrics_path}")
            raise
    save_weights(os.path.join(out_dir, "weights.bin"), result.states)
    write_manifest(
        os.path.join(out_dir, "manifest.json"),
        cfg.to_dict(),
        extra={"K": part.K, "iterations_run": len(result.rows)},
    )
    if result.test_top1 is not None:
        print(
            f"done: {len(result.rows)} iterations, "
            f"test loss {result.test_loss:.4f}, top-1 {result.test_top1:.4f}"
        )
    else:
        print(f"done: {len(result.rows)} iterations")
    print(f"artifacts in {out_dir}")
    return EXIT_OK


def cmd_verify(args) -> int:
    which = args.check
    if which == "gradients":
        report = verify_gradients(seed=args.seed if args.seed is not None else 0)
    elif which == "staleness":
        cfg = _default_staleness_config() if args.config is None else _load_config(args.config)
        cfg = _apply_overrides(cfg, args)
        report = verify_staleness_from_config(cfg, iterations=args.iterations or 50)
    elif which in ("theorem1", "theorem2"):
        cfg = _default_theorem_config() if args.config is None else _load_config(args.config)
        cfg = _apply_overrides(cfg, args)
        report = verify_theorem(
            cfg,
            which,
            K_values=tuple(_parse_int_list(args.k_values)),
            T=args.iterations or 10_000,
            seeds=args.seeds,
            gamma_scale=args.gamma_scale,
            lam=args.lam,
        )
    else:
        raise ConfigError(f"unknown check {which!r}")

    out = args.out or f"verify_{which}.json"
    write_report(out, report)
    status = "PASS" if report["passed"] else "FAIL"
    print(f"{which}: {status}  (report: {out})")
    return EXIT_OK if report["passed"] else EXIT_VERIFY_FAIL


def cmd_bench(args) -> int:
    if args.config is not None:
        cfg = _load_config(args.config)
        cfg = _apply_overrides(cfg, args)
    else:
        cfg = default_bench_config(seed=args.seed or 0)
    cfg.validate()
    k_list = _parse_int_list(args.k_list)
    report = run_bench(cfg, k_list, iterations=args.iterations or 200, repeats=args.repeats)
    d = report.to_dict()

    print(f"reference (K=1, emulated): T_F {report.t_f_ms:.2f} ms, "
          f"T_B {report.t_b_ms:.2f} ms, forward share {report.forward_share:.1%}")
    print(f"{'K':>4} {'measured ms':>12} {'model ms':>10} {'speedup':>8}  warning")
    for e in report.entries:
        print(f"{e.K:>4} {e.measured_ms:>12.2f} {e.model_ms:>10.2f} "
              f"{e.speedup_vs_bp:>8.2f}  {e.warning or ''}")

    out_dir = args.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    write_report(os.path.join(out_dir, "bench_report.json"), d)
    import csv as _csv

    with open(os.path.join(out_dir, "bench_report.csv"), "w", newline="") as fh:
        w = _csv.writer(fh, lineterminator="\n")
        w.writerow(["K", "measured_ms", "model_ms", "speedup_vs_bp", "warning"])
        for e in report.entries:
            w.writerow([e.K, repr(e.measured_ms), repr(e.model_ms),
                        repr(e.speedup_vs_bp), e.warning or ""])
    render_bench_figure(d, os.path.join(out_dir, "bench_report.png"))
    print(f"bench artifacts in {out_dir}")
    return EXIT_OK


def cmd_emit_plotdata(args) -> int:
    written = emit_plotdata(
        args.metrics, args.out_dir, prefix=args.prefix, figures=not args.no_figures
    )
    for path in written:
        print(path)
    return EXIT_OK


def _default_staleness_config() -> RunConfig:
    from . import layers as L
    from .optim import FixedSchedule, OptimizerConfig

    return RunConfig(
        layers=(
            L.Affine(10, 16),
            L.Relu(),
            L.Affine(16, 16),
            L.Tanh(),
            L.Affine(16, 4),
            L.SoftmaxCrossEntropyHead(4),
        ),
        dataset={"kind": "blobs", "classes": 4, "dim": 10, "sep": 2.0,
                 "n_train": 256, "n_test": 0},
        split_points=(2, 4),
        optimizer=OptimizerConfig("sgd", FixedSchedule(0.05)),
        batch_size=8,
        iterations=50,
        seed=0,
    )


def _default_theorem_config() -> RunConfig:
    from . import layers as L

    return RunConfig(
        layers=(L.Affine(20, 2), L.SoftmaxCrossEntropyHead(2)),
        dataset={"kind": "blobs", "classes": 2, "dim": 20, "sep": 4.0,
                 "n_train": 2000, "n_test": 0},
        iterations=10_000,
        seed=0,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradpipe",
        description="Module-parallel training with delayed-gradient backward passes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--mode", choices=["emulated", "parallel"], default=None)
        p.add_argument("--batch-size", type=int, dest="batch_size", default=None)
        p.add_argument("--precision", choices=["f64", "f32"], default=None)
        p.add_argument("--split-points", dest="split_points", default=None,
                       help="comma-separated layer indices")
        p.add_argument("--modules", type=int, default=None,
                       help="auto-balanced module count")
        p.add_argument("--iterations", type=int, default=None)
        p.add_argument("--out-dir", dest="out_dir", default=None)

    p_train = sub.add_parser("train", help="run a training job")
    p_train.add_argument("--config", required=True)
    add_common(p_train)
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--eval-every", type=int, dest="eval_every", default=None)
    p_train.add_argument("--deterministic-timings", action="store_true",
                         dest="deterministic_timings",
                         help="write zeros for wall-time columns (byte-stable CSVs)")
    p_train.set_defaults(fn=cmd_train)

    p_verify = sub.add_parser("verify", help="run a verification oracle")
    p_verify.add_argument("--check", required=True,
                          choices=["gradients", "staleness", "theorem1", "theorem2"])
    p_verify.add_argument("--config", default=None)
    add_common(p_verify)
    p_verify.add_argument("--out", default=None, help="report JSON path")
    p_verify.add_argument("--seeds", type=int, default=20)
    p_verify.add_argument("--k-values", dest="k_values", default="1,2,4")
    p_verify.add_argument("--gamma-scale", dest="gamma_scale", type=float, default=None,
                          help="gamma = scale / L (must keep gamma*L <= 1)")
    p_verify.add_argument("--lam", type=float, default=None,
                          help="L2 strength for the logistic objective")
    p_verify.set_defaults(fn=cmd_verify)

    p_bench = sub.add_parser("bench", help="measure against the T_F + T_B/K model")
    p_bench.add_argument("--config", default=None)
    add_common(p_bench)
    p_bench.add_argument("--k-list", dest="k_list", default="1,2,4")
    p_bench.add_argument("--repeats", type=int, default=3)
    p_bench.set_defaults(fn=cmd_bench)

    p_plot = sub.add_parser("emit-plotdata",
                            help="derive plot series and figures from a metrics CSV")
    p_plot.add_argument("--metrics", required=True)
    p_plot.add_argument("--out-dir", dest="out_dir", required=True)
    p_plot.add_argument("--prefix", default="")
    p_plot.add_argument("--no-figures", action="store_true")
    p_plot.set_defaults(fn=cmd_emit_plotdata)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IoError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except GradpipeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
