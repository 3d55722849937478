"""Re-derive plot series from a metrics CSV and render them to files.

`emit_plotdata` writes the delimited series (CSV) and, unless disabled, a PNG
figure next to each one:

    loss_vs_epoch.csv / .png   mean train loss per epoch, test loss at evals
    top1_vs_epoch.csv / .png   test top-1 accuracy at evaluation points
    loss_vs_time.csv / .png    train loss against cumulative wall time
    gradnorm_vs_iter.csv / .png  squared gradient norm and its running min
"""

from __future__ import annotations

import csv
import os
from collections import defaultdict

from .runfiles import MetricsRow, read_metrics


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def derive_series(rows: list[MetricsRow]) -> dict:
    by_epoch: dict[int, list[float]] = defaultdict(list)
    for r in rows:
        by_epoch[r.epoch].append(r.train_loss)
    epochs = sorted(by_epoch)
    train_by_epoch = [(e, sum(by_epoch[e]) / len(by_epoch[e])) for e in epochs]

    test_loss_pts = [(r.epoch, r.t, r.test_loss) for r in rows if r.test_loss is not None]
    top1_pts = [(r.epoch, r.t, r.test_top1) for r in rows if r.test_top1 is not None]

    cum_s = 0.0
    loss_vs_time = []
    for r in rows:
        cum_s += (r.wall_ms_forward + r.wall_ms_backward) / 1e3
        loss_vs_time.append((cum_s, r.train_loss))

    gradnorm = [(r.t, r.grad_sq_norm, r.min_grad_sq_so_far) for r in rows]
    return {
        "train_by_epoch": train_by_epoch,
        "test_loss": test_loss_pts,
        "test_top1": top1_pts,
        "loss_vs_time": loss_vs_time,
        "gradnorm": gradnorm,
    }


def emit_plotdata(
    metrics_path: str, out_dir: str, prefix: str = "", figures: bool = True
) -> list[str]:
    """Write plot series CSVs (and figures) derived from a metrics file."""
    rows = read_metrics(metrics_path)
    series = derive_series(rows)
    os.makedirs(out_dir, exist_ok=True)
    p = lambda name: os.path.join(out_dir, prefix + name)
    written = []

    _write_csv(
        p("loss_vs_epoch.csv"),
        ["epoch", "mean_train_loss"],
        [list(x) for x in series["train_by_epoch"]],
    )
    written.append(p("loss_vs_epoch.csv"))
    _write_csv(
        p("test_vs_epoch.csv"),
        ["epoch", "t", "test_loss"],
        [list(x) for x in series["test_loss"]],
    )
    written.append(p("test_vs_epoch.csv"))
    _write_csv(
        p("top1_vs_epoch.csv"),
        ["epoch", "t", "test_top1"],
        [list(x) for x in series["test_top1"]],
    )
    written.append(p("top1_vs_epoch.csv"))
    _write_csv(
        p("loss_vs_time.csv"),
        ["cum_wall_s", "train_loss"],
        [list(x) for x in series["loss_vs_time"]],
    )
    written.append(p("loss_vs_time.csv"))
    _write_csv(
        p("gradnorm_vs_iter.csv"),
        ["t", "grad_sq_norm", "min_grad_sq_so_far"],
        [list(x) for x in series["gradnorm"]],
    )
    written.append(p("gradnorm_vs_iter.csv"))

    if figures:
        written += render_figures(series, out_dir, prefix)
    return written


def render_figures(series: dict, out_dir: str, prefix: str = "") -> list[str]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    p = lambda name: os.path.join(out_dir, prefix + name)
    written = []

    fig, ax = plt.subplots(figsize=(6, 4))
    if series["train_by_epoch"]:
        xs, ys = zip(*series["train_by_epoch"])
        ax.plot(xs, ys, label="train")
    if series["test_loss"]:
        xs = [e for e, _, _ in series["test_loss"]]
        ys = [v for _, _, v in series["test_loss"]]
        ax.plot(xs, ys, "o-", label="test")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(p("loss_vs_epoch.png"), dpi=120)
    plt.close(fig)
    written.append(p("loss_vs_epoch.png"))

    if series["test_top1"]:
        fig, ax = plt.subplots(figsize=(6, 4))
        xs = [e for e, _, _ in series["test_top1"]]
        ys = [v for _, _, v in series["test_top1"]]
        ax.plot(xs, ys, "o-")
        ax.set_xlabel("epoch")
        ax.set_ylabel("test top-1")
        fig.tight_layout()
        fig.savefig(p("top1_vs_epoch.png"), dpi=120)
        plt.close(fig)
        written.append(p("top1_vs_epoch.png"))

    fig, ax = plt.subplots(figsize=(6, 4))
    if series["loss_vs_time"]:
        xs, ys = zip(*series["loss_vs_time"])
        ax.plot(xs, ys)
    ax.set_xlabel("wall time [s]")
    ax.set_ylabel("train loss")
    fig.tight_layout()
    fig.savefig(p("loss_vs_time.png"), dpi=120)
    plt.close(fig)
    written.append(p("loss_vs_time.png"))

    fig, ax = plt.subplots(figsize=(6, 4))
    if series["gradnorm"]:
        ts = [t for t, _, _ in series["gradnorm"]]
        g = [v for _, v, _ in series["gradnorm"]]
        m = [v for _, _, v in series["gradnorm"]]
        ax.semilogy(ts, g, alpha=0.5, label="grad sq norm")
        ax.semilogy(ts, m, label="min so far")
    ax.set_xlabel("iteration")
    ax.legend()
    fig.tight_layout()
    fig.savefig(p("gradnorm_vs_iter.png"), dpi=120)
    plt.close(fig)
    written.append(p("gradnorm_vs_iter.png"))
    return written


def render_bench_figure(report_dict: dict, out_path: str) -> str:
    """Measured vs model iteration time per K, as a grouped bar chart."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    entries = report_dict["entries"]
    ks = [e["K"] for e in entries]
    measured = [e["measured_ms"] for e in entries]
    model = [e["model_ms"] for e in entries]
    x = range(len(ks))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([i - 0.2 for i in x], measured, width=0.4, label="measured")
    ax.bar([i + 0.2 for i in x], model, width=0.4, label="model $T_F + T_B/K$")
    ax.set_xticks(list(x), [f"K={k}" for k in ks])
    ax.set_ylabel("iteration time [ms]")
    ax.axhline(report_dict["t_f_ms"] + report_dict["t_b_ms"], ls="--", c="gray",
               label="backprop $T_F + T_B$")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
