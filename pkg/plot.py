import argparse
import os
import sys

import matplotlib
import numpy as np
import pandas as pd

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def _output_path(csv_path: str, output_path: str | None) -> str:
    return output_path or csv_path.replace(".csv", ".png")


def plot_weaktype_from_csv(csv_path: str, output_path: str = None, title: str = "", q: float | None = None):
    """alpha against alpha |{|u| > alpha}|^(1/q), from the CSV written by `cli.py weaktype`."""
    df = pd.read_csv(csv_path)
    if df.empty:
        print(f"No weak-type data found in {csv_path}, skipping plot.")
        return

    fig, ax = plt.subplots(figsize=(8, 5))
    ax.plot(df["alpha"], df["curve"], "-", label="alpha |{|u| > alpha}|^(1/q)")
    best = df["curve"].idxmax()
    ax.axhline(df["curve"][best], linestyle="--", color="tab:gray", label=f"quasi-norm {df['curve'][best]:.4g}")
    ax.set_xscale("log")
    ax.set_xlabel("alpha")
    ax.set_ylabel("weak-type curve" if q is None else f"weak L^{q:g} curve")
    ax.legend(loc="upper left")
    ax.set_title(title)
    fig.tight_layout()

    output_path = _output_path(csv_path, output_path)
    fig.savefig(output_path)
    plt.close(fig)
    print(f"Saved plot to {output_path}")


def plot_seminorm_slices_from_csv(csv_path: str, output_path: str = None, title: str = ""):
    """Per-R slice values of a seminorm, from the CSV written by `cli.py seminorm`."""
    df = pd.read_csv(csv_path)
    if df.empty:
        print(f"No seminorm slices found in {csv_path}, skipping plot.")
        return

    fig, ax = plt.subplots(figsize=(8, 5))
    ax.plot(df["R"], df["value"], "o-", label="slice value")
    for x, y in zip(df["R"], df["value"]):
        ax.text(x, y, f"{y:.3f}", ha="center", va="bottom")
    ax.axhline(df["value"].max(), linestyle="--", color="tab:gray", label="max over R")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("R")
    ax.set_ylabel("slice value")
    ax.legend(loc="lower right")
    ax.set_title(title)
    fig.tight_layout()

    output_path = _output_path(csv_path, output_path)
    fig.savefig(output_path)
    plt.close(fig)
    print(f"Saved plot to {output_path}")


def plot_verify_from_csv(csv_path: str, output_path: str = None, title: str = "", threshold: float | None = None):
    """Bar chart of the max weak-type ratio per test function, from `cli.py verify`."""
    df = pd.read_csv(csv_path)
    if df.empty:
        print(f"No verification data found in {csv_path}, skipping plot.")
        return

    fig, ax = plt.subplots(figsize=(max(8, len(df) * 0.4), 5))
    x = np.arange(len(df))
    ax.bar(x, df["max_ratio"], width=0.6, alpha=0.7, color="tab:blue")
    if threshold is not None:
        ax.axhline(threshold, linestyle="--", color="tab:red", label=f"C^(1/q) = {threshold:.4g}")
        ax.legend(loc="upper right")
    ax.set_xticks(x)
    ax.set_xticklabels(df["label"], rotation=60, ha="right")
    ax.set_ylabel("max ratio")
    ax.set_title(title)
    fig.tight_layout()

    output_path = _output_path(csv_path, output_path)
    fig.savefig(output_path)
    plt.close(fig)
    print(f"Saved plot to {output_path}")


def plot_comparison(
    csv_paths: list[str],
    labels: list[str],
    output_path: str | None = None,
    title: str = "Method Comparison",
) -> None:
    """Overlay several verify.csv (grouped bars) or weaktype.csv (curves) runs."""
    frames = [pd.read_csv(p) for p in csv_paths]
    fig, ax = plt.subplots(figsize=(10, 5))

    if all("max_ratio" in df.columns for df in frames):
        combined = pd.concat(
            [df.assign(method=label) for df, label in zip(frames, labels)], ignore_index=True
        )
        table = combined.pivot_table(index="label", columns="method", values="max_ratio", sort=False)
        width = 0.8 / max(1, len(labels))
        x = np.arange(len(table))
        for i, label in enumerate(labels):
            ax.bar(x + (i - (len(labels) - 1) / 2) * width, table[label], width=width, label=label, alpha=0.8)
        ax.set_xticks(x)
        ax.set_xticklabels(table.index, rotation=60, ha="right")
        ax.set_ylabel("max ratio")
    elif all("curve" in df.columns for df in frames):
        for df, label in zip(frames, labels):
            ax.plot(df["alpha"], df["curve"], label=label)
        ax.set_xscale("log")
        ax.set_xlabel("alpha")
        ax.set_ylabel("weak-type curve")
    else:
        raise KeyError("Expected every CSV to be a verify.csv or every CSV to be a weaktype.csv.")

    ax.legend(loc="upper right")
    ax.set_title(title)
    fig.tight_layout()

    output_path = output_path or "comparison.png"
    fig.savefig(output_path)
    plt.close(fig)
    print(f"Saved comparison plot to {output_path}")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Plot the CSV curves written by cli.py")
    parser.add_argument("--weaktype", type=str, help="weaktype.csv to plot")
    parser.add_argument("--seminorm", type=str, help="seminorm_slices.csv to plot")
    parser.add_argument("--verify", type=str, help="verify.csv to plot")
    parser.add_argument("--threshold", type=float, help="C^(1/q) line for --verify plots")
    parser.add_argument("--q", type=float, help="Exponent shown on --weaktype plots")
    parser.add_argument(
        "--compare",
        action="store_true",
        help="Plot multiple CSVs on one comparison chart"
    )
    parser.add_argument(
        "--csv-files",
        nargs="+",
        help="List of CSVs to compare (in same order as --labels)"
    )
    parser.add_argument(
        "--labels",
        nargs="+",
        help="Optional custom labels for each CSV (defaults to the parent directory name)"
    )
    parser.add_argument("--output", type=str, help="Output PNG path (default: next to the CSV)")
    parser.add_argument("--title", type=str, default="", help="Title for the plot")
    args = parser.parse_args()

    if args.compare:
        if not args.csv_files:
            parser.error("--csv-files is required when --compare is set")
        if args.labels and len(args.labels) != len(args.csv_files):
            parser.error("Number of --labels must match number of --csv-files")

        labels = args.labels or [os.path.basename(os.path.dirname(p)) or p for p in args.csv_files]
        plot_comparison(
            csv_paths=args.csv_files,
            labels=labels,
            output_path=args.output,
            title=args.title or "Method Comparison",
        )
        sys.exit(0)

    if not (args.weaktype or args.seminorm or args.verify):
        parser.error("one of --weaktype, --seminorm, --verify or --compare is required")
    if args.weaktype:
        plot_weaktype_from_csv(args.weaktype, args.output, args.title, args.q)
    if args.seminorm:
        plot_seminorm_slices_from_csv(args.seminorm, args.output, args.title)
    if args.verify:
        plot_verify_from_csv(args.verify, args.output, args.title, args.threshold)
