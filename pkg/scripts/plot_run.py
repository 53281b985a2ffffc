#!/usr/bin/env python3
"""Plot a recorded run from the CSV/JSON files written by ``cineswarm run``.

Usage:
    python3 scripts/plot_run.py OUT_DIR [--save PREFIX]

Reads OUT_DIR/frames.csv (trajectories, attitude) and, when present,
OUT_DIR/metrics.json (frustum distance and lighting deviations). With
--save, writes PREFIX_topdown.png / PREFIX_attitude.png / PREFIX_formation.png
instead of opening windows.
"""
import argparse
import csv
import json
import os
import sys
from collections import defaultdict

import matplotlib
import matplotlib.pyplot as plt


def load_frames(path):
    series = defaultdict(lambda: defaultdict(list))
    with open(path) as fh:
        for row in csv.DictReader(fh):
            s = series[row["entity"]]
            s["time"].append(float(row["time"]))
            for k in ("px", "py", "pz", "heading", "pitch"):
                s[k].append(float(row[k]))
    return series


def plot_topdown(series, ax):
    for name, s in sorted(series.items()):
        ax.plot(s["px"], s["py"], label=name)
        ax.plot(s["px"][0], s["py"][0], "o", color=ax.lines[-1].get_color(), ms=4)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title("top-down trajectories (o = start)")
    ax.axis("equal")
    ax.legend()


def plot_attitude(series, axes):
    s = series["leader"]
    axes[0].plot(s["time"], s["heading"])
    axes[0].set_ylabel("heading [rad]")
    axes[1].plot(s["time"], s["pitch"])
    axes[1].set_ylabel("pitch [rad]")
    axes[1].set_xlabel("time [s]")
    axes[0].set_title("leader camera attitude")


def plot_formation(metrics, tick, axes):
    for name, vals in sorted(metrics["d_f"].items()):
        t = [i * tick for i in range(len(vals))]
        axes[0].plot(t, vals, label=name)
    axes[0].axhline(0.0, color="k", lw=0.8, ls="--")
    axes[0].set_ylabel("frustum distance [m]")
    axes[0].legend()
    for name, vals in sorted(metrics["dev_heading"].items()):
        t = [i * tick for i in range(len(vals))]
        axes[1].plot(t, vals, label=f"{name} heading")
    for name, vals in sorted(metrics["dev_pitch"].items()):
        t = [i * tick for i in range(len(vals))]
        axes[1].plot(t, vals, ls=":", label=f"{name} pitch")
    axes[1].set_ylabel("lighting deviation [rad]")
    axes[1].set_xlabel("time [s]")
    axes[1].legend(fontsize=7)
    axes[0].set_title("formation keeping")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir", help="directory written by `cineswarm run --out`")
    ap.add_argument("--save", default=None, metavar="PREFIX",
                    help="save PNGs with this prefix instead of showing windows")
    ap.add_argument("--tick", type=float, default=0.05,
                    help="simulation tick used for metric time axes")
    args = ap.parse_args()

    frames_csv = os.path.join(args.out_dir, "frames.csv")
    if not os.path.exists(frames_csv):
        sys.exit(f"no frames.csv in {args.out_dir}")
    if args.save:
        matplotlib.use("Agg")
    series = load_frames(frames_csv)

    fig1, ax = plt.subplots(figsize=(7, 6))
    plot_topdown(series, ax)
    fig2, axes2 = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
    plot_attitude(series, axes2)

    figs = [("topdown", fig1), ("attitude", fig2)]
    metrics_json = os.path.join(args.out_dir, "metrics.json")
    if os.path.exists(metrics_json):
        with open(metrics_json) as fh:
            metrics = json.load(fh)["metrics"]
        fig3, axes3 = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
        plot_formation(metrics, args.tick, axes3)
        figs.append(("formation", fig3))

    if args.save:
        for name, fig in figs:
            fig.tight_layout()
            fig.savefig(f"{args.save}_{name}.png", dpi=130)
            print(f"wrote {args.save}_{name}.png")
    else:
        plt.show()


if __name__ == "__main__":
    main()
