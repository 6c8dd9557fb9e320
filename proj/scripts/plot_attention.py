#!/usr/bin/env python3
# Copyright 2026 The Somnoseq Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Renders attention maps from an attention directory as heatmaps.

Reads index.tsv plus the window_NNNN.tsv files it lists and writes one PNG per
window (or only the windows given with --window).
"""

import argparse
import csv
import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read_map(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f, delimiter="\t"))
    return [[float(v) for v in row[1:]] for row in rows[1:]]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("attention_dir")
    ap.add_argument("-o", "--out-dir", default=None, help="default: attention_dir")
    ap.add_argument("--window", type=int, action="append", help="window index; repeatable")
    args = ap.parse_args()

    src = pathlib.Path(args.attention_dir)
    out = pathlib.Path(args.out_dir) if args.out_dir else src
    out.mkdir(parents=True, exist_ok=True)
    with open(src / "index.tsv", newline="") as f:
        index = list(csv.DictReader(f, delimiter="\t"))
    for entry in index:
        w = int(entry["window"])
        if args.window and w not in args.window:
            continue
        weights = read_map(src / entry["file"])
        first = int(entry["first_epoch"])
        fig, ax = plt.subplots(figsize=(5, 4))
        im = ax.imshow(weights, vmin=0.0, vmax=1.0, cmap="viridis", aspect="auto")
        n = len(weights[0]) if weights else 0
        ax.set_xticks(range(n))
        ax.set_xticklabels([str(first + i) for i in range(n)], rotation=90, fontsize=7)
        ax.set_xlabel("input epoch")
        ax.set_ylabel("decoder step")
        ax.set_title(f"window {w}")
        fig.colorbar(im, ax=ax)
        fig.tight_layout()
        fig.savefig(out / f"window_{w:04d}.png", dpi=120)
        plt.close(fig)


if __name__ == "__main__":
    main()
