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

"""Plots a hypnogram.tsv written by `somnoseq score`.

The expert track is drawn underneath when the file has an `expert` column.
"""

import argparse
import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# Conventional hypnogram order: wake on top, deep sleep at the bottom.
LEVEL = {"W": 4, "REM": 3, "N1": 2, "N2": 1, "N3": 0}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("hypnogram", help="hypnogram.tsv")
    ap.add_argument("-o", "--out", default="hypnogram.png")
    args = ap.parse_args()

    with open(args.hypnogram, newline="") as f:
        rows = list(csv.DictReader(f, delimiter="\t"))
    hours = [float(r["onset_s"]) / 3600.0 for r in rows]
    tracks = [("predicted", [LEVEL[r["stage"]] for r in rows])]
    if rows and "expert" in rows[0]:
        tracks.append(("expert", [LEVEL[r["expert"]] for r in rows]))

    fig, axes = plt.subplots(len(tracks), 1, sharex=True, squeeze=False,
                             figsize=(12, 2.2 * len(tracks)))
    for ax, (name, levels) in zip(axes[:, 0], tracks):
        ax.step(hours, levels, where="post", linewidth=0.8)
        ax.set_yticks(sorted(LEVEL.values()))
        ax.set_yticklabels(sorted(LEVEL, key=LEVEL.get))
        ax.set_ylabel(name)
    axes[-1, 0].set_xlabel("hours")
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)


if __name__ == "__main__":
    main()
