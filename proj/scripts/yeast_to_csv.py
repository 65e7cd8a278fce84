#!/usr/bin/env python3
"""Convert the UCI Yeast data file to the CSV layout used by valen.

Usage:
    python3 scripts/yeast_to_csv.py yeast.data data/yeast.csv

The input is the whitespace-separated file from
https://archive.ics.uci.edu/dataset/110/yeast (one sequence name, eight
real-valued features, and a localization-site class per row). The output
has header f0,...,f7,candidates,true with singleton candidate sets; class
names are mapped to indices in sorted order.
"""

import argparse
import sys


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("input", help="path to the UCI yeast.data file")
    ap.add_argument("output", help="path of the CSV to write")
    args = ap.parse_args()

    rows = []
    with open(args.input) as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 10:
                sys.exit(f"{args.input}:{lineno}: expected 10 fields, got {len(parts)}")
            try:
                feats = [float(v) for v in parts[1:9]]
            except ValueError as e:
                sys.exit(f"{args.input}:{lineno}: {e}")
            rows.append((feats, parts[9]))

    if not rows:
        sys.exit(f"{args.input}: no data rows")

    classes = sorted({name for _, name in rows})
    index = {name: i for i, name in enumerate(classes)}

    with open(args.output, "w") as out:
        out.write(",".join(f"f{j}" for j in range(8)) + ",candidates,true\n")
        for feats, name in rows:
            label = index[name]
            out.write(",".join(repr(v) for v in feats) + f",{label},{label}\n")

    print(f"wrote {len(rows)} rows, {len(classes)} classes to {args.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
