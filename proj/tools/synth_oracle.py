#!/usr/bin/env python3
"""Nearest-centroid writer classification on a synthetic collection.

Each page is summarized by its mean descriptor. A page is classified by the
nearest writer centroid, where centroids are computed from all *other* pages
(leave-one-page-out). Prints the accuracy and optionally fails below a bound.
"""
import argparse
import json
import struct
import sys
from pathlib import Path

import numpy as np


def read_wrds(path):
    data = Path(path).read_bytes()
    if data[:4] != b"WRDS":
        raise ValueError(f"{path}: bad magic")
    version, dim, count = struct.unpack_from("<IIQ", data, 4)
    if version != 1:
        raise ValueError(f"{path}: unsupported version {version}")
    values = np.frombuffer(data, dtype="<f4", count=dim * count, offset=20)
    return values.reshape(count, dim).astype(np.float64)


def load(manifest_path):
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text())
    pages = doc["pages"] if isinstance(doc, dict) else doc
    means, writers = [], []
    for page in pages:
        f = Path(page["descriptor_file"])
        if not f.is_absolute():
            f = manifest_path.parent / f
        means.append(read_wrds(f).mean(axis=0))
        writers.append(page["writer_id"])
    return np.stack(means), np.array(writers)


def accuracy(means, writers):
    correct = scored = 0
    labels = sorted(set(writers))
    for i in range(len(means)):
        others = np.arange(len(means)) != i
        best, best_d = None, np.inf
        for w in labels:
            mask = others & (writers == w)
            if not mask.any():
                continue
            d = np.linalg.norm(means[i] - means[mask].mean(axis=0))
            if d < best_d:
                best, best_d = w, d
        if not (others & (writers == writers[i])).any():
            continue
        scored += 1
        correct += best == writers[i]
    return correct / scored


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("manifest")
    ap.add_argument("--min-accuracy", type=float, default=None)
    args = ap.parse_args()
    acc = accuracy(*load(args.manifest))
    print(f"nearest-centroid accuracy: {acc:.4f}")
    if args.min_accuracy is not None and not acc > args.min_accuracy:
        print(f"FAIL: accuracy {acc:.4f} is not above {args.min_accuracy}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
