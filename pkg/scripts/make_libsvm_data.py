"""Regenerate data/vowel.scale and data/letter.scale from the keel-ds wheel.

    pip download --no-deps -d /tmp/keel keel-ds
    python scripts/make_libsvm_data.py /tmp/keel/keel_ds-*.whl

Features are min-max scaled to [-1, 1] per column (the LIBSVM ``.scale``
convention). Vowel drops the three bookkeeping columns (train/test flag,
speaker, sex). Letter keeps the first 15000 rows.
"""
import sys
import zipfile
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parent.parent / "data"


def _scale(X):
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return 2.0 * (X - lo) / span - 1.0


def _write(path, X, y):
    with open(path, "w") as fh:
        for row, label in zip(X, y):
            feats = " ".join(f"{j + 1}:{v:.6g}" for j, v in enumerate(row) if v != 0.0)
            fh.write(f"{label} {feats}".rstrip() + "\n")


def main(wheel):
    zf = zipfile.ZipFile(wheel)
    raw = zf.read("keel_ds/data/balanced/raw/vowel.dat").decode().split()
    rows = [line.split(",") for line in raw]
    X = np.array([[float(v) for v in r[3:-1]] for r in rows])
    y = [int(r[-1]) for r in rows]
    _write(OUT / "vowel.scale", _scale(X), y)

    raw = zf.read("keel_ds/data/balanced/raw/letter.dat").decode().split()[:15000]
    rows = [line.split(",") for line in raw]
    X = np.array([[float(v) for v in r[:-1]] for r in rows])
    y = [ord(r[-1]) - ord("A") + 1 for r in rows]
    _write(OUT / "letter.scale", _scale(X), y)


if __name__ == "__main__":
    main(sys.argv[1])
