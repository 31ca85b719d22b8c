"""Plain-text image files: 8-bit PGM (P2) for viewing, CSV for exact values."""

import numpy as np


def write_pgm(path, u, n, maxval=255):
    """Write a flat image as plain PGM, clipping to [0, 1] and quantizing."""
    x = np.clip(np.asarray(u, dtype=float).reshape(n, n), 0.0, 1.0)
    q = np.rint(x * maxval).astype(int)
    lines = ["P2", f"{n} {n}", str(maxval)]
    lines.extend(" ".join(str(v) for v in row) for row in q)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_pgm(path):
    """Read a plain PGM into (flat image scaled to [0, 1], side length).

    Only square P2 images are accepted; '#' comments are stripped.
    Malformed files raise ValueError naming the defect.
    """
    with open(path) as fh:
        tokens = []
        for line in fh:
            tokens.extend(line.split("#", 1)[0].split())
    if not tokens or tokens[0] != "P2":
        raise ValueError(f"{path}: not a plain PGM (P2) file")
    try:
        nums = [int(t) for t in tokens[1:]]
    except ValueError:
        raise ValueError(f"{path}: non-integer token in PGM data") from None
    if len(nums) < 3:
        raise ValueError(f"{path}: truncated PGM header")
    w, h, maxval = nums[:3]
    if w != h:
        raise ValueError(f"{path}: image is {w}x{h}, expected square")
    if maxval <= 0:
        raise ValueError(f"{path}: maxval must be positive, got {maxval}")
    data = nums[3:]
    if len(data) != w * h:
        raise ValueError(f"{path}: expected {w * h} pixels, found {len(data)}")
    return np.array(data, dtype=float) / maxval, h


def write_csv(path, u, n):
    """Write a flat image as full-precision CSV rows."""
    with open(path, "w") as fh:
        for row in np.asarray(u, dtype=float).reshape(n, n):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_csv(path):
    """Read a square CSV image; reports the offending line on bad input."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(t) for t in line.split(",")])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed number in CSV row") from None
    if not rows:
        raise ValueError(f"{path}: empty CSV image")
    n = len(rows)
    for lineno, row in enumerate(rows, start=1):
        if len(row) != n:
            raise ValueError(
                f"{path}:{lineno}: row has {len(row)} columns, expected {n} for a square image"
            )
    return np.array(rows, dtype=float).ravel(), n
