#!/usr/bin/env python3
"""Write the MNIST files under data/mnist from the four raw IDX files.

Keeps the first N training examples (default 10000) and the full test set.
Output is gzip with a zero mtime so reruns are byte-identical.

    python3 scripts/prepare_mnist.py /path/to/raw/idx/dir data/mnist
"""

import argparse
import gzip
import struct
from pathlib import Path


def read(path: Path) -> bytes:
    data = path.read_bytes()
    return gzip.decompress(data) if path.suffix == ".gz" else data


def find(src: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        if (src / name).exists():
            return src / name
    raise SystemExit(f"missing {stem}[.gz] in {src}")


def head(raw: bytes, n: int) -> bytes:
    dims = raw[3]
    shape = struct.unpack(">" + "I" * dims, raw[4 : 4 + 4 * dims])
    if n > shape[0]:
        raise SystemExit(f"asked for {n} rows, file has {shape[0]}")
    row = 1
    for s in shape[1:]:
        row *= s
    header = raw[:4] + struct.pack(">" + "I" * dims, n, *shape[1:])
    start = 4 + 4 * dims
    return header + raw[start : start + n * row]


def write(path: Path, data: bytes) -> None:
    path.write_bytes(gzip.compress(data, mtime=0))


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("src", type=Path)
    ap.add_argument("dst", type=Path)
    ap.add_argument("--train", type=int, default=10000)
    args = ap.parse_args()
    args.dst.mkdir(parents=True, exist_ok=True)
    k = args.train // 1000
    for kind in ("images-idx3-ubyte", "labels-idx1-ubyte"):
        raw = read(find(args.src, f"train-{kind}"))
        write(args.dst / f"train-{k}k-{kind}.gz", head(raw, args.train))
        raw = read(find(args.src, f"t10k-{kind}"))
        write(args.dst / f"t10k-{kind}.gz", raw)


if __name__ == "__main__":
    main()
