#!/usr/bin/env python3
"""Repackage the `mnist` npm package's bundled digit JSONs as IDX files.

The npm package (https://www.npmjs.com/package/mnist, MIT) ships ~10k
genuine MNIST digits as per-class JSON arrays of 784 floats, each float
being a pixel byte divided by 255 and rounded to 3 decimals. The rounding
error is below 0.5/255, so round(v * 255) recovers the original byte
exactly.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/make_mnist_subset.py package/src/digits data/mnist10k
"""

import json
import struct
import sys
from pathlib import Path


def main() -> int:
    if len(sys.argv) != 3:
        print(__doc__)
        return 2
    digits_dir, out_dir = Path(sys.argv[1]), Path(sys.argv[2])
    out_dir.mkdir(parents=True, exist_ok=True)

    images = bytearray()
    labels = bytearray()
    n = 0
    for digit in range(10):
        flat = json.loads((digits_dir / f"{digit}.json").read_text())["data"]
        assert len(flat) % 784 == 0
        for i in range(0, len(flat), 784):
            images.extend(round(v * 255) for v in flat[i : i + 784])
            labels.append(digit)
            n += 1
        print(f"digit {digit}: {len(flat) // 784} samples")

    with open(out_dir / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.write(images)
    with open(out_dir / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels)
    print(f"wrote {n} samples to {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
