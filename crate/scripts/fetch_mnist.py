#!/usr/bin/env python3
"""Build gzipped IDX files from the 10k MNIST digits bundled in the npm `mnist` package.

Usage: python3 scripts/fetch_mnist.py [OUT_DIR]

Requires `npm` on PATH (only `npm pack` is used; nothing is installed).
Pixels are stored in the package as value/255 rounded to three decimals;
they are mapped back to bytes with round(v * 255).
"""
import gzip
import json
import os
import random
import struct
import subprocess
import sys
import tarfile
import tempfile


def main():
    out_dir = sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "..", "data", "mnist")
    os.makedirs(out_dir, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True, stdout=subprocess.DEVNULL)
        with tarfile.open(os.path.join(tmp, "mnist-1.1.0.tgz")) as tar:
            tar.extractall(tmp)
        samples = []
        for digit in range(10):
            with open(os.path.join(tmp, "package", "src", "digits", f"{digit}.json")) as f:
                flat = json.load(f)["data"]
            assert len(flat) % 784 == 0
            for i in range(len(flat) // 784):
                pixels = bytes(min(255, max(0, round(v * 255))) for v in flat[i * 784:(i + 1) * 784])
                samples.append((pixels, digit))
    random.Random(20190520).shuffle(samples)
    n = len(samples)
    with gzip.GzipFile(os.path.join(out_dir, "images-idx3-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 2051, n, 28, 28))
        for pixels, _ in samples:
            f.write(pixels)
    with gzip.GzipFile(os.path.join(out_dir, "labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">II", 2049, n))
        f.write(bytes(label for _, label in samples))
    print(f"wrote {n} images to {out_dir}")


if __name__ == "__main__":
    main()
