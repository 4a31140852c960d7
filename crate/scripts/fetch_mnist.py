#!/usr/bin/env python3
"""Build gzipped MNIST IDX files from the digits bundled in the `mnist` npm package.

The package ships 10000 normalized 28x28 digits (about 1000 per class). Each
class is split deterministically: the first 80% go to the train files, the rest
to the test files.

usage: scripts/fetch_mnist.py [out_dir]   (default: data/mnist)
"""
import gzip
import json
import os
import struct
import subprocess
import sys
import tarfile
import tempfile

TRAIN_FRACTION = 0.80


def write_images(path, images):
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "data/mnist"
    os.makedirs(out, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True,
                       stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        with tarfile.open(os.path.join(tmp, "mnist-1.1.0.tgz")) as tar:
            tar.extractall(tmp)
        train, test = [], []
        for digit in range(10):
            with open(os.path.join(tmp, "package/src/digits/%d.json" % digit)) as f:
                flat = json.load(f)["data"]
            n = len(flat) // 784
            cut = int(n * TRAIN_FRACTION)
            for i in range(n):
                px = [min(255, max(0, round(v * 255))) for v in flat[i * 784:(i + 1) * 784]]
                (train if i < cut else test).append((px, digit))
    for name, rows in (("train", train), ("t10k", test)):
        write_images(os.path.join(out, "%s-images-idx3-ubyte.gz" % name), [r[0] for r in rows])
        write_labels(os.path.join(out, "%s-labels-idx1-ubyte.gz" % name), [r[1] for r in rows])
        print("%s: %d items" % (name, len(rows)))


if __name__ == "__main__":
    main()
