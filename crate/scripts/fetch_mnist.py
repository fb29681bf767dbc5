#!/usr/bin/env python3
"""Populate data/mnist/ with IDX files.

Tries the canonical MNIST mirrors first. When none is reachable, falls back to
the 10,000-digit MNIST subset shipped in the `mnist` npm package (MIT), split
per class into 8,000 train / 2,000 test images and written as gzipped IDX.
"""
import gzip
import io
import json
import os
import random
import struct
import sys
import tarfile
import urllib.request

MIRRORS = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
]
FILES = [
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
]
NPM_TARBALL = "https://registry.npmjs.org/mnist/-/mnist-1.1.0.tgz"


def fetch(url, timeout=30):
    with urllib.request.urlopen(url, timeout=timeout) as r:
        return r.read()


def try_official(out):
    for base in MIRRORS:
        try:
            blobs = {f: fetch(base + f) for f in FILES}
        except Exception as e:  # noqa: BLE001
            print(f"mirror {base} unavailable: {e}", file=sys.stderr)
            continue
        for f, b in blobs.items():
            with open(os.path.join(out, f), "wb") as fh:
                fh.write(b)
        return True
    return False


def write_images(path, images):
    hdr = struct.pack(">IIII", 0x803, len(images), 28, 28)
    with gzip.open(path, "wb") as fh:
        fh.write(hdr)
        for img in images:
            fh.write(bytes(img))


def write_labels(path, labels):
    with gzip.open(path, "wb") as fh:
        fh.write(struct.pack(">II", 0x801, len(labels)))
        fh.write(bytes(labels))


def from_npm(out, tarball=None):
    raw = open(tarball, "rb").read() if tarball else fetch(NPM_TARBALL, timeout=120)
    tar = tarfile.open(fileobj=io.BytesIO(raw), mode="r:gz")
    train, test = [], []
    for d in range(10):
        data = json.load(tar.extractfile(f"package/src/digits/{d}.json"))["data"]
        n = len(data) // 784
        imgs = [
            [min(255, max(0, round(v * 255))) for v in data[i * 784:(i + 1) * 784]]
            for i in range(n)
        ]
        cut = (n * 4) // 5
        train += [(img, d) for img in imgs[:cut]]
        test += [(img, d) for img in imgs[cut:]]
    for name, rows in (("train", train), ("t10k", test)):
        random.Random(20180523).shuffle(rows)
        write_images(os.path.join(out, f"{name}-images-idx3-ubyte.gz"), [r[0] for r in rows])
        write_labels(os.path.join(out, f"{name}-labels-idx1-ubyte.gz"), [r[1] for r in rows])
        print(f"{name}: {len(rows)} images")


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(os.path.dirname(__file__), "..", "data", "mnist")
    os.makedirs(out, exist_ok=True)
    tarball = os.environ.get("MNIST_NPM_TARBALL")
    if not tarball and try_official(out):
        print("downloaded official MNIST")
        return
    from_npm(out, tarball)


if __name__ == "__main__":
    main()
