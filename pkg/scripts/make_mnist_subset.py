"""Build the 1k/1k MNIST IDX subset used by the smoke-training runs.

Source: the 5000-digit MNIST sample shipped inside the ``mlxtend`` wheel
(``mlxtend/data/data/mnist_5k.csv.gz``). The wheel is read as a zip, so
mlxtend itself never needs to be installed::

    pip download mlxtend --no-deps -d /tmp/wheels
    python scripts/make_mnist_subset.py /tmp/wheels/mlxtend-*.whl data/mnist-1k
"""
import gzip
import io
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def write_idx(path, array, magic):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">I", magic))
        for dim in array.shape:
            f.write(struct.pack(">I", dim))
        f.write(np.ascontiguousarray(array, dtype=np.uint8).tobytes())


def main(wheel, out_dir, n_train=1000, n_test=1000, seed=0):
    raw = zipfile.ZipFile(wheel).read(MEMBER)
    table = np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",")
    images = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, -1].astype(np.uint8)
    order = np.random.default_rng(seed).permutation(len(labels))
    train, test = order[:n_train], order[n_train:n_train + n_test]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train-images-idx3-ubyte.gz", images[train], 2051)
    write_idx(out / "train-labels-idx1-ubyte.gz", labels[train], 2049)
    write_idx(out / "test-images-idx3-ubyte.gz", images[test], 2051)
    write_idx(out / "test-labels-idx1-ubyte.gz", labels[test], 2049)


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
