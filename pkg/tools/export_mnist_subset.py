"""Regenerate the bundled MNIST subset under src/bfpcl/_data/.

Source: the 5000-image MNIST sample shipped with mlxtend
(``mlxtend.data.mnist_data``, 500 images per digit).  Each digit is split
400/100 into train/test with a fixed seed and both splits are shuffled.

    pip install --no-deps mlxtend
    python tools/export_mnist_subset.py
"""

from pathlib import Path

import numpy as np
from mlxtend.data import mnist_data

from bfpcl.data import LabeledDataset, save_idx

SEED = 20230601
OUT = Path(__file__).resolve().parents[1] / "src" / "bfpcl" / "_data"


def main():
    X, y = mnist_data()
    rng = np.random.default_rng(SEED)
    train_idx, test_idx = [], []
    for digit in range(10):
        idx = rng.permutation(np.flatnonzero(y == digit))
        train_idx.append(idx[:400])
        test_idx.append(idx[400:])
    for name, idx in (("train", train_idx), ("test", test_idx)):
        idx = rng.permutation(np.concatenate(idx))
        ds = LabeledDataset(X[idx] / 255.0, y[idx].astype(np.int64), 10, (28, 28))
        save_idx(
            ds,
            OUT / f"mnist5k-{name}-images-idx3-ubyte.gz",
            OUT / f"mnist5k-{name}-labels-idx1-ubyte.gz",
            compress=True,
        )
        print(name, len(ds), np.bincount(ds.labels))


if __name__ == "__main__":
    main()
