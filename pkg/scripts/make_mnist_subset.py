"""Write MNIST IDX files from the 5000-image MNIST sample bundled with mlxtend.

The bundled CSV is sorted by class, so records are shuffled with a fixed seed
before writing; the first N records of the output are then a random subset.

    python scripts/make_mnist_subset.py --out "$LANDSCAPE_DATA_DIR/mnist"
"""

import argparse
import gzip
import importlib.util
import io
from pathlib import Path

import numpy as np

from landscape_hessian.data import write_idx

IMAGES = "train-images-idx3-ubyte"
LABELS = "train-labels-idx1-ubyte"


def bundled_csv() -> Path:
    spec = importlib.util.find_spec("mlxtend")
    if spec is None or not spec.submodule_search_locations:
        raise SystemExit("mlxtend is not installed (pip install mlxtend)")
    return Path(spec.submodule_search_locations[0]) / "data" / "data" / "mnist_5k.csv.gz"


def build(out: Path, seed: int = 0) -> tuple[Path, Path]:
    table = np.loadtxt(io.StringIO(gzip.decompress(bundled_csv().read_bytes()).decode()), delimiter=",")
    pixels = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, -1].astype(np.uint8)
    order = np.random.default_rng(seed).permutation(labels.size)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / IMAGES, pixels[order])
    write_idx(out / LABELS, labels[order])
    return out / IMAGES, out / LABELS


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    for path in build(args.out, args.seed):
        print(path)
