"""Write the bundled 8x8 digits, upsampled to 28x28, as the four MNIST IDX files.

    python3 scripts/make_digit_idx.py OUT_DIR [--seed N]

The output directory can be passed as ``dataset.mnist_dir`` in a config
when the real MNIST files are not available.
"""

import argparse
from pathlib import Path

from mgdamtl.data import digits_as_mnist, write_idx

NAMES = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out", help="directory to write the IDX files into")
    p.add_argument("--seed", type=int, default=0, help="seed of the train/test split")
    args = p.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, arr in zip(NAMES, digits_as_mnist(seed=args.seed)):
        write_idx(arr, out / name)
        print(f"{out / name}: shape {arr.shape}")


if __name__ == "__main__":
    main()
