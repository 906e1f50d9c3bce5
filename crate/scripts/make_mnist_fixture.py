"""Write a small MNIST subset in IDX format from the `mnist` npm package.

Usage: python3 scripts/make_mnist_fixture.py <package>/src/digits <out_dir>
"""

import json
import struct
import sys
from pathlib import Path

TRAIN_PER_CLASS = 300
TEST_PER_CLASS = 100


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    splits = {"train": ([], []), "t10k": ([], [])}
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        rows = [data[i:i + 784] for i in range(0, len(data), 784)]
        for name, lo, hi in [("train", 0, TRAIN_PER_CLASS),
                             ("t10k", TRAIN_PER_CLASS, TRAIN_PER_CLASS + TEST_PER_CLASS)]:
            for row in rows[lo:hi]:
                splits[name][0].append(bytes(round(v * 255) for v in row))
                splits[name][1].append(digit)
    for name, (images, labels) in splits.items():
        # interleave classes so prefixes stay balanced
        order = sorted(range(len(labels)), key=lambda i: (i % (len(labels) // 10), labels[i]))
        with open(out / f"{name}-images-idx3-ubyte", "wb") as f:
            f.write(struct.pack(">IIII", 0x803, len(order), 28, 28))
            f.writelines(images[i] for i in order)
        with open(out / f"{name}-labels-idx1-ubyte", "wb") as f:
            f.write(struct.pack(">II", 0x801, len(order)))
            f.write(bytes(labels[i] for i in order))


if __name__ == "__main__":
    main()
