#!/usr/bin/env python3
"""Convert the 5000-image MNIST subset shipped inside the mlxtend wheel into
IDX image files (train/test split) readable by `provae --data mnist`.

    pip download mlxtend --no-deps -d /tmp/mlx
    python3 tools/mnist_subset_to_idx.py /tmp/mlx/mlxtend-*.whl data/mnist

The split is a fixed seeded permutation, so the output is byte-stable.
"""
import argparse
import gzip
import io
import pathlib
import random
import struct
import zipfile

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def read_rows(source: pathlib.Path):
    if source.suffix == ".whl":
        with zipfile.ZipFile(source) as whl:
            raw = whl.read(CSV_MEMBER)
    else:
        raw = source.read_bytes()
    text = gzip.decompress(raw).decode()
    rows = []
    for line in io.StringIO(text):
        line = line.strip()
        if not line:
            continue
        values = [int(float(v)) for v in line.split(",")]
        rows.append(bytes(values[:784]))
    return rows


def write_idx(path: pathlib.Path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        for img in images:
            f.write(img)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("source", type=pathlib.Path, help="mlxtend wheel or mnist_5k.csv.gz")
    parser.add_argument("out", type=pathlib.Path)
    parser.add_argument("--test", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=20190527)
    args = parser.parse_args()

    rows = read_rows(args.source)
    order = list(range(len(rows)))
    random.Random(args.seed).shuffle(order)
    shuffled = [rows[i] for i in order]
    test, train = shuffled[: args.test], shuffled[args.test :]

    args.out.mkdir(parents=True, exist_ok=True)
    write_idx(args.out / "train-images-idx3-ubyte", train)
    write_idx(args.out / "t10k-images-idx3-ubyte", test)
    print(f"wrote {len(train)} train / {len(test)} test images to {args.out}")


if __name__ == "__main__":
    main()
