"""Write a 5000-image MNIST subset from an mlxtend wheel as IDX files.

Usage: python3 scripts/mnist_subset_to_idx.py WHEEL OUT_DIR
"""
import gzip
import struct
import sys
import zipfile
from pathlib import Path

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def main():
    wheel, out = Path(sys.argv[1]), Path(sys.argv[2])
    rows = gzip.decompress(zipfile.ZipFile(wheel).read(MEMBER)).decode().splitlines()
    pixels, labels = bytearray(), bytearray()
    for row in rows:
        values = [int(float(v)) for v in row.split(",")]
        pixels.extend(values[:-1])
        labels.append(values[-1])
    n = len(rows)
    out.mkdir(parents=True, exist_ok=True)
    (out / "train-images-idx3-ubyte").write_bytes(struct.pack(">IIII", 0x803, n, 28, 28) + pixels)
    (out / "train-labels-idx1-ubyte").write_bytes(struct.pack(">II", 0x801, n) + labels)
    print(f"wrote {n} images to {out}")


if __name__ == "__main__":
    main()
