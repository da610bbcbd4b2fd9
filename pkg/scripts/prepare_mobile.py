"""Build the positive-unlabeled CSV from the Kaggle mobile-price ``train.csv``.

Usage::

    python scripts/prepare_mobile.py path/to/train.csv tests/data/mobile_pu.csv

Price range 2 becomes the labeled (source) sample. Price ranges 0 and 1 are
the unlabeled positives and price range 3 the unlabeled negatives. With 500
phones per class this gives n = 500 and m = 1500, of which 1000 are
positive. The ``y`` column carries the target labels (empty for
source rows); the readers ignore it when fitting.
"""

import csv
import sys


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        sys.exit(__doc__)
    src, dst = argv
    with open(src, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "price_range" not in rows[0]:
        sys.exit(f"{src}: expected a 'price_range' column")
    features = [k for k in rows[0] if k != "price_range"]
    out = []
    for r in rows:
        cls = int(r["price_range"])
        if cls == 2:
            out.append(["source", ""] + [r[k] for k in features])
        else:
            out.append(["target", "1" if cls in (0, 1) else "0"] + [r[k] for k in features])
    # source rows first, then target rows, each in file order
    out.sort(key=lambda row: row[0] != "source")
    with open(dst, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["role", "y"] + features)
        w.writerows(out)
    n = sum(row[0] == "source" for row in out)
    print(f"wrote {dst}: n={n} source rows, m={len(out) - n} target rows, p={len(features)}")


if __name__ == "__main__":
    main()
