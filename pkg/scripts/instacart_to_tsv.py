"""Convert the public Instacart CSV release into the package's TSV inputs.

Reads orders.csv, order_products__prior.csv, order_products__train.csv (if
present), products.csv, aisles.csv and departments.csv from --raw and writes:

  orders.tsv        user, order, time, item   (time = order_number * 1000 + cart position)
  items.tsv         item, product-name tokens (aisle and department left out)
  departments.tsv   item, department          (probe labels)
  aisles.tsv        item, aisle               (probe labels)

The dataset has no clock times, so the ordinal time keeps each user's purchases
in order: a window of k previous purchases then spans order boundaries.
"""

from __future__ import annotations

import argparse
import csv
import re
import sys
from pathlib import Path

TOKEN = re.compile(r"[a-z0-9]+")


def tokens(name: str) -> list[str]:
    return list(dict.fromkeys(TOKEN.findall(name.lower())))


def convert(raw: Path, out: Path) -> dict[str, int]:
    out.mkdir(parents=True, exist_ok=True)
    orders = {}
    with open(raw / "orders.csv", newline="") as f:
        for row in csv.DictReader(f):
            if row["eval_set"] in ("prior", "train"):
                orders[row["order_id"]] = (row["user_id"], int(row["order_number"]))
    n_events = 0
    with open(out / "orders.tsv", "w", encoding="utf-8") as w:
        for name in ("order_products__prior.csv", "order_products__train.csv"):
            path = raw / name
            if not path.exists():
                continue
            with open(path, newline="") as f:
                for row in csv.DictReader(f):
                    o = orders.get(row["order_id"])
                    if o is None:
                        continue
                    user, number = o
                    t = number * 1000 + int(row["add_to_cart_order"])
                    w.write(f"u{user}\to{row['order_id']}\t{t}\tp{row['product_id']}\n")
                    n_events += 1
    aisles = {r["aisle_id"]: r["aisle"] for r in csv.DictReader(open(raw / "aisles.csv", newline=""))}
    depts = {r["department_id"]: r["department"]
             for r in csv.DictReader(open(raw / "departments.csv", newline=""))}
    n_items = 0
    with open(raw / "products.csv", newline="") as f, \
            open(out / "items.tsv", "w", encoding="utf-8") as wi, \
            open(out / "departments.tsv", "w", encoding="utf-8") as wd, \
            open(out / "aisles.tsv", "w", encoding="utf-8") as wa:
        for row in csv.DictReader(f):
            item = f"p{row['product_id']}"
            toks = tokens(row["product_name"])
            if toks:
                wi.write(f"{item}\t{' '.join(toks)}\n")
            wd.write(f"{item}\t{depts[row['department_id']].replace(chr(9), ' ')}\n")
            wa.write(f"{item}\t{aisles[row['aisle_id']].replace(chr(9), ' ')}\n")
            n_items += 1
    return {"events": n_events, "orders": len(orders), "products": n_items}


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--raw", required=True, type=Path, help="directory with the Instacart CSV files")
    p.add_argument("--out", required=True, type=Path, help="output directory for the TSV files")
    args = p.parse_args(argv)
    missing = [n for n in ("orders.csv", "order_products__prior.csv", "products.csv", "aisles.csv",
                           "departments.csv") if not (args.raw / n).exists()]
    if missing:
        print(f"missing in {args.raw}: {', '.join(missing)}", file=sys.stderr)
        return 2
    for k, v in convert(args.raw, args.out).items():
        print(f"{k}={v}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
