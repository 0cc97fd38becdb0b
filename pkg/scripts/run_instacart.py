"""Full model, ablations and cold start on the converted Instacart data.

    python scripts/instacart_to_tsv.py --raw instacart_csv/ --out instacart_tsv/
    python scripts/run_instacart.py --tsv instacart_tsv/ --work runs/instacart --threads 16
"""

from __future__ import annotations

import argparse
import logging
from pathlib import Path

from dualemb.experiments import instacart_suite


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--tsv", required=True, type=Path)
    p.add_argument("--work", required=True, type=Path)
    p.add_argument("--threads", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO)
    results = instacart_suite(args.tsv, args.work, args.threads, args.seed)
    for run, metrics in results.items():
        for k, v in metrics.items():
            print(f"{run}\t{k}\t{v:.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
