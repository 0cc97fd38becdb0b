"""Compare 1-thread and N-thread training on the synthetic corpus.

    python scripts/parallel_parity.py --threads 8
"""

from __future__ import annotations

import argparse
import os

from dualemb.experiments import synthetic_run
from dualemb.synth import SynthSpec
from dualemb.trainer import TrainConfig


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--work", default="parity_run")
    p.add_argument("--threads", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    print(f"cpus\t{os.cpu_count()}")
    runs = {}
    for t in (1, args.threads):
        r = synthetic_run(args.work, SynthSpec(seed=args.seed), TrainConfig(seed=args.seed, threads=t))
        runs[t] = r
        print(f"threads={t}\tauc={r.within_basket_auc:.4f}\ttrain_seconds={r.result.wall_seconds:.2f}")
    one, many = runs[1], runs[args.threads]
    print(f"auc_diff\t{abs(one.within_basket_auc - many.within_basket_auc):.4f}")
    print(f"time_ratio\t{many.result.wall_seconds / one.result.wall_seconds:.3f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
