"""Time one ADMM iteration and one Gibbs sweep at several worker counts.

    python3 scripts/thread_scaling.py --workers 1 2 4 8
"""

import argparse
import os

from socialchoice.experiments import thread_scaling


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=100_000)
    ap.add_argument("--edges", type=int, default=500_000)
    ap.add_argument("--workers", type=int, nargs="+", default=[1, 8])
    ap.add_argument("--blocks", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print(f"cpus available: {len(os.sched_getaffinity(0))}")
    res = thread_scaling(args.nodes, args.edges, tuple(args.workers), args.blocks,
                         rng_seed=args.seed)
    print(res.to_csv(), end="")
    print(f"identical across workers: admm={res.admm_identical} gibbs={res.gibbs_identical}")


if __name__ == "__main__":
    main()
