"""Best-lambda test accuracy of the four models as cross-class connectivity grows.

    python3 scripts/beta_table.py --seed 0 --out results/beta_seed0.csv
"""

import argparse
from pathlib import Path

from socialchoice.experiments import beta_table
from socialchoice.io import atomic_write_text


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()
    res = beta_table(args.seed)
    print(res.format())
    print(f"({res.seconds:.0f} s)")
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        atomic_write_text(args.out, res.to_csv())


if __name__ == "__main__":
    main()
