"""Best-lambda test accuracy of the four models as the class preference strength varies.

    python3 scripts/w_table.py --seed 0 --out results/w_seed0.csv
"""

import argparse
from pathlib import Path

from socialchoice.experiments import w_table
from socialchoice.io import atomic_write_text


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()
    res = w_table(args.seed)
    print(res.format())
    print(f"({res.seconds:.0f} s)")
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        atomic_write_text(args.out, res.to_csv())


if __name__ == "__main__":
    main()
