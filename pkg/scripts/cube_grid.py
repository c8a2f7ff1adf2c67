"""Detection robustness on the 12-edge cube over a (noise, outliers) grid.

    python3 scripts/cube_grid.py --runs 20 --out results/cube_grid.csv
"""

import argparse
import time
from pathlib import Path

from linesurf.evaluation import GRID_NOISE, GRID_OUTLIERS, cube_experiment
from linesurf.ransac import DetectParams


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--epsilon", type=float, default=0.06)
    ap.add_argument("--n-iter", type=int, default=100)
    ap.add_argument("--patience", type=int, default=DetectParams.patience)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    t0 = time.perf_counter()
    params = DetectParams(epsilon=args.epsilon, n_iter=args.n_iter, patience=args.patience)
    grid = cube_experiment(GRID_NOISE, GRID_OUTLIERS, args.runs, params, args.seed)
    csv = grid.to_csv()
    print(csv, end="")
    print(f"# {args.runs} runs per cell, {time.perf_counter() - t0:.1f}s")
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(csv)


if __name__ == "__main__":
    main()
