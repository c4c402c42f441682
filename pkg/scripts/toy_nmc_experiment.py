"""Compare held-out non-mask change with and without the NMC term on the toy domains.

    python3 scripts/toy_nmc_experiment.py --iterations 300 --seeds 3 4 5
"""

import argparse
import time

import numpy as np
import torch

from maskaug import toy


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iterations", type=int, default=300)
    ap.add_argument("--seeds", type=int, nargs="+", default=[3])
    ap.add_argument("--n-train", type=int, default=16)
    ap.add_argument("--n-eval", type=int, default=8)
    args = ap.parse_args()
    torch.set_num_threads(1)

    rows = []
    for seed in args.seeds:
        vals = {}
        for nmc in (False, True):
            t0 = time.perf_counter()
            bundle = toy.train_toy(nmc, args.iterations, seed, args.n_train)
            vals[nmc] = toy.held_out_non_mask_change(bundle, n=args.n_eval)
            print(f"seed {seed} nmc={nmc!s:5} non-mask change {vals[nmc]:7.3f} ({time.perf_counter() - t0:.0f}s)")
        rows.append(1 - vals[True] / vals[False])
        print(f"seed {seed} reduction {rows[-1]:.1%}")
    print(f"mean reduction over {len(rows)} seed(s): {np.mean(rows):.1%}")


if __name__ == "__main__":
    main()
