"""Spread of test IOU for the learning-sanity setting over init/shuffle seeds.

200 train / 50 test ellipses at 32x32, depth 3, base 8, 30 epochs, lr 4e-4,
batch 4. Used once to check the 0.85 bar.
"""

import argparse
import time

import numpy as np

from alseg import toynet as tn
from alseg.al_loop import evaluate
from alseg.rng import RngStream
from alseg.synthdata import generate_dataset, stack


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--data-seed", type=int, default=0)
    args = p.parse_args()

    data = generate_dataset(250, 32, args.data_seed)
    x, y = stack(data[:200])
    ious = []
    for s in range(args.seeds):
        t0 = time.perf_counter()
        m = tn.build_model(tn.NetConfig(dropout_placement="None"), RngStream(s, "init"))
        trace = tn.train(m, x, y, 30, 4e-4, 4, RngStream(s, "train"))
        ious.append(evaluate(m, data[200:]))
        print(f"seed {s}: IOU {ious[-1]:.4f}  final loss {trace[-1]:.4f}  {time.perf_counter() - t0:.0f}s")
    print(f"min {min(ious):.4f}  mean {np.mean(ious):.4f}")


if __name__ == "__main__":
    main()
