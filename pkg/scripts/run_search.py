"""Small random search over the default encoder/decoder/lr/batch space.

    python scripts/run_search.py --trials 12 --out results/search
"""

import argparse

from alseg import ednas
from alseg import metrics_io as mio
from alseg.rng import RngStream
from alseg.synthdata import generate_dataset


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--trials", type=int, default=12)
    p.add_argument("--epochs", type=int, default=ednas.DEFAULT_SEARCH_EPOCHS)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="results/search")
    args = p.parse_args()

    data = generate_dataset(args.n_train + args.n_test, 32, args.seed)
    space = ednas.SearchSpace()
    board, trials = ednas.random_search(space, args.trials, args.epochs, RngStream(args.seed, "ednas"),
                                        data[:args.n_train], data[args.n_train:], workers=args.workers)
    mio.emit_search(trials, board.rows, args.out)
    print(f"space_size: {ednas.space_size(space)}")
    print(ednas.format_table(board, top=5))


if __name__ == "__main__":
    main()
