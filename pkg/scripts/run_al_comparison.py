"""Desk-scale MFE vs Random comparison (acceptance criterion 7 setting).

    python scripts/run_al_comparison.py --seeds 0 1 2 --out results/al_desk
"""

import argparse
import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from alseg import al_loop as al
from alseg import metrics_io as mio
from alseg import toynet as tn
from alseg.synthdata import generate_dataset


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--acquisitions", nargs="+", default=["MFE", "Random"])
    p.add_argument("--placement", default="FullDecoder", choices=[x.value for x in tn.Placement])
    p.add_argument("--budget", type=int, default=150)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="results/al_desk")
    args = p.parse_args()

    data = generate_dataset(al.DESK_POOL + al.DESK_TEST, al.DESK_SIZE, args.data_seed)
    pool, test = data[:al.DESK_POOL], data[al.DESK_POOL:]
    cfg = al.desk_preset(label_budget=args.budget, net_config=tn.NetConfig(dropout_placement=args.placement))
    table, runs = al.compare_acquisitions(cfg, pool, test, args.acquisitions, seeds=args.seeds,
                                          workers=args.workers)
    full = float(np.mean([al.full_data_iou(replace(cfg, seed=s), pool, test) for s in args.seeds]))

    out = Path(args.out)
    mio.emit_reports(runs, out, len(pool))
    mio.emit_curve_summary(table, out)
    verdict = al.compare_curves(table, full, args.acquisitions[0], args.acquisitions[-1])
    mio.write_json(out / "verdict.json", {"full_data_iou": full, "seeds": args.seeds,
                                          "placement": args.placement, **verdict})
    for name in args.acquisitions:
        print(f"{name:<8}", " ".join(f"{r['mean_iou']:.3f}" for r in table if r["acquisition"] == name))
    print(json.dumps({k: verdict[k] for k in ("curve_ok", "labels", "labels_ok", "passed")}, default=str))


if __name__ == "__main__":
    main()
