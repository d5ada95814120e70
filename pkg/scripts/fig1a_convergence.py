"""Objective per SCA iteration for a few CP power budgets on one channel drop."""
import argparse
import csv
import sys

from swiptcran import SCAOptions, SystemConfig, generate_channels, run_algorithm1
from swiptcran.cli import load_config


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="INI scenario file; defaults to the built-in scenario")
    ap.add_argument("--p-cp", default="40,43", help="comma-separated CP budgets in dBm")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-iter", type=int, default=30)
    ap.add_argument("--out", default="-", help="CSV path or - for stdout")
    args = ap.parse_args(argv)

    base: SystemConfig = load_config(args.config)
    out = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["p_cp_max_dbm", "iteration", "objective_mbps", "status"])
    for p in (float(x) for x in args.p_cp.split(",")):
        config = base.with_(P_cp_max_dbm=p)
        result = run_algorithm1(generate_channels(config, args.seed), config, SCAOptions(max_iter=args.max_iter))
        for n, (obj, status) in enumerate(zip(result.trace.objective, result.trace.status)):
            writer.writerow([f"{p:g}", n, f"{obj:.9g}", status])
    if out is not sys.stdout:
        out.close()


if __name__ == "__main__":
    main()
