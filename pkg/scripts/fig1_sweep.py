"""Trial-mean sum rate against the CP budget, the BS budget or the energy target.

Defaults reproduce the sweeps of the acceptance suite: the CP sweep runs at a
10 dBm BS budget and the BS sweep at a 40 dBm CP budget, where the access and
fronthaul limits cross inside the swept range.
"""
import argparse
import sys

from swiptcran import cli

PRESETS = {
    "p_cp_max": (dict(P_bs_max_dbm=10.0), "34,36,38,40,42,44,46,48,50"),
    "p_bs_max": (dict(P_cp_max_dbm=40.0), "4,6,8,10,12,14,16,18,20"),
    "e_min": (dict(P_bs_max_dbm=10.0, P_cp_max_dbm=50.0), "0,2.5e-11,5e-11,7.5e-11,1e-10"),
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("param", choices=sorted(PRESETS))
    ap.add_argument("--config", help="INI scenario file; preset overrides are applied on top")
    ap.add_argument("--values", help="comma-separated grid; defaults to the preset grid")
    ap.add_argument("--trials", type=int, default=5)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--e-min", type=float, help="energy target in mW for the power sweeps")
    ap.add_argument("--out", help="CSV path; stdout when omitted")
    args = ap.parse_args(argv)

    overrides, grid = PRESETS[args.param]
    config = cli.load_config(args.config).with_(**overrides)
    if args.e_min is not None:
        config = config.with_(E_min=args.e_min)
    values = tuple(float(x) for x in (args.values or grid).split(","))
    spec = cli.SweepSpec(args.param, values, args.trials, config=config, seed_base=args.seed, out=args.out)
    rows = cli.run_sweep(spec, jobs=args.jobs)
    text = cli.write_csv(rows, cli.SWEEP_COLUMNS, args.out)
    if args.out is None:
        sys.stdout.write(text)
    for value, mean in cli.sweep_means(rows).items():
        print(f"{args.param} = {value:g}: mean sum rate {mean:.3f} Mbit/s", file=sys.stderr)


if __name__ == "__main__":
    main()
