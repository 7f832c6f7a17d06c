#!/usr/bin/env python3
"""Run the seeded end-to-end studies and print one verdict line per study.

    python scripts/run_studies.py                 # all studies, desk scale
    python scripts/run_studies.py sir spatial     # a subset
    python scripts/run_studies.py --seed 3 --json results.json
"""

import argparse
import json
import sys

from priorcvae import studies

STUDIES = {
    "fidelity": lambda seed: [studies.conditioning_fidelity(seed=seed)],
    "recovery": None,  # two verdicts from one set of replications, handled below
    "sir": lambda seed: [studies.sir_envelope(seed=seed)],
    "doublewell": lambda seed: [studies.doublewell_bimodality(seed=seed)],
    "lgcp": lambda seed: [studies.lgcp_reconstruction(seed=seed)],
    "binary": lambda seed: [studies.binary_condition(seed=seed)],
    "spatial": lambda seed: [studies.spatial_agreement(seed=seed)],
}


def _recovery(seed, reps):
    records, train_s = studies.recovery_runs(reps=reps, seed=seed,
                                             log=lambda r: print(f"  rep {r.rep}: ESS/s ratio {r.ratio:.1f}",
                                                                 file=sys.stderr))
    out = [studies.lengthscale_recovery(records), studies.efficiency_ordering(records)]
    for r in out:
        r.values["train_seconds"] = train_s
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", metavar="STUDY",
                    help=f"subset of: {', '.join(STUDIES)}")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--reps", type=int, default=10, help="replications for the recovery study")
    ap.add_argument("--json", help="write the measured values here")
    args = ap.parse_args(argv)
    unknown = set(args.names) - set(STUDIES)
    if unknown:
        ap.error(f"unknown study: {', '.join(sorted(unknown))}")
    results = []
    for name in args.names or list(STUDIES):
        got = _recovery(args.seed, args.reps) if name == "recovery" else STUDIES[name](args.seed)
        for r in got:
            print(r.line(), flush=True)
        results += got
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({r.name: {"passed": r.passed, "summary": r.summary, **r.values} for r in results}, fh,
                      indent=2, default=float)
    return 0 if all(r.passed for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
