"""Run every theory check and print one JSON document with all results."""

import argparse
import json

from sea import theory as TH


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--rhos", default="0,0.3,0.5,0.7,0.9")
    args = p.parse_args()

    out = {
        "angle": TH.verify_angles(args.dim, args.samples),
        "variance": TH.verify_variance(),
        "club": {rho: TH.verify_club(float(rho)) for rho in args.rhos.split(",")},
        "distancing": TH.verify_distancing(),
    }
    # true-conditional CLUB for reference: rho^2 / (1 - rho^2) against -0.5 ln(1 - rho^2)
    out["club_with_true_conditional"] = {
        rho: {"club": float(rho) ** 2 / (1 - float(rho) ** 2), "mi": TH.gaussian_mi(float(rho))}
        for rho in args.rhos.split(",")
    }
    print(json.dumps(out, indent=2, default=float))


if __name__ == "__main__":
    main()
