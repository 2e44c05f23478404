"""Write a synthetic dataset in the on-disk formats ``sea train`` reads."""

import argparse
from pathlib import Path

from sea import data as D


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int, default=200)
    p.add_argument("--items", type=int, default=100)
    p.add_argument("--latent-dim", type=int, default=8)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds, vis, txt = D.generate_synthetic(args.users, args.items, args.latent_dim, args.noise, args.seed)
    D.save_interactions(ds, out / "interactions.csv")
    D.write_matrix(out / "visual.seaf", vis.data)
    D.write_matrix(out / "textual.seaf", txt.data)
    print(f"{len(ds)} interactions, {ds.n_users} users, {ds.n_items} items -> {out}")


if __name__ == "__main__":
    main()
