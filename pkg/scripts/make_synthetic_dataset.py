#!/usr/bin/env python3
"""Generate a synthetic implicit-feedback dataset and write it as TSV.

The generator produces clustered users over a long-tail catalog, with an
optional cohort of noise users whose interactions are uniform (clients
with unlearnable data). See fedrec.data.synthetic_interactions.
"""

import argparse

from fedrec import data


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--users", type=int, default=943)
    ap.add_argument("--items", type=int, default=1682)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--min-items", type=int, default=18)
    ap.add_argument("--mean-extra", type=float, default=45.0)
    ap.add_argument("--groups", type=int, default=8)
    ap.add_argument("--boost", type=float, default=8.0)
    ap.add_argument("--pop-exponent", type=float, default=0.6)
    ap.add_argument("--noise-fraction", type=float, default=0.2)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    ds = data.synthetic_interactions(
        args.users, args.items, seed=args.seed,
        min_items_per_user=args.min_items, mean_extra_items=args.mean_extra,
        n_groups=args.groups, boost=args.boost,
        popularity_exponent=args.pop_exponent,
        noise_user_fraction=args.noise_fraction)
    data.write_interactions(args.out, ds)
    print(f"wrote {args.out}: {ds.num_users} users, {ds.num_items} items, "
          f"{len(ds.interactions)} interactions")


if __name__ == "__main__":
    main()
