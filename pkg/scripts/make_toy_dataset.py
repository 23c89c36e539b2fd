#!/usr/bin/env python3
"""Materialize the synthetic toy face dataset as PNG folders.

Writes <root>/hr and <root>/genuine_lr with identity-prefixed file names
(id<k>_<n>.png), ready for the training CLI.
"""

import argparse
from pathlib import Path

from crsr.toydata import BUNDLED_DEGRADATION, write_toy_dataset


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("root", type=Path, help="output directory")
    parser.add_argument("--identities", type=int, default=4)
    parser.add_argument("--per-identity", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    hr_dir, lr_dir = write_toy_dataset(
        args.root,
        n_identities=args.identities,
        per_identity=args.per_identity,
        seed=args.seed,
        degradation=BUNDLED_DEGRADATION,
    )
    print(f"wrote {hr_dir} and {lr_dir}")


if __name__ == "__main__":
    main()
