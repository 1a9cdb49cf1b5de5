"""Regenerate the packaged default mirror tables from the coating model."""

import argparse
from pathlib import Path

from sr_opo_comb.config import default_mirror_tables

DATA = Path(__file__).resolve().parents[1] / "src" / "sr_opo_comb" / "data"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=DATA)
    ap.add_argument("--loss", type=float, default=0.005, help="internal loss per pass")
    args = ap.parse_args()
    front, back = default_mirror_tables(internal_loss_per_pass=args.loss)
    args.out.mkdir(parents=True, exist_ok=True)
    front.to_csv(args.out / "mirror_front.csv")
    back.to_csv(args.out / "mirror_back.csv")
    print(f"wrote mirror tables to {args.out}")


if __name__ == "__main__":
    main()
