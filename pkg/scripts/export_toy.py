"""Write held-out toy images as PPM files plus labels.csv, for use with the CLI."""
import argparse
import csv
from pathlib import Path

from scratchattack.imageio import save_image
from scratchattack.toy import held_out_set


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="toy_images")
    ap.add_argument("-n", type=int, default=20)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    x, y = held_out_set()
    with open(out / "labels.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["filename", "label"])
        for i in range(args.n):
            name = f"img{i:04d}.ppm"
            save_image(x[i], out / name)
            wr.writerow([name, int(y[i])])
    print(f"wrote {args.n} images to {out}")


if __name__ == "__main__":
    main()
