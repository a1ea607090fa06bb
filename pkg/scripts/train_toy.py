"""Train the toy MLP and write it to src/scratchattack/data/toy_mlp.scr1.

Needs scikit-learn (``pip install .[scripts]``).
"""
import argparse
from pathlib import Path

import numpy as np
from sklearn.neural_network import MLPClassifier

from scratchattack.classifier import load_builtin, write_weights
from scratchattack.toy import MODEL_FILE, held_out_set, training_set

OUT = Path(__file__).resolve().parents[1] / "src" / "scratchattack" / "data" / MODEL_FILE


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--hidden", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=OUT)
    args = ap.parse_args()

    x_train, y_train = training_set()
    x_test, y_test = held_out_set()
    clf = MLPClassifier(hidden_layer_sizes=(args.hidden,), max_iter=500, random_state=args.seed)
    clf.fit(x_train.reshape(len(x_train), -1), y_train)

    weights = [W.T for W in clf.coefs_]
    write_weights(args.out, weights, clf.intercepts_)

    model = load_builtin(args.out)
    pred = np.array([model.probabilities(x).argmax() for x in x_test])
    print(f"wrote {args.out}")
    print(f"held-out accuracy: {np.mean(pred == y_test):.4f}")


if __name__ == "__main__":
    main()
