"""Synthetic 16x16 RGB three-class dataset and the committed toy classifier.

Each image is a grey background with pixel noise, tinted towards the color
channel of its class. The tint is weak, so a single thin colored stroke is
enough to move a classifier across a decision boundary.
"""
from __future__ import annotations

from importlib import resources

import numpy as np

from .classifier import load_builtin

SIZE = 16
CLASSES = ("red", "green", "blue")
TINT = 0.2
NOISE = 0.08
MODEL_FILE = "toy_mlp.scr1"


def make_toy_dataset(n: int, seed: int = 0):
    """Return ``(images, labels)``: float array (n, 16, 16, 3) in [0, 1] and int labels."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, len(CLASSES), size=n)
    grey = rng.uniform(0.3, 0.7, size=(n, 1, 1, 1))
    images = grey + rng.normal(0.0, NOISE, size=(n, SIZE, SIZE, 3))
    images[np.arange(n), :, :, labels] += TINT
    return np.clip(images, 0.0, 1.0), labels


def training_set(seed: int = 0):
    return make_toy_dataset(3000, seed=seed)


def held_out_set(seed: int = 1):
    return make_toy_dataset(1000, seed=seed)


def load_toy_classifier():
    path = resources.files("scratchattack") / "data" / MODEL_FILE
    with resources.as_file(path) as p:
        return load_builtin(p, labels=CLASSES)
