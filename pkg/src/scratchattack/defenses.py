"""Input-transformation defenses and recovery-rate evaluation."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class DefenseError(ValueError):
    pass


def clip_image(x: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(x, dtype=float), 0.0, 1.0)


def median_filter(x: np.ndarray, kernel: int = 3) -> np.ndarray:
    """Per-channel median over a ``kernel`` x ``kernel`` window, edges replicated."""
    x = np.asarray(x, dtype=float)
    h, w = x.shape[:2]
    if kernel % 2 == 0 or kernel < 1:
        raise DefenseError("kernel size must be odd")
    if h < kernel or w < kernel:
        raise DefenseError(f"image {h}x{w} is smaller than the {kernel}x{kernel} kernel")
    r = kernel // 2
    pad = [(r, r), (r, r)] + [(0, 0)] * (x.ndim - 2)
    padded = np.pad(x, pad, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, (kernel, kernel), axis=(0, 1))
    win = win.reshape(*win.shape[:-2], kernel * kernel)
    mid = kernel * kernel // 2
    return np.partition(win, mid, axis=-1)[..., mid]


# --------------------------------------------------------------------------
# JPEG round trip: baseline, 4:4:4, no entropy coding.

LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=float)

CHROMA_TABLE = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=float)


def quant_tables(quality: int):
    """Luminance and chrominance tables scaled for ``quality`` (IJG mapping)."""
    if not 1 <= int(quality) <= 100 or int(quality) != quality:
        raise DefenseError(f"JPEG quality must be an integer in [1, 100], got {quality!r}")
    scale = 5000 / quality if quality < 50 else 200 - 2 * quality
    return tuple(np.clip(np.floor((t * scale + 50) / 100), 1, 255) for t in (LUMA_TABLE, CHROMA_TABLE))


def _dct_matrix(n: int = 8) -> np.ndarray:
    k = np.arange(n)
    d = np.cos((2 * k[None, :] + 1) * k[:, None] * np.pi / (2 * n))
    d[0] *= np.sqrt(1 / n)
    d[1:] *= np.sqrt(2 / n)
    return d


_DCT = _dct_matrix()


def _rgb_to_ycbcr(rgb):
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128 + 0.5 * r - 0.418688 * g - 0.081312 * b
    return np.stack([y, cb, cr], axis=-1)


def _ycbcr_to_rgb(ycc):
    y, cb, cr = ycc[..., 0], ycc[..., 1] - 128, ycc[..., 2] - 128
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-1)


def _round_half_away(v):
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def jpeg_roundtrip(x: np.ndarray, quality: int) -> np.ndarray:
    """Encode and decode ``x`` (values in [0, 1]) through baseline JPEG."""
    luma, chroma = quant_tables(quality)
    x = np.asarray(x, dtype=float)
    if x.ndim != 3 or x.shape[2] != 3:
        raise DefenseError(f"expected an h x w x 3 image, got {x.shape}")
    if x.min() < 0 or x.max() > 1:
        raise DefenseError("JPEG input must lie in [0, 1]; clip network-domain images first")
    h, w = x.shape[:2]
    rgb = np.floor(x * 255 + 0.5)
    ycc = _rgb_to_ycbcr(rgb) - 128
    H, W = -(-h // 8) * 8, -(-w // 8) * 8
    ycc = np.pad(ycc, [(0, H - h), (0, W - w), (0, 0)], mode="edge")

    blocks = ycc.reshape(H // 8, 8, W // 8, 8, 3).transpose(0, 2, 4, 1, 3)  # by, bx, ch, 8, 8
    coef = _DCT @ blocks @ _DCT.T
    q = np.stack([luma, chroma, chroma])[None, None]
    coef = _round_half_away(coef / q) * q
    blocks = _DCT.T @ coef @ _DCT
    ycc = blocks.transpose(0, 3, 1, 4, 2).reshape(H, W, 3)[:h, :w] + 128

    out = np.clip(_round_half_away(_ycbcr_to_rgb(ycc)), 0, 255)
    return out / 255.0


# --------------------------------------------------------------------------
# recovery evaluation


@dataclass(frozen=True)
class DefenseSpec:
    kind: str                      # clip | median | jpeg
    quality: Optional[int] = None
    kernel: int = 3

    def __post_init__(self):
        if self.kind not in ("clip", "median", "jpeg"):
            raise DefenseError(f"unknown defense {self.kind!r}")
        if self.kind == "jpeg":
            quant_tables(self.quality if self.quality is not None else -1)

    @property
    def label(self) -> str:
        if self.kind == "clip":
            return "Clipping"
        if self.kind == "median":
            return "Median filter"
        return f"JPEG, quality = {self.quality}"

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Transform ``x``; out-of-range inputs are clipped before median/JPEG."""
        x = clip_image(x)
        if self.kind == "median":
            return median_filter(x, self.kernel)
        if self.kind == "jpeg":
            return jpeg_roundtrip(x, self.quality)
        return x


def in_image_domain(x) -> bool:
    x = np.asarray(x)
    return bool(x.min() >= 0 and x.max() <= 1)


@dataclass
class RecoveryReport:
    defense: str
    total: int
    recovered: int
    recovery_rate: float
    network_rate: Optional[float]
    image_rate: Optional[float]
    network_count: int
    image_count: int
    rejected: int
    clean_accuracy: Optional[float] = None
    defended_accuracy: Optional[float] = None
    accuracy_drop: Optional[float] = None
    log: list = field(default_factory=list)


def _rate(n, d):
    return None if d == 0 else 100.0 * n / d


def recovery_eval(adversarials: Sequence, defense: DefenseSpec, classifier,
                  benign: Optional[Sequence] = None) -> RecoveryReport:
    """Fraction of adversarial images whose original label is restored.

    ``adversarials`` holds ``(label, image)`` pairs; pairs the classifier
    already labels correctly are not adversarial and are rejected. The rate
    is split by whether the adversarial image lies in [0, 1]. ``benign``
    ``(label, image)`` pairs, if given, measure the clean-accuracy drop.
    """
    log, rejected = [], 0
    for i, (label, img) in enumerate(adversarials):
        label = int(label)
        before = int(np.argmax(classifier.probabilities(img)))
        if before == label:
            rejected += 1
            continue
        after = int(np.argmax(classifier.probabilities(defense.apply(img))))
        log.append({"index": i, "label": label,
                    "domain": "image" if in_image_domain(img) else "network",
                    "before": before, "after": after, "recovered": after == label})
    if not log:
        raise DefenseError("no adversarial images to evaluate")
    rec = sum(e["recovered"] for e in log)
    net = [e for e in log if e["domain"] == "network"]
    img_ = [e for e in log if e["domain"] == "image"]
    report = RecoveryReport(
        defense=defense.label, total=len(log), recovered=rec,
        recovery_rate=100.0 * rec / len(log),
        network_rate=_rate(sum(e["recovered"] for e in net), len(net)),
        image_rate=_rate(sum(e["recovered"] for e in img_), len(img_)),
        network_count=len(net), image_count=len(img_), rejected=rejected, log=log)
    if benign:
        clean = [int(np.argmax(classifier.probabilities(x))) == int(y) for y, x in benign]
        defended = [int(np.argmax(classifier.probabilities(defense.apply(x)))) == int(y)
                    for y, x in benign]
        report.clean_accuracy = 100.0 * np.mean(clean)
        report.defended_accuracy = 100.0 * np.mean(defended)
        report.accuracy_drop = report.clean_accuracy - report.defended_accuracy
    return report


def _pct(v) -> str:
    return "n/a" if v is None else f"{v:.2f}"


def write_recovery_csv(reports: Sequence[RecoveryReport], path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["Method", "Recovery Rate", "Network Domain", "Image Domain"])
        for r in reports:
            wr.writerow([r.defense, _pct(r.recovery_rate), _pct(r.network_rate), _pct(r.image_rate)])


def write_accuracy_csv(reports: Sequence[RecoveryReport], path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["Method", "Accuracy", "Drop"])
        for r in reports:
            wr.writerow([r.defense, _pct(r.defended_accuracy), _pct(r.accuracy_drop)])


def write_recovery_log(report: RecoveryReport, path) -> None:
    with open(path, "w") as fh:
        for e in report.log:
            fh.write(json.dumps(e) + "\n")
