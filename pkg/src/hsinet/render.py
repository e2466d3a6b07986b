"""Map rendering and report figures.

The classification map is written as a binary portable pixmap so its
bytes are exactly specifiable; the accompanying matplotlib figures
(loss curve, confusion heatmap, ablation bars, map preview) are for
human eyes and carry no determinism guarantee.
"""

from __future__ import annotations

import colorsys

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import DataError


def class_palette(num_classes: int) -> np.ndarray:
    """(K+1, 3) uint8 lookup table: row 0 black, rows 1..K hue-spaced.

    Hues are spread evenly around the wheel at full saturation and
    value, so the palette is a pure function of K.
    """
    if num_classes < 1:
        raise DataError(f"palette needs at least one class, got {num_classes}")
    table = np.zeros((num_classes + 1, 3), dtype=np.uint8)
    for k in range(1, num_classes + 1):
        r, g, b = colorsys.hsv_to_rgb((k - 1) / num_classes, 1.0, 1.0)
        table[k] = (round(r * 255), round(g * 255), round(b * 255))
    return table


def label_image(labels: np.ndarray, palette: np.ndarray) -> np.ndarray:
    """Color an (H, W) label raster through the palette -> (H, W, 3) uint8."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= len(palette):
        raise DataError(
            f"labels span {labels.min()}..{labels.max()}, palette has {len(palette)} rows"
        )
    return palette[labels]


def write_ppm(path, image: np.ndarray):
    """Binary portable pixmap (P6, maxval 255) from an (H, W, 3) uint8 array."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise DataError(f"expected (H, W, 3) uint8 image, got {image.shape} {image.dtype}")
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P6":
        raise DataError(f"{path}: not a binary portable pixmap")
    w, h = (int(v) for v in parts[1].split())
    if parts[2] != b"255":
        raise DataError(f"{path}: unsupported maxval {parts[2].decode(errors='replace')}")
    pixels = np.frombuffer(parts[3], dtype=np.uint8, count=h * w * 3)
    return pixels.reshape(h, w, 3).copy()


# -- report figures ----------------------------------------------------------------


def save_loss_curve(path, history: list[dict]):
    """Mean loss and train accuracy per epoch on shared epoch axis."""
    epochs = [h["epoch"] for h in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [h["loss"] for h in history], color="tab:red", label="mean loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss", color="tab:red")
    twin = ax.twinx()
    twin.plot(epochs, [h["train_oa"] for h in history], color="tab:blue", label="train OA")
    twin.set_ylabel("train OA", color="tab:blue")
    twin.set_ylim(0.0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_confusion_figure(path, cm: np.ndarray):
    cm = np.asarray(cm)
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(cm, cmap="viridis")
    ax.set_xlabel("predicted class")
    ax.set_ylabel("true class")
    fig.colorbar(im, ax=ax, label="count")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_ablation_figure(path, results: list[dict]):
    cases = [str(r["case"]) for r in results]
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.arange(len(results))
    for offset, key in zip((-0.25, 0.0, 0.25), ("oa", "aa", "kappa")):
        ax.bar(x + offset, [r[key] for r in results], width=0.25, label=key.upper())
    ax.set_xticks(x, cases)
    ax.set_xlabel("ablation case")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_map_figure(path, image: np.ndarray):
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(image, interpolation="nearest")
    ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
