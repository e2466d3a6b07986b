"""Dataset containers, spectral reduction, patch extraction and splitting.

On-disk formats
---------------
Cube files (``.hsic``) hold a one-line JSON header, a NUL byte, then
``H*W*C`` little-endian float32 values in row-major (height, width,
band) order, i.e. band-interleaved-by-pixel. Label files (``.hsil``)
use the same framing with a ``classes`` key and ``H*W`` little-endian
uint16 values. The JSON line is terminated by a newline before the NUL
so the header is readable with ``head -1``.

All randomized steps take explicit seeds and are bit-reproducible.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, LoadError

UNSPLIT, TRAIN, TEST = -1, 0, 1

_HEADER_SCAN_LIMIT = 4096  # a sane header fits well within this


# -- containers ------------------------------------------------------------------


@dataclass
class HsiCube:
    """A hyperspectral image: ``values[row, col, band]``, all finite."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise DataError(f"cube must be height x width x bands, got shape {self.values.shape}")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]


@dataclass
class LabelRaster:
    """Per-pixel class ids; 0 marks unlabeled background, classes run 1..K."""

    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 2:
            raise DataError(f"label raster must be 2-d, got shape {self.labels.shape}")
        if self.labels.min(initial=0) < 0:
            raise DataError("label raster contains negative ids")
        present = np.unique(self.labels[self.labels > 0])
        if present.size and not np.array_equal(present, np.arange(1, present.size + 1)):
            raise DataError(f"labeled classes must form a contiguous range 1..K, found {present.tolist()}")

    @property
    def num_classes(self) -> int:
        return int(self.labels.max(initial=0))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


# -- container IO -------------------------------------------------------------------


def _encode_header(fields: dict) -> bytes:
    return (json.dumps(fields, sort_keys=True) + "\n").encode("ascii") + b"\x00"


def _decode_header(blob: bytes, path: str) -> tuple[dict, int]:
    """Parse the JSON header; returns (fields, payload byte offset)."""
    nul = blob.find(b"\x00", 0, _HEADER_SCAN_LIMIT)
    if nul < 0:
        raise LoadError(f"{path}: no NUL header terminator in the first {_HEADER_SCAN_LIMIT} bytes", offset=0)
    head = blob[:nul]
    if not head.endswith(b"\n"):
        raise LoadError(f"{path}: header must end with a newline before the NUL byte", offset=nul)
    try:
        fields = json.loads(head.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise LoadError(f"{path}: header is not valid JSON: {exc}", offset=0) from None
    if not isinstance(fields, dict):
        raise LoadError(f"{path}: header must be a JSON object", offset=0)
    return fields, nul + 1


def _require_dims(fields: dict, keys, path: str) -> list[int]:
    out = []
    for key in keys:
        if key not in fields:
            raise LoadError(f"{path}: header missing required key {key!r}", offset=0)
        value = fields[key]
        if not isinstance(value, int) or value <= 0:
            raise LoadError(f"{path}: header key {key!r} must be a positive integer, got {value!r}", offset=0)
        out.append(value)
    return out


def _read_payload(blob: bytes, start: int, count: int, itemsize: int, path: str) -> bytes:
    expected = count * itemsize
    actual = len(blob) - start
    if actual != expected:
        kind = "truncated" if actual < expected else "oversized"
        raise LoadError(
            f"{path}: payload {kind}: expected {expected} bytes, found {actual}",
            offset=start + min(actual, expected),
        )
    return blob[start:start + expected]


def save_cube(path, cube: HsiCube):
    header = _encode_header(
        {
            "height": cube.height,
            "width": cube.width,
            "bands": cube.bands,
            "dtype": "f32",
            "order": "band-interleaved-by-pixel",
        }
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(cube.values, dtype="<f4").tobytes())


def save_labels(path, raster: LabelRaster):
    if raster.num_classes > np.iinfo(np.uint16).max:
        raise DataError(f"cannot store {raster.num_classes} classes in 16-bit labels")
    header = _encode_header(
        {
            "height": raster.height,
            "width": raster.width,
            "classes": raster.num_classes,
            "dtype": "u16",
        }
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(raster.labels, dtype="<u2").tobytes())


def load_cube_only(path) -> HsiCube:
    path = os.fspath(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    fields, start = _decode_header(blob, path)
    h, w, c = _require_dims(fields, ("height", "width", "bands"), path)
    if fields.get("dtype") != "f32":
        raise LoadError(f"{path}: unsupported dtype {fields.get('dtype')!r}, expected 'f32'", offset=0)
    if fields.get("order") != "band-interleaved-by-pixel":
        raise LoadError(f"{path}: unsupported order {fields.get('order')!r}", offset=0)
    payload = _read_payload(blob, start, h * w * c, 4, path)
    values = np.frombuffer(payload, dtype="<f4").reshape(h, w, c)
    finite = np.isfinite(values)
    if not finite.all():
        bad = int(np.flatnonzero(~finite.ravel())[0])
        raise LoadError(f"{path}: non-finite value at flat index {bad}", offset=start + bad * 4)
    return HsiCube(values.copy())


def load_labels_only(path) -> LabelRaster:
    path = os.fspath(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    fields, start = _decode_header(blob, path)
    h, w = _require_dims(fields, ("height", "width"), path)
    if "classes" not in fields:
        raise LoadError(f"{path}: header missing required key 'classes'", offset=0)
    payload = _read_payload(blob, start, h * w, 2, path)
    labels = np.frombuffer(payload, dtype="<u2").reshape(h, w).astype(np.int64)
    raster = LabelRaster(labels)
    declared = fields["classes"]
    if raster.num_classes != declared:
        raise LoadError(
            f"{path}: header declares {declared} classes but payload holds {raster.num_classes}", offset=0
        )
    return raster


def load_cube(cube_path, labels_path=None) -> tuple[HsiCube, LabelRaster]:
    """Load a cube and its companion label raster (same stem, ``.hsil``)."""
    cube_path = os.fspath(cube_path)
    if labels_path is None:
        stem, _ = os.path.splitext(cube_path)
        labels_path = stem + ".hsil"
    cube = load_cube_only(cube_path)
    raster = load_labels_only(labels_path)
    if (raster.height, raster.width) != (cube.height, cube.width):
        raise LoadError(
            f"{labels_path}: label raster is {raster.height}x{raster.width} "
            f"but the cube is {cube.height}x{cube.width}"
        )
    return cube, raster


_RAW_DTYPES = {"f32": "<f4", "f64": "<f8", "u16": "<u2", "i16": "<i2"}
_RAW_ORDERS = ("bip", "bil", "bsq")


def convert_raw(raw_path, out_path, height: int, width: int, bands: int,
                dtype: str = "f32", order: str = "bip") -> HsiCube:
    """Repackage a headerless binary cube into the container format.

    ``order`` names the interleave of the source file: bip = (H, W, C),
    bil = (H, C, W), bsq = (C, H, W). Values are cast to float32.
    """
    if dtype not in _RAW_DTYPES:
        raise ConfigError(f"unsupported raw dtype {dtype!r}; choose one of {sorted(_RAW_DTYPES)}")
    if order not in _RAW_ORDERS:
        raise ConfigError(f"unsupported interleave {order!r}; choose one of {list(_RAW_ORDERS)}")
    for name, v in (("height", height), ("width", width), ("bands", bands)):
        if int(v) <= 0:
            raise ConfigError(f"{name} must be positive, got {v}")
    raw_path = os.fspath(raw_path)
    with open(raw_path, "rb") as fh:
        blob = fh.read()
    np_dtype = np.dtype(_RAW_DTYPES[dtype])
    expected = height * width * bands * np_dtype.itemsize
    if len(blob) != expected:
        raise LoadError(
            f"{raw_path}: raw payload is {len(blob)} bytes, expected {expected} "
            f"for {height}x{width}x{bands} {dtype}",
            offset=min(len(blob), expected),
        )
    flat = np.frombuffer(blob, dtype=np_dtype)
    if order == "bip":
        values = flat.reshape(height, width, bands)
    elif order == "bil":
        values = flat.reshape(height, bands, width).transpose(0, 2, 1)
    else:
        values = flat.reshape(bands, height, width).transpose(1, 2, 0)
    values = values.astype(np.float32)
    if not np.isfinite(values).all():
        bad = int(np.flatnonzero(~np.isfinite(values).ravel())[0])
        raise LoadError(f"{raw_path}: non-finite value in raw payload at flat index {bad}", offset=bad * np_dtype.itemsize)
    cube = HsiCube(values)
    save_cube(out_path, cube)
    return cube


# -- PCA spectral reduction ------------------------------------------------------------


@dataclass
class PcaModel:
    """Mean, orthonormal component columns and their explained variances."""

    mean: np.ndarray        # (C,)
    components: np.ndarray  # (C, B), columns are principal directions
    explained: np.ndarray   # (B,), non-increasing, >= 0

    def transform(self, pixels: np.ndarray) -> np.ndarray:
        return (np.asarray(pixels, dtype=np.float64) - self.mean) @ self.components

    def inverse(self, projected: np.ndarray) -> np.ndarray:
        return np.asarray(projected, dtype=np.float64) @ self.components.T + self.mean


def pca_reduce(cube: HsiCube, keep: int) -> tuple[PcaModel, np.ndarray]:
    """Project every pixel onto the top ``keep`` principal directions.

    Statistics use all pixels, labeled or not, with the population
    covariance (divisor n). Returns the model and the reduced cube as
    float32 of shape (H, W, keep).
    """
    c = cube.bands
    if not 1 <= keep <= c:
        raise ConfigError(f"retained band count must be in 1..{c}, got {keep}")
    n = cube.height * cube.width
    if n < 2:
        raise DataError("PCA needs at least 2 pixels")
    pixels = cube.values.reshape(n, c).astype(np.float64)
    mean = pixels.mean(axis=0)
    centered = pixels - mean
    cov = centered.T @ centered / n
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order[:keep]], 0.0, None)
    vecs = vecs[:, order[:keep]]
    # deterministic sign: the largest-magnitude entry of each column is positive
    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        pivot = int(np.argmax(np.abs(col)))  # argmax takes the lowest index on ties
        if col[pivot] < 0:
            vecs[:, j] = -col
    model = PcaModel(mean=mean, components=vecs, explained=vals)
    reduced = (centered @ vecs).reshape(cube.height, cube.width, keep).astype(np.float32)
    return model, reduced


def save_pca(path, model: PcaModel):
    payload = {
        "mean": model.mean.tolist(),
        "components": model.components.tolist(),
        "explained": model.explained.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_pca(path) -> PcaModel:
    with open(path) as fh:
        payload = json.load(fh)
    return PcaModel(
        mean=np.asarray(payload["mean"], dtype=np.float64),
        components=np.asarray(payload["components"], dtype=np.float64),
        explained=np.asarray(payload["explained"], dtype=np.float64),
    )


# -- patches and splits -------------------------------------------------------------------


@dataclass
class PatchSet:
    """Labeled pixel windows over a reduced cube, materialized on demand.

    Patches are stored implicitly: ``padded`` is the zero-padded reduced
    cube and ``coords`` the original pixel positions, one row per
    labeled pixel in row-major scan order. ``split`` holds UNSPLIT,
    TRAIN or TEST per patch.
    """

    padded: np.ndarray    # (H + 2p, W + 2p, B) float32
    patch: int            # window size P
    coords: np.ndarray    # (n, 2) original (row, col) per patch
    labels: np.ndarray    # (n,) class ids 1..K
    num_classes: int
    height: int
    width: int
    split: np.ndarray = field(default=None)  # (n,) in {UNSPLIT, TRAIN, TEST}

    def __post_init__(self):
        if self.split is None:
            self.split = np.full(len(self.labels), UNSPLIT, dtype=np.int8)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def bands(self) -> int:
        return self.padded.shape[2]

    @property
    def train_indices(self) -> np.ndarray:
        return np.flatnonzero(self.split == TRAIN)

    @property
    def test_indices(self) -> np.ndarray:
        return np.flatnonzero(self.split == TEST)

    def patch_array(self, indices) -> np.ndarray:
        """Materialize the selected windows as (n, B, P, P) float32."""
        indices = np.asarray(indices)
        p = self.patch
        out = np.empty((len(indices), self.bands, p, p), dtype=np.float32)
        for row, i in enumerate(indices):
            r, c = self.coords[i]
            window = self.padded[r:r + p, c:c + p]  # offsets cancel the padding shift
            out[row] = window.transpose(2, 0, 1)
        return out


def extract_patches(reduced: np.ndarray, raster: LabelRaster, patch: int) -> PatchSet:
    """One window per labeled pixel; background (label 0) emits nothing."""
    if patch % 2 == 0 or patch < 3:
        raise ConfigError(f"patch size must be odd and >= 3, got {patch}")
    reduced = np.asarray(reduced, dtype=np.float32)
    if reduced.ndim != 3:
        raise DataError(f"reduced cube must be 3-d, got shape {reduced.shape}")
    if reduced.shape[:2] != raster.labels.shape:
        raise DataError(
            f"cube spatial shape {reduced.shape[:2]} does not match labels {raster.labels.shape}"
        )
    pad = (patch - 1) // 2
    padded = np.pad(reduced, ((pad, pad), (pad, pad), (0, 0)))
    rows, cols = np.nonzero(raster.labels)
    order = np.lexsort((cols, rows))  # canonical row-major patch order
    rows, cols = rows[order], cols[order]
    return PatchSet(
        padded=padded,
        patch=patch,
        coords=np.stack([rows, cols], axis=1),
        labels=raster.labels[rows, cols].astype(np.int64),
        num_classes=raster.num_classes,
        height=raster.height,
        width=raster.width,
    )


def train_count(class_size: int, fraction: float) -> int:
    # round half up, never below one sample
    return max(1, int(np.floor(fraction * class_size + 0.5)))


def stratified_split(patchset: PatchSet, fraction: float, seed: int) -> PatchSet:
    """Assign train/test per class with a seeded shuffle; returns a new set."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"train fraction must lie strictly between 0 and 1, got {fraction}")
    if len(patchset) == 0:
        raise DataError("no labeled pixels to split")
    split = np.full(len(patchset), TEST, dtype=np.int8)
    rng = np.random.default_rng(seed)
    for k in range(1, patchset.num_classes + 1):
        members = np.flatnonzero(patchset.labels == k)
        if members.size == 0:
            raise DataError(f"class {k} has no samples")
        chosen = rng.permutation(members)[: train_count(members.size, fraction)]
        split[chosen] = TRAIN
    return PatchSet(
        padded=patchset.padded,
        patch=patchset.patch,
        coords=patchset.coords,
        labels=patchset.labels,
        num_classes=patchset.num_classes,
        height=patchset.height,
        width=patchset.width,
        split=split,
    )


_SPLIT_NAMES = {TRAIN: "train", TEST: "test"}
_SPLIT_CODES = {"train": TRAIN, "test": TEST}


def write_split_manifest(path, patchset: PatchSet, meta: dict):
    """Persist coordinates/labels/splits plus run metadata as canonical JSON."""
    if np.any(patchset.split == UNSPLIT):
        raise DataError("cannot write a manifest before the split is assigned")
    doc = dict(meta)
    doc.update(
        {
            "height": patchset.height,
            "width": patchset.width,
            "bands": patchset.bands,
            "patch": patchset.patch,
            "classes": patchset.num_classes,
            "pixels": [
                [int(r), int(c), int(l), _SPLIT_NAMES[int(s)]]
                for (r, c), l, s in zip(patchset.coords, patchset.labels, patchset.split)
            ],
        }
    )
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def read_split_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def patchset_from_manifest(reduced: np.ndarray, manifest: dict) -> PatchSet:
    """Rebuild the exact PatchSet a manifest describes over a reduced cube."""
    pixels = manifest["pixels"]
    labels = np.zeros((manifest["height"], manifest["width"]), dtype=np.int64)
    for r, c, lab, _ in pixels:
        labels[r, c] = lab
    patchset = extract_patches(reduced, LabelRaster(labels), manifest["patch"])
    if len(patchset) != len(pixels):
        raise DataError(f"manifest lists {len(pixels)} pixels, cube yields {len(patchset)}")
    split = np.empty(len(pixels), dtype=np.int8)
    for i, (r, c, lab, name) in enumerate(pixels):
        if (patchset.coords[i][0], patchset.coords[i][1]) != (r, c) or patchset.labels[i] != lab:
            raise DataError(f"manifest entry {i} does not match the cube's labeled pixel order")
        split[i] = _SPLIT_CODES[name]
    patchset.split = split
    return patchset


# -- synthetic benchmark data ----------------------------------------------------------------


def make_synthetic(height: int = 32, width: int = 32, bands: int = 16, classes: int = 4,
                   separation: float = 3.0, noise: float = 1.0, seed: int = 0
                   ) -> tuple[HsiCube, LabelRaster]:
    """Horizontal class strips with Gaussian spectra on disjoint band blocks.

    Each class mean occupies its own block of ``bands // classes`` bands
    with amplitude chosen so every pair of class means sits exactly
    ``separation * noise`` apart in spectral space.
    """
    if height % classes != 0:
        raise ConfigError(f"height {height} must divide into {classes} equal strips")
    if bands % classes != 0:
        raise ConfigError(f"bands {bands} must divide into {classes} equal blocks")
    block = bands // classes
    amp = separation * noise / np.sqrt(2 * block)
    means = np.zeros((classes, bands))
    for k in range(classes):
        means[k, k * block:(k + 1) * block] = amp
    strip = height // classes
    labels = 1 + (np.arange(height) // strip)
    raster = LabelRaster(np.repeat(labels[:, None], width, axis=1))
    rng = np.random.default_rng(seed)
    values = means[raster.labels - 1] + noise * rng.standard_normal((height, width, bands))
    return HsiCube(values.astype(np.float32)), raster
