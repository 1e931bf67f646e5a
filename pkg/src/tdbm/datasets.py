"""Loaders for MNIST (IDX), Semeion (text) and Caltech 101 Silhouettes.

Every loader returns a :class:`BinaryDataset` whose vectors are strictly
binary ``uint8`` rows in row-major pixel order.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from tdbm.errors import DataError, InvalidArgumentError
from tdbm.numerics import make_rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CSIL_MAGIC = b"CSIL1"

SPLIT_TRAIN, SPLIT_TEST, SPLIT_VALID = 0, 1, 2


@dataclass(frozen=True)
class BinaryDataset:
    name: str
    width: int
    height: int
    train: np.ndarray
    test: np.ndarray
    train_labels: np.ndarray | None = None
    test_labels: np.ndarray | None = None

    def __post_init__(self):
        d = self.width * self.height
        for part in ("train", "test"):
            arr = getattr(self, part)
            if arr.ndim != 2 or arr.shape[1] != d:
                raise DataError(f"{self.name} {part} has shape {arr.shape}, expected (*, {d})")
            if not np.all((arr == 0) | (arr == 1)):
                raise DataError(f"{self.name} {part} is not binary")

    @property
    def dim(self) -> int:
        return self.width * self.height


def _open(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


# -- MNIST / IDX -------------------------------------------------------------

def _parse_idx(raw: bytes, magic: int, ndim: int, what: str) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError(f"truncated IDX {what} header")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise DataError(f"bad IDX {what} magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise DataError(f"truncated IDX {what}: {len(raw) - header} of {size} payload bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims).copy()


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Parse an IDX image file (N x rows x cols) and its label file (N)."""
    with _open(images_path) as f:
        images = _parse_idx(f.read(), IDX_IMAGES_MAGIC, 3, "images")
    with _open(labels_path) as f:
        labels = _parse_idx(f.read(), IDX_LABELS_MAGIC, 1, "labels")
    if len(images) != len(labels):
        raise DataError(f"{len(images)} images but {len(labels)} labels")
    return images, labels


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    opener = gzip.open if str(images_path).endswith(".gz") else open
    with opener(images_path, "wb") as f:
        f.write(struct.pack(">I3I", IDX_IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes())
    opener = gzip.open if str(labels_path).endswith(".gz") else open
    with opener(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


def downsample_2x(image: np.ndarray) -> np.ndarray:
    """Average non-overlapping 2x2 blocks; works on one image or a stack."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[-2:]
    if h % 2 or w % 2:
        raise InvalidArgumentError(f"downsampling needs even dimensions, got {h}x{w}")
    blocks = image.reshape(*image.shape[:-2], h // 2, 2, w // 2, 2)
    return blocks.mean(axis=(-3, -1))


def binarize(image: np.ndarray, threshold: float) -> np.ndarray:
    return (np.asarray(image) > threshold).astype(np.uint8)


def subsample_train(dataset: BinaryDataset, fraction: float, rng: np.random.Generator) -> BinaryDataset:
    """Keep ``round(fraction * N)`` training items drawn without replacement."""
    if not 0 < fraction <= 1:
        raise InvalidArgumentError(f"fraction must lie in (0, 1], got {fraction}")
    if fraction == 1:
        return dataset
    n = len(dataset.train)
    keep = np.sort(rng.choice(n, size=max(1, round(fraction * n)), replace=False))
    labels = dataset.train_labels[keep] if dataset.train_labels is not None else None
    return BinaryDataset(dataset.name, dataset.width, dataset.height,
                         dataset.train[keep], dataset.test, labels, dataset.test_labels)


def _find(directory: Path, stem: str) -> Path:
    for cand in (directory / stem, directory / f"{stem}.gz"):
        if cand.exists():
            return cand
    raise DataError(f"missing {stem}[.gz] in {directory}")


def load_mnist(directory, fraction: float = 0.02, threshold: float = 127.5, seed: int = 0,
               downsample: bool = True) -> BinaryDataset:
    """MNIST reduced to 14x14 and binarized after downsampling.

    ``directory`` holds the four canonical IDX files, optionally gzipped.
    Only the training set is subsampled.
    """
    directory = Path(directory)
    parts = {}
    for split, prefix in (("train", "train"), ("test", "t10k")):
        images, labels = load_idx(_find(directory, f"{prefix}-images-idx3-ubyte"),
                                  _find(directory, f"{prefix}-labels-idx1-ubyte"))
        if downsample:
            images = downsample_2x(images)
        parts[split] = (binarize(images, threshold).reshape(len(images), -1), labels)
    h, w = images.shape[1:]
    ds = BinaryDataset("mnist", w, h, parts["train"][0], parts["test"][0], parts["train"][1], parts["test"][1])
    return subsample_train(ds, fraction, make_rng(seed, 0x4D4E))


# -- Semeion -----------------------------------------------------------------

def parse_semeion(text: str) -> tuple[np.ndarray, np.ndarray]:
    pixels, labels = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        cols = line.split()
        if not cols:
            continue
        if len(cols) != 266:
            raise DataError(f"semeion line {lineno}: {len(cols)} columns, expected 266")
        try:
            vals = np.array([float(c) for c in cols])
        except ValueError as exc:
            raise DataError(f"semeion line {lineno}: {exc}") from exc
        if not np.all((vals == 0) | (vals == 1)) or vals[256:].sum() != 1:
            raise DataError(f"semeion line {lineno}: non-binary pixels or bad one-hot label")
        pixels.append(vals[:256])
        labels.append(int(np.argmax(vals[256:])))
    if not pixels:
        raise DataError("semeion file is empty")
    return np.array(pixels, dtype=np.uint8), np.array(labels, dtype=np.int64)


def load_semeion(path, test_fraction: float = 0.3, seed: int = 0) -> BinaryDataset:
    """Semeion digits (16x16) with a seeded random train/test split."""
    if not 0 < test_fraction < 1:
        raise InvalidArgumentError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    with _open(path) as f:
        pixels, labels = parse_semeion(f.read().decode("ascii"))
    perm = make_rng(seed, 0x5E3E).permutation(len(pixels))
    n_test = max(1, round(test_fraction * len(pixels)))
    test, train = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    return BinaryDataset("semeion", 16, 16, pixels[train], pixels[test], labels[train], labels[test])


def format_semeion(pixels: np.ndarray, labels: np.ndarray) -> str:
    """Render rows in the distributed Semeion text layout."""
    lines = []
    for px, lab in zip(np.asarray(pixels), np.asarray(labels)):
        onehot = ["1" if i == lab else "0" for i in range(10)]
        lines.append(" ".join([f"{p:.4f}" for p in px] + onehot) + " ")
    return "\n".join(lines) + "\n"


# -- Caltech 101 Silhouettes -------------------------------------------------

def write_silhouettes(path, pixels: np.ndarray, labels: np.ndarray, split: np.ndarray,
                      height: int = 28, width: int = 28) -> None:
    """Write the CSIL1 container: header, 1 byte/pixel, u16 labels, u8 split flags."""
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(len(pixels), -1)
    if pixels.shape[1] != height * width:
        raise DataError(f"pixel rows of {pixels.shape[1]} do not match {height}x{width}")
    with open(path, "wb") as f:
        f.write(CSIL_MAGIC)
        f.write(struct.pack("<QQQ", len(pixels), height, width))
        f.write(pixels.tobytes())
        f.write(np.asarray(labels, dtype="<u2").tobytes())
        f.write(np.asarray(split, dtype=np.uint8).tobytes())


def read_silhouettes(path) -> tuple[np.ndarray, np.ndarray, np.ndarray, int, int]:
    with _open(path) as f:
        raw = f.read()
    head = len(CSIL_MAGIC) + 24
    if len(raw) < head or raw[: len(CSIL_MAGIC)] != CSIL_MAGIC:
        raise DataError(f"{path}: not a CSIL1 file")
    n, h, w = struct.unpack("<QQQ", raw[len(CSIL_MAGIC):head])
    expected = head + n * h * w + 2 * n + n
    if len(raw) != expected:
        raise DataError(f"{path}: size {len(raw)} does not match header (expected {expected})")
    off = head
    pixels = np.frombuffer(raw, np.uint8, n * h * w, off).reshape(n, h * w)
    off += n * h * w
    labels = np.frombuffer(raw, "<u2", n, off).astype(np.int64)
    split = np.frombuffer(raw, np.uint8, n, off + 2 * n)
    return pixels.copy(), labels, split.copy(), int(h), int(w)


def load_caltech_silhouettes(path) -> BinaryDataset:
    """Load a converted CSIL1 file, keeping the official train/test split.

    Validation items, if present, are ignored.
    """
    pixels, labels, split, h, w = read_silhouettes(path)
    tr, te = split == SPLIT_TRAIN, split == SPLIT_TEST
    return BinaryDataset("caltech", w, h, pixels[tr], pixels[te], labels[tr], labels[te])


def convert_caltech(in_path, out_path) -> dict[str, int]:
    """Convert the distributed ``caltech101_silhouettes_28_split1.mat`` to CSIL1.

    The ``.mat`` rows store each 28x28 image in column-major order; they are
    transposed to row-major here.  Returns the item count of each split.
    """
    from scipy.io import loadmat

    try:
        mat = loadmat(str(in_path))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {in_path}: {exc}") from exc
    side = 28
    chunks, counts = [], {}
    for flag, name in ((SPLIT_TRAIN, "train"), (SPLIT_VALID, "val"), (SPLIT_TEST, "test")):
        key = f"{name}_data"
        if key not in mat:
            if name == "val":
                continue
            raise DataError(f"{in_path}: missing variable {key!r}")
        data = np.asarray(mat[key])
        if data.ndim != 2 or data.shape[1] != side * side:
            raise DataError(f"{key} has shape {data.shape}, expected (*, {side * side})")
        data = data.reshape(-1, side, side).transpose(0, 2, 1).reshape(len(data), -1)
        labels = np.asarray(mat.get(f"{name}_labels", np.zeros(len(data)))).reshape(-1)
        if len(labels) != len(data):
            raise DataError(f"{name}: {len(data)} images but {len(labels)} labels")
        chunks.append((data, labels, np.full(len(data), flag)))
        counts[name] = len(data)
    pixels = np.concatenate([c[0] for c in chunks])
    if not np.all((pixels == 0) | (pixels == 1)):
        raise DataError(f"{in_path}: silhouette pixels are not binary")
    write_silhouettes(out_path, pixels, np.concatenate([c[1] for c in chunks]),
                      np.concatenate([c[2] for c in chunks]), side, side)
    return counts
