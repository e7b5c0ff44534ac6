"""Dataset container and providers: IDX files, Gaussian blobs, digit surrogate.

The IDX reader/writer follows the classic MNIST encoding exactly: big-endian
magic (0x00000803 images / 0x00000801 labels), big-endian u32 dimension
sizes, then unsigned bytes.  Pixels load as float32 in [0,1] with a leading
channel axis.

``synth_digits`` builds an offline MNIST-class corpus by upscaling
scikit-learn's bundled 8x8 handwritten digits to 28x28 and augmenting with
seeded integer shifts; train and test never share a base image.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .rng import generator

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class Dataset:
    images: np.ndarray  # [N, C, H, W] float32 in [0, 1]
    labels: np.ndarray  # [N] integer class ids

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"dataset images {self.images.shape} and labels {self.labels.shape} disagree"
            )
        if self.images.shape[0] < 1:
            raise DataError("dataset is empty")

    def __len__(self):
        return self.images.shape[0]

    def take(self, n: int) -> "Dataset":
        return Dataset(self.images[:n], self.labels[:n])


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Parse an IDX image/label file pair into a [N,1,H,W] dataset."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    img_raw = images_path.read_bytes()
    lbl_raw = labels_path.read_bytes()

    if len(img_raw) < 16:
        raise DataError(f"{images_path}: truncated IDX header")
    magic, n, h, w = struct.unpack(">IIII", img_raw[:16])
    if magic != IMAGES_MAGIC:
        raise DataError(f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}")
    if len(img_raw) != 16 + n * h * w:
        raise DataError(f"{images_path}: payload is {len(img_raw) - 16} bytes, expected {n * h * w}")

    if len(lbl_raw) < 8:
        raise DataError(f"{labels_path}: truncated IDX header")
    lmagic, ln = struct.unpack(">II", lbl_raw[:8])
    if lmagic != LABELS_MAGIC:
        raise DataError(f"{labels_path}: bad magic 0x{lmagic:08x}, expected 0x{LABELS_MAGIC:08x}")
    if len(lbl_raw) != 8 + ln:
        raise DataError(f"{labels_path}: payload is {len(lbl_raw) - 8} bytes, expected {ln}")
    if n != ln:
        raise DataError(f"image count {n} != label count {ln}")

    pixels = np.frombuffer(img_raw, dtype=np.uint8, offset=16).reshape(n, 1, h, w)
    labels = np.frombuffer(lbl_raw, dtype=np.uint8, offset=8).astype(np.int64)
    return Dataset((pixels.astype(np.float32) / 255.0), labels)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path):
    """Write a [N,H,W] uint8 image stack and labels as an IDX file pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3 or images.shape[0] != labels.shape[0]:
        raise DataError(f"write_idx needs [N,H,W] images with matching labels, got {images.shape}")
    n, h, w = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IMAGES_MAGIC, n, h, w) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", LABELS_MAGIC, n) + labels.tobytes())


def load_mnist_dir(root, split: str) -> Dataset:
    root = Path(root)
    try:
        img_name, lbl_name = MNIST_FILES[split]
    except KeyError:
        raise DataError(f"split must be 'train' or 'test', got {split!r}") from None
    img, lbl = root / img_name, root / lbl_name
    if not img.exists() or not lbl.exists():
        raise DataError(f"no IDX pair for split {split!r} under {root}")
    return load_mnist_idx(img, lbl)


def synth_blobs(
    classes: int,
    n_per_class: int,
    dim: int,
    seed: int,
    sigma: float = 0.05,
    hw: tuple[int, int] | None = None,
) -> Dataset:
    """Seeded Gaussian class blobs in [0,1]^dim, optionally shaped [1,h,w]."""
    if classes < 2 or n_per_class < 1 or dim < 1:
        raise DataError("blobs need >= 2 classes, >= 1 sample per class, dim >= 1")
    if hw is not None and hw[0] * hw[1] != dim:
        raise DataError(f"hw {hw} does not multiply to dim {dim}")
    centers = generator(seed, "centers").uniform(0.25, 0.75, size=(classes, dim))
    rng = generator(seed, "samples")
    n = classes * n_per_class
    labels = np.tile(np.arange(classes), n_per_class)
    images = centers[labels] + rng.standard_normal((n, dim)) * sigma
    images = np.clip(images, 0.0, 1.0).astype(np.float32)
    shape = (n, 1, 1, dim) if hw is None else (n, 1, hw[0], hw[1])
    return Dataset(images.reshape(shape), labels.astype(np.int64))


def synth_digits(n_train: int, n_test: int, seed: int, size: int = 28):
    """Offline MNIST-class surrogate: upscaled, shift-augmented 8x8 digits.

    Returns (train, test) Datasets with disjoint base images.
    """
    from sklearn.datasets import load_digits  # lazy: only this provider needs it

    base = load_digits()
    imgs = (base.images / 16.0).astype(np.float32)  # [1797, 8, 8] in [0,1]
    targets = base.target.astype(np.int64)
    up = size // 8 if size % 8 == 0 else 3
    tile = up * 8
    if tile > size:
        raise DataError(f"size {size} too small for the 8x8 base digits")
    order = generator(seed, "base-split").permutation(len(imgs))
    n_test_bases = max(len(imgs) // 6, 1)
    test_bases, train_bases = order[:n_test_bases], order[n_test_bases:]

    def render(count: int, bases: np.ndarray, tag: str) -> Dataset:
        rng = generator(seed, tag)
        out = np.zeros((count, 1, size, size), dtype=np.float32)
        labels = np.zeros(count, dtype=np.int64)
        slack = size - tile
        for i in range(count):
            b = int(bases[i % len(bases)])
            dy, dx = (int(v) for v in rng.integers(0, slack + 1, size=2))
            out[i, 0, dy : dy + tile, dx : dx + tile] = np.kron(imgs[b], np.ones((up, up)))
            labels[i] = targets[b]
        return Dataset(out, labels)

    return render(n_train, train_bases, "train"), render(n_test, test_bases, "test")


def load_dataset(spec: str, split: str = "train") -> Dataset:
    """Resolve a --data argument: an IDX directory, ``blobs:...`` or ``digits:...``.

    blobs:classes=10,n=50,dim=64,seed=1[,sigma=0.05][,hw=8x8]
    digits:train=10000,test=2000,seed=7[,size=28]
    """
    if spec.startswith("blobs:"):
        kv = _parse_kv(spec[len("blobs:") :])
        hw = None
        if "hw" in kv:
            a, _, b = kv["hw"].partition("x")
            hw = (int(a), int(b))
        return synth_blobs(
            classes=int(kv.get("classes", 10)),
            n_per_class=int(kv.get("n", 50)),
            dim=int(kv.get("dim", 64)),
            seed=int(kv.get("seed", 0)),
            sigma=float(kv.get("sigma", 0.05)),
            hw=hw,
        )
    if spec.startswith("digits:"):
        kv = _parse_kv(spec[len("digits:") :])
        train, test = synth_digits(
            n_train=int(kv.get("train", 10000)),
            n_test=int(kv.get("test", 2000)),
            seed=int(kv.get("seed", 0)),
            size=int(kv.get("size", 28)),
        )
        return train if split == "train" else test
    return load_mnist_dir(spec, split)


def _parse_kv(text: str) -> dict[str, str]:
    out = {}
    for part in filter(None, text.split(",")):
        key, sep, value = part.partition("=")
        if not sep:
            raise DataError(f"malformed dataset option {part!r} (expected key=value)")
        out[key.strip()] = value.strip()
    return out
