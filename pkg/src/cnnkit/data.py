"""Dataset scanning, stratified splitting, preprocessing and batching.

Dataset layout: ``root/<class_name>/**/<image>`` — each top-level folder
is one class, scanned recursively. Class indices follow lexicographic
(byte) order of the folder names; sample order within a class is the
sorted relative path. Both orders are load-bearing: they fix the split,
the class weights and checkpoint compatibility.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    DatasetStructureError,
    DecodeError,
    ShapeError,
    StratificationError,
)
from .seeding import STREAM_AUGMENT, STREAM_SHUFFLE, STREAM_SPLIT, derive_rng

SUPPORTED_EXTENSIONS = {".jpg", ".jpeg", ".png", ".ppm"}
SPLIT_RATIOS = (0.70, 0.15, 0.15)

# Canonical ImageNet channel statistics.
IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


@dataclass(frozen=True)
class SampleRef:
    path: Path
    class_index: int
    class_name: str


@dataclass
class DatasetIndex:
    root: Path
    classes: list[str]
    samples: list[SampleRef]
    counts: list[int]
    skipped: list[Path]

    @property
    def num_classes(self) -> int:
        return len(self.classes)


@dataclass
class SplitAssignment:
    train: list[SampleRef]
    val: list[SampleRef]
    test: list[SampleRef]
    seed: int
    ratios: tuple = SPLIT_RATIOS

    def split(self, name: str) -> list[SampleRef]:
        try:
            return {"train": self.train, "val": self.val, "test": self.test}[name]
        except KeyError:
            raise ShapeError(f"unknown split {name!r}; expected train/val/test") from None


@dataclass(frozen=True)
class AugmentConfig:
    hflip_prob: float = 0.5
    rotation_deg: float = 10.0
    jitter_brightness: float = 0.2
    jitter_contrast: float = 0.2
    jitter_saturation: float = 0.2
    enabled: bool = True


def scan_dataset(root) -> DatasetIndex:
    """Index a class-per-folder image tree deterministically.

    Non-image files are skipped and reported; fewer than two classes or an
    image-less class is a structure error.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetStructureError(f"dataset root {root} is not a directory")
    class_dirs = sorted((d for d in root.iterdir() if d.is_dir()), key=lambda d: d.name)
    if len(class_dirs) < 2:
        raise DatasetStructureError(
            f"need at least 2 class directories under {root}, found {len(class_dirs)}"
        )
    classes = [d.name for d in class_dirs]
    samples: list[SampleRef] = []
    counts: list[int] = []
    skipped: list[Path] = []
    skipped.extend(sorted(p for p in root.iterdir() if p.is_file()))
    for idx, cdir in enumerate(class_dirs):
        found = 0
        for p in sorted(cdir.rglob("*")):
            if not p.is_file():
                continue
            if p.suffix.lower() in SUPPORTED_EXTENSIONS:
                samples.append(SampleRef(path=p, class_index=idx, class_name=cdir.name))
                found += 1
            else:
                skipped.append(p)
        if found == 0:
            raise DatasetStructureError(f"class directory {cdir} contains no supported images")
        counts.append(found)
    return DatasetIndex(root=root, classes=classes, samples=samples, counts=counts,
                        skipped=skipped)


def stratified_split(index: DatasetIndex, seed: int) -> SplitAssignment:
    """Per-class 70/15/15 partition with floor rounding, test absorbing the
    remainder. Each class is shuffled by its own stream derived from
    (seed, class_index), so adding a class never reshuffles the others.
    """
    train: list[SampleRef] = []
    val: list[SampleRef] = []
    test: list[SampleRef] = []
    for ci, cname in enumerate(index.classes):
        members = [s for s in index.samples if s.class_index == ci]
        n = len(members)
        if n < 3:
            raise StratificationError(
                f"class '{cname}' has only {n} sample(s); need at least 3 to stratify"
            )
        order = derive_rng(seed, STREAM_SPLIT, ci).permutation(n)
        # Exact floor rule: floor(0.70*n) and floor(0.15*n) in integer
        # arithmetic, immune to float rounding.
        n_train = (70 * n) // 100
        n_val = (15 * n) // 100
        if n_val == 0:
            warnings.warn(
                f"class '{cname}' ({n} samples) gets an empty validation slice",
                stacklevel=2,
            )
        shuffled = [members[i] for i in order]
        train.extend(shuffled[:n_train])
        val.extend(shuffled[n_train : n_train + n_val])
        test.extend(shuffled[n_train + n_val :])
    return SplitAssignment(train=train, val=val, test=test, seed=seed)


def compute_class_weights(train_counts) -> np.ndarray:
    """w_c = N_train / (C * n_c): inverse-frequency weights normalized so
    that sum_c w_c * n_c == N_train."""
    counts = np.asarray(train_counts, dtype=np.float64)
    if counts.ndim != 1 or len(counts) < 1:
        raise ShapeError(f"train_counts must be a 1-D array, got shape {counts.shape}")
    if (counts < 1).any():
        raise StratificationError("every class needs at least one training sample")
    n = counts.sum()
    return (n / (len(counts) * counts)).astype(np.float32)


def split_class_counts(samples, num_classes: int) -> list[int]:
    counts = [0] * num_classes
    for s in samples:
        counts[s.class_index] += 1
    return counts


# -- image loading and preprocessing ----------------------------------------


def load_image_01(path, target_size: int = 224) -> np.ndarray:
    """Decode to RGB, bilinear-resize square to target, scale to [0,1] CHW."""
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            if img.size != (target_size, target_size):
                img = img.resize((target_size, target_size), Image.BILINEAR)
            arr = np.asarray(img, dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"cannot decode image {path}: {exc}") from exc
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DecodeError(f"image {path} decoded to unusable shape {arr.shape}")
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def normalize(image_01: np.ndarray) -> np.ndarray:
    """Per-channel ImageNet normalization of a [0,1] CHW image."""
    return (image_01 - IMAGENET_MEAN[:, None, None]) / IMAGENET_STD[:, None, None]


def denormalize(image: np.ndarray) -> np.ndarray:
    return image * IMAGENET_STD[:, None, None] + IMAGENET_MEAN[:, None, None]


def load_and_preprocess(path, target_size: int = 224) -> np.ndarray:
    """Full eval-path preprocessing: decode, resize, normalize."""
    return normalize(load_image_01(path, target_size))


# -- augmentation ------------------------------------------------------------


def hflip(image: np.ndarray) -> np.ndarray:
    return image[:, :, ::-1].copy()


def rotate(image: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate about the image center via inverse mapping with bilinear
    sampling; out-of-bounds source positions read as 0."""
    c, h, w = image.shape
    theta = np.deg2rad(degrees)
    cos, sin = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    # Inverse rotation of output coordinates back into the source frame.
    sy = cos * (ys - cy) + sin * (xs - cx) + cy
    sx = -sin * (ys - cy) + cos * (xs - cx) + cx
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    fy = (sy - y0).astype(np.float32)
    fx = (sx - x0).astype(np.float32)

    def sample(yy, xx):
        inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = image[:, yy.clip(0, h - 1), xx.clip(0, w - 1)]
        return vals * inside.astype(np.float32)

    out = (
        sample(y0, x0) * (1 - fy) * (1 - fx)
        + sample(y0, x0 + 1) * (1 - fy) * fx
        + sample(y0 + 1, x0) * fy * (1 - fx)
        + sample(y0 + 1, x0 + 1) * fy * fx
    )
    return out.astype(image.dtype)


GRAY_COEFFS = np.array([0.299, 0.587, 0.114], dtype=np.float32)


def adjust_brightness(image, factor):
    return image * np.float32(factor)

def adjust_contrast(image, factor):
    gray_mean = np.float32((image * GRAY_COEFFS[:, None, None]).sum(axis=0).mean())
    return (image - gray_mean) * np.float32(factor) + gray_mean

def adjust_saturation(image, factor):
    gray = (image * GRAY_COEFFS[:, None, None]).sum(axis=0, keepdims=True)
    return gray + (image - gray) * np.float32(factor)


def augment(image: np.ndarray, config: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Apply flip, rotation and color jitter to a [0,1] CHW image.

    The rng draw order is fixed (flip coin, angle, three jitter factors)
    regardless of which transforms fire, so streams stay aligned.
    """
    if not config.enabled:
        return image
    coin = rng.random()
    degrees = rng.uniform(-config.rotation_deg, config.rotation_deg)
    u_bright = rng.uniform(1 - config.jitter_brightness, 1 + config.jitter_brightness)
    u_contrast = rng.uniform(1 - config.jitter_contrast, 1 + config.jitter_contrast)
    u_sat = rng.uniform(1 - config.jitter_saturation, 1 + config.jitter_saturation)

    if config.hflip_prob > 0 and coin < config.hflip_prob:
        image = hflip(image)
    if config.rotation_deg > 0:
        image = rotate(image, degrees)
    image = adjust_brightness(image, u_bright)
    image = adjust_contrast(image, u_contrast)
    image = adjust_saturation(image, u_sat)
    return np.clip(image, 0.0, 1.0)


# -- batching -----------------------------------------------------------------


def _prepare_sample(sample: SampleRef, image_size, augment_config, seed, epoch, slot):
    img = load_image_01(sample.path, image_size)
    if augment_config is not None and augment_config.enabled:
        img = augment(img, augment_config, derive_rng(seed, STREAM_AUGMENT, epoch, slot))
    return normalize(img)


def make_batches(samples, batch_size: int, *, image_size: int = 224, shuffle: bool = False,
                 seed: int = 0, epoch: int = 0, augment_config: AugmentConfig | None = None,
                 num_threads: int = 1):
    """Yield (images, targets) batches; the final partial batch is kept.

    Training passes shuffle=True and an AugmentConfig: the order comes
    from a (seed, epoch)-derived stream and every sample's augmentation
    rng is derived from its position, so results are identical no matter
    how decoding is parallelized. Val/test passes use index order,
    untouched images, every epoch.
    """
    if batch_size < 1:
        raise ShapeError(f"batch_size must be >= 1, got {batch_size}")
    samples = list(samples)
    if shuffle:
        order = derive_rng(seed, STREAM_SHUFFLE, epoch).permutation(len(samples))
    else:
        order = np.arange(len(samples))

    pool = None
    if num_threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        pool = ThreadPoolExecutor(max_workers=num_threads)
    try:
        for start in range(0, len(samples), batch_size):
            chunk = order[start : start + batch_size]
            refs = [samples[i] for i in chunk]
            args = [
                (ref, image_size, augment_config, seed, epoch, start + j)
                for j, ref in enumerate(refs)
            ]
            if pool is None:
                images = [_prepare_sample(*a) for a in args]
            else:
                # map preserves submission order: workers fill pre-assigned slots.
                images = list(pool.map(lambda a: _prepare_sample(*a), args))
            targets = np.array([r.class_index for r in refs], dtype=np.int64)
            yield np.stack(images), targets
    finally:
        if pool is not None:
            pool.shutdown(wait=True)


# -- split manifest -----------------------------------------------------------


MANIFEST_FORMAT = "cnnkit-split-manifest-v1"


def save_manifest(split: SplitAssignment, index: DatasetIndex, path) -> None:
    """Write the split as JSON with paths relative to the dataset root."""
    rel = lambda s: s.path.relative_to(index.root).as_posix()
    doc = {
        "format": MANIFEST_FORMAT,
        "seed": split.seed,
        "ratios": list(split.ratios),
        "classes": index.classes,
        "train": [rel(s) for s in split.train],
        "val": [rel(s) for s in split.val],
        "test": [rel(s) for s in split.test],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_manifest(path, dataset_root) -> tuple[SplitAssignment, list[str]]:
    """Re-materialize a saved split against a dataset root.

    Returns (split, classes); missing files are reported individually.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetStructureError(f"cannot read manifest {path}: {exc}") from exc
    if doc.get("format") != MANIFEST_FORMAT:
        raise DatasetStructureError(f"{path} is not a split manifest (format field mismatch)")
    root = Path(dataset_root)
    classes = list(doc["classes"])
    class_index = {c: i for i, c in enumerate(classes)}

    def refs(names):
        out = []
        for rel_path in names:
            cname = Path(rel_path).parts[0]
            if cname not in class_index:
                raise DatasetStructureError(f"manifest path {rel_path} has unknown class {cname}")
            out.append(SampleRef(path=root / rel_path, class_index=class_index[cname],
                                 class_name=cname))
        return out

    split = SplitAssignment(train=refs(doc["train"]), val=refs(doc["val"]),
                            test=refs(doc["test"]), seed=int(doc["seed"]),
                            ratios=tuple(doc["ratios"]))
    missing = [str(s.path) for part in (split.train, split.val, split.test) for s in part
               if not s.path.is_file()]
    if missing:
        raise DatasetStructureError(
            "manifest references missing files:\n  " + "\n  ".join(missing)
        )
    return split, classes
