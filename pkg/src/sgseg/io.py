"""Image, label and dataset files.

Images are 8-bit PNG or PPM, RGB or RGBIR. RGBIR comes either as a
4-channel PNG or as an RGB file plus a grayscale ``<stem>_ir.png`` (or
``.ppm``/``.pgm``) next to it. Labels are 8-bit single-channel (indexed or
grayscale) PNGs whose value 255 marks unlabelled pixels.

Dataset layout::

    root/images/<stem>.png      (or .ppm)
    root/labels/<stem>.png      (optional)
"""

import colorsys
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .evaluate import IGNORE_LABEL

IMAGE_SUFFIXES = (".png", ".ppm")
IR_SUFFIXES = (".png", ".ppm", ".pgm")


def worker_count():
    """Loader lanes: ``SGSEG_THREADS`` if set, else the CPU count."""
    raw = os.environ.get("SGSEG_THREADS")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"SGSEG_THREADS must be a positive integer, got {raw!r}") from None
        if n < 1:
            raise ValueError(f"SGSEG_THREADS must be a positive integer, got {raw!r}")
        return n
    return os.cpu_count() or 1


def to_uint8(img):
    """[0, 1] floats -> uint8 with rounding; uint8 passes through."""
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def _open_array(path):
    with Image.open(path) as im:
        if im.mode == "P":
            im = im.convert("RGBA" if "transparency" in im.info else "RGB")
        elif im.mode not in ("L", "RGB", "RGBA"):
            im = im.convert("RGB")
        return np.asarray(im)


def _ir_partner(path):
    path = Path(path)
    for suf in IR_SUFFIXES:
        cand = path.with_name(f"{path.stem}_ir{suf}")
        if cand.exists():
            return cand
    return None


def load_image(path, ir_path=None, size=None):
    """Float image (H, W, C) in [0, 1] with C = 3 (RGB) or 4 (RGBIR)."""
    arr = _open_array(path)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    ir_path = ir_path if ir_path is not None else (_ir_partner(path) if arr.shape[2] == 3 else None)
    if ir_path is not None:
        ir = _open_array(ir_path)
        if ir.ndim == 3:
            ir = ir[..., 0]
        if ir.shape != arr.shape[:2]:
            raise ValueError(f"{ir_path}: IR extent {ir.shape} differs from {path} {arr.shape[:2]}")
        arr = np.concatenate([arr[..., :3], ir[..., None]], axis=2)
    if size is not None and arr.shape[:2] != (size, size):
        chans = [np.asarray(Image.fromarray(arr[..., c]).resize((size, size), Image.BILINEAR))
                 for c in range(arr.shape[2])]
        arr = np.stack(chans, axis=2)
    return arr.astype(np.float64) / 255.0


def save_image(path, img):
    """Write a [0, 1] float or uint8 image as PNG or PPM (by suffix)."""
    arr = to_uint8(img)
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError("PPM output needs a 3-channel image")
        Image.fromarray(arr, "RGB").save(path, format="PPM")
        return
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr).save(path, format="PNG")


def load_labels(path, size=None):
    arr = _open_label_array(path)
    if size is not None and arr.shape != (size, size):
        arr = np.asarray(Image.fromarray(arr).resize((size, size), Image.NEAREST))
    return arr


def _open_label_array(path):
    with Image.open(path) as im:
        if im.mode not in ("P", "L"):
            raise ValueError(f"{path}: labels must be an 8-bit single-channel PNG, got mode {im.mode}")
        return np.array(im)  # for mode P this is the palette index


def label_palette():
    """Distinct RGB colors for class ids; index 255 is black."""
    pal = np.zeros((256, 3), dtype=np.uint8)
    golden = 0.618033988749895
    for i in range(255):
        h = (i * golden) % 1.0
        pal[i] = to_uint8(np.array(colorsys.hsv_to_rgb(h, 0.65, 0.95)))
    return pal


def save_labels(path, labels):
    """Indexed 8-bit PNG whose pixel values are the class ids."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"label map must be 2-D, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() > 255):
        raise ValueError("label ids must lie in [0, 255]")
    im = Image.fromarray(labels.astype(np.uint8), mode="P")
    im.putpalette(label_palette().ravel().tolist())
    im.save(path, format="PNG")


def color_overlay(image, labels, alpha=0.5):
    """Blend class colors over the image; ignore pixels keep the image."""
    img = np.asarray(image, dtype=np.float64)[..., :3]
    labels = np.asarray(labels)
    colors = label_palette()[labels].astype(np.float64) / 255.0
    keep = (labels == IGNORE_LABEL)[..., None]
    return np.where(keep, img, (1 - alpha) * img + alpha * colors)


def boundary_overlay(image, segments, color=(1.0, 1.0, 0.0)):
    """Mark pixels whose right or lower neighbour belongs to another segment."""
    img = np.array(np.asarray(image, dtype=np.float64)[..., :3], copy=True)
    s = np.asarray(segments)
    edge = np.zeros(s.shape, dtype=bool)
    edge[:, :-1] |= s[:, :-1] != s[:, 1:]
    edge[:-1, :] |= s[:-1, :] != s[1:, :]
    img[edge] = color
    return img


@dataclass
class Dataset:
    root: Path
    stems: list
    images: np.ndarray  # (n, H, W, C) in [0, 1]
    labels: np.ndarray = None  # (n, H, W) uint8, or None


def _image_files(img_dir):
    files = {}
    for p in sorted(Path(img_dir).iterdir()):
        if p.suffix.lower() in IMAGE_SUFFIXES and not p.stem.endswith("_ir"):
            files.setdefault(p.stem, p)
    return files


def load_dataset(root, size=None, require_labels=False) -> Dataset:
    """Read ``root/images`` (and ``root/labels`` if present) in stem order."""
    root = Path(root)
    img_dir = root / "images"
    if not img_dir.is_dir():
        raise FileNotFoundError(f"{img_dir} is not a directory")
    files = _image_files(img_dir)
    if not files:
        raise FileNotFoundError(f"no .png/.ppm images in {img_dir}")
    stems = list(files)
    lab_dir = root / "labels"
    has_labels = lab_dir.is_dir()
    if require_labels and not has_labels:
        raise FileNotFoundError(f"{lab_dir} is not a directory")
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        images = list(pool.map(lambda s: load_image(files[s], size=size), stems))
        labels = None
        if has_labels:
            def one(stem):
                p = lab_dir / f"{stem}.png"
                if not p.exists():
                    raise FileNotFoundError(f"missing label raster {p}")
                return load_labels(p, size=size)

            labels = list(pool.map(one, stems))
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ValueError(f"images have differing shapes {sorted(shapes)}; pass a resize target")
    if labels is not None:
        for stem, im, lab in zip(stems, images, labels):
            if lab.shape != im.shape[:2]:
                raise ValueError(f"{stem}: label extent {lab.shape} differs from image {im.shape[:2]}")
        labels = np.stack(labels)
    return Dataset(root, stems, np.stack(images), labels)


def write_dataset(root, images, labels=None, stems=None):
    """Write ``root/images/*.png`` (and ``root/labels``) in one writer."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    if labels is not None:
        (root / "labels").mkdir(parents=True, exist_ok=True)
    stems = stems or [f"{i:05d}" for i in range(len(images))]
    for i, stem in enumerate(stems):
        save_image(root / "images" / f"{stem}.png", images[i])
        if labels is not None:
            save_labels(root / "labels" / f"{stem}.png", labels[i])
    return stems
