"""Image I/O, synthetic low-light degradation, patching and resampling.

Images are float ``(H, W, 3)`` arrays in [0, 1].
"""
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import CorruptFile, PatchTooLarge, ShapeError, UnsupportedFormat

PYRAMID_FACTORS = (1, 2, 4, 8)


@dataclass(frozen=True)
class DegradationParams:
    """Exposure in stops, contrast and vibrance in slider units."""

    exposure: float = 0.0
    contrast: float = 0.0
    vibrance: float = 0.0

    def __post_init__(self):
        if not -5.0 <= self.exposure <= 0.0:
            raise ValueError(f"exposure {self.exposure} outside [-5, 0]")
        if not -100.0 <= self.contrast <= 100.0:
            raise ValueError(f"contrast {self.contrast} outside [-100, 100]")
        if not -100.0 <= self.vibrance <= 0.0:
            raise ValueError(f"vibrance {self.vibrance} outside [-100, 0]")

    @classmethod
    def sample(cls, rng):
        return cls(
            exposure=float(rng.uniform(-5.0, 0.0)),
            contrast=float(rng.uniform(-100.0, 100.0)),
            vibrance=float(rng.uniform(-100.0, 0.0)),
        )


def hsl_saturation(img):
    mx = img.max(axis=-1)
    mn = img.min(axis=-1)
    light = 0.5 * (mx + mn)
    chroma = mx - mn
    denom = 1.0 - np.abs(2.0 * light - 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        sat = np.where(denom > 1e-12, chroma / denom, 0.0)
    return np.clip(sat, 0.0, 1.0), light


def degrade(normal, params):
    """Darken an image with exposure, contrast and vibrance stages.

    Exposure multiplies by ``2**exposure``; contrast pivots linearly about
    0.5; vibrance scales HSL saturation by ``1 + vibrance/100 * (1 - sat)``
    which, at fixed hue and lightness, moves each channel toward the HSL
    lightness.  Every stage clamps to [0, 1].
    """
    img = np.clip(np.asarray(normal, dtype=float), 0.0, 1.0)
    img = np.clip(img * 2.0 ** params.exposure, 0.0, 1.0)
    img = np.clip(0.5 + (img - 0.5) * (1.0 + params.contrast / 100.0), 0.0, 1.0)
    sat, light = hsl_saturation(img)
    scale = 1.0 + params.vibrance / 100.0 * (1.0 - sat)
    img = light[..., None] + (img - light[..., None]) * scale[..., None]
    return np.clip(img, 0.0, 1.0)


def extract_patches(pair, patch, n, seed):
    """``n`` aligned random crops from each image of ``pair``."""
    first = np.asarray(pair[0])
    h, w = first.shape[:2]
    for img in pair[1:]:
        if np.shape(img)[:2] != (h, w):
            raise ShapeError("paired images differ in size")
    if patch > h or patch > w:
        raise PatchTooLarge(f"patch {patch} larger than image {h}x{w}")
    rng = np.random.default_rng(seed)
    tops = rng.integers(0, h - patch + 1, size=n)
    lefts = rng.integers(0, w - patch + 1, size=n)
    return [
        tuple(np.asarray(img)[t:t + patch, l:l + patch].copy() for img in pair)
        for t, l in zip(tops, lefts)
    ]


def _split(total):
    before = total // 2
    return before, total - before


def pad_to_multiple(img, multiple=32):
    """Mirror-pad so both sides are multiples of ``multiple``.

    Returns the padded image and the original (H, W).  Odd padding puts the
    extra pixel on the bottom/right.
    """
    if multiple < 1:
        raise ValueError("multiple must be >= 1")
    img = np.asarray(img)
    h, w = img.shape[:2]
    ph = -h % multiple
    pw = -w % multiple
    pads = [_split(ph), _split(pw)] + [(0, 0)] * (img.ndim - 2)
    return np.pad(img, pads, mode="symmetric"), (h, w)


def crop_back(padded, original_dims, multiple=32):
    h, w = original_dims
    top = (-h % multiple) // 2
    left = (-w % multiple) // 2
    return padded[top:top + h, left:left + w]


def _resample_matrix(n_in, factor):
    """Bilinear (half-pixel centred) reduction of one axis by ``factor``."""
    n_out = n_in // factor
    mat = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * factor - 0.5
    lo = np.clip(np.floor(src).astype(int), 0, n_in - 1)
    hi = np.clip(lo + 1, 0, n_in - 1)
    frac = src - np.floor(src)
    rows = np.arange(n_out)
    np.add.at(mat, (rows, lo), 1.0 - frac)
    np.add.at(mat, (rows, hi), frac)
    return mat


def bilinear_downsample(img, factor):
    img = np.asarray(img, dtype=float)
    if factor not in PYRAMID_FACTORS:
        raise ShapeError(f"factor must be one of {PYRAMID_FACTORS}, got {factor}")
    h, w = img.shape[-3], img.shape[-2]
    if h % factor or w % factor:
        raise ShapeError(f"{h}x{w} not divisible by {factor}")
    if factor == 1:
        return img.copy()
    rh = _resample_matrix(h, factor)
    rw = _resample_matrix(w, factor)
    out = np.einsum("ih,...hwc->...iwc", rh, img)
    return np.einsum("jw,...iwc->...ijc", rw, out)


def gt_pyramid(gt):
    return [bilinear_downsample(gt, f) for f in PYRAMID_FACTORS]


# -- file formats ------------------------------------------------------------

def _read_ppm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise CorruptFile(f"{path}: truncated PPM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P6":
        raise UnsupportedFormat(f"{path}: only binary P6 PPM is supported")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise CorruptFile(f"{path}: malformed PPM header") from None
    if maxval != 255:
        raise UnsupportedFormat(f"{path}: only 8-bit PPM is supported")
    pos += 1
    body = data[pos:pos + w * h * 3]
    if len(body) != w * h * 3:
        raise CorruptFile(f"{path}: expected {w * h * 3} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)


def _read_png(path):
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise UnsupportedFormat(f"{path}: not a PNG file")
            if im.mode not in ("RGB", "RGBA", "L", "P"):
                raise UnsupportedFormat(f"{path}: PNG mode {im.mode} is not 8-bit RGB")
            im.load()
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except UnidentifiedImageError:
        raise CorruptFile(f"{path}: unreadable PNG") from None
    except (OSError, SyntaxError) as exc:
        raise CorruptFile(f"{path}: {exc}") from None


def load_image(path):
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".ppm":
        raw = _read_ppm(path)
    elif ext == ".png":
        raw = _read_png(path)
    else:
        raise UnsupportedFormat(f"{path}: unsupported extension {ext!r}")
    return raw.astype(float) / 255.0


def to_uint8(img):
    return np.round(np.clip(np.asarray(img, dtype=float), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(img, path):
    ext = os.path.splitext(str(path))[1].lower()
    raw = to_uint8(img)
    if raw.ndim != 3 or raw.shape[2] != 3:
        raise ShapeError(f"expected an HxWx3 image, got {raw.shape}")
    if ext == ".ppm":
        h, w = raw.shape[:2]
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(raw.tobytes())
    elif ext == ".png":
        Image.fromarray(raw).save(path, format="PNG")
    else:
        raise UnsupportedFormat(f"{path}: unsupported extension {ext!r}")


# -- datasets ----------------------------------------------------------------

@dataclass
class Dataset:
    """Aligned labeled (low, gt) patches and unlabeled low-light patches."""

    labeled: list = field(default_factory=list)
    unlabeled: list = field(default_factory=list)
    patch_size: int = 32
    seed: int = 0


def parse_manifest(path):
    """Read ``labeled <low> <gt>`` / ``unlabeled <path>`` lines.

    Relative paths resolve against the manifest's directory.
    """
    base = os.path.dirname(os.path.abspath(path))
    labeled, unlabeled = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            resolve = [os.path.join(base, p) for p in parts[1:]]
            if parts[0] == "labeled" and len(parts) == 3:
                labeled.append(tuple(resolve))
            elif parts[0] == "unlabeled" and len(parts) == 2:
                unlabeled.append(resolve[0])
            else:
                raise ValueError(f"{path}:{lineno}: cannot parse manifest line {line!r}")
    return labeled, unlabeled


def synthetic_scene(rng, size):
    """A normal-light test scene: smooth colour gradient plus random shapes."""
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w] / max(size - 1, 1)
    base = rng.uniform(0.25, 0.75, size=3)
    slope = rng.uniform(-0.3, 0.3, size=(2, 3))
    img = base + yy[..., None] * slope[0] + xx[..., None] * slope[1]
    for _ in range(rng.integers(3, 7)):
        colour = rng.uniform(0.05, 0.95, size=3)
        cy, cx = rng.uniform(0, 1, size=2)
        r = rng.uniform(0.1, 0.35)
        if rng.random() < 0.5:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        else:
            mask = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < 0.7 * r)
        img[mask] = colour
    img += rng.normal(0.0, 0.01, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def per_item_seed(seed, index):
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def synthetic_dataset(num_labeled, num_unlabeled, patch_size, image_size, seed):
    """Desk-scale stand-in for a paired dataset plus degraded unlabeled images.

    Labeled low-light inputs are exposure-only darkenings of their scene (a
    surrogate for captured low/normal pairs); unlabeled inputs come from
    separate scenes through the full exposure/contrast/vibrance protocol.
    Each item is generated from its own seed derived from (seed, index).
    """
    labeled, unlabeled = [], []
    for i in range(num_labeled + num_unlabeled):
        rng = np.random.default_rng(per_item_seed(seed, i))
        gt = synthetic_scene(rng, image_size)
        params = DegradationParams.sample(rng)
        if i < num_labeled:
            params = DegradationParams(exposure=params.exposure)
        low = degrade(gt, params)
        crop_seed = int(rng.integers(2 ** 31))
        x, y = extract_patches((low, gt), patch_size, 1, crop_seed)[0]
        if i < num_labeled:
            labeled.append((x, y))
        else:
            unlabeled.append(x)
    return Dataset(labeled, unlabeled, patch_size, seed)


def manifest_dataset(path, patch_size, patches_per_image, seed):
    labeled_paths, unlabeled_paths = parse_manifest(path)
    labeled, unlabeled = [], []
    for i, (low_path, gt_path) in enumerate(labeled_paths):
        pair = (load_image(low_path), load_image(gt_path))
        labeled.extend(extract_patches(pair, patch_size, patches_per_image, per_item_seed(seed, i)))
    offset = len(labeled_paths)
    for i, p in enumerate(unlabeled_paths):
        img = load_image(p)
        crops = extract_patches((img,), patch_size, patches_per_image, per_item_seed(seed, offset + i))
        unlabeled.extend(c[0] for c in crops)
    return Dataset(labeled, unlabeled, patch_size, seed)
