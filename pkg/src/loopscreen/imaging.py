"""Grayscale image handling and the preprocessing chain: crop, center-pad,
Laplacian-of-Gaussian filtering, and min-max normalization back to [0, 1].

Images store intensities in [0, 1] with 0 = ink and 1 = background. Filter
responses are signed and live in FilterMap until normalized.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PilImage
from PIL import UnidentifiedImageError

from .config import read_kv, write_kv
from .errors import (
    BadConfig,
    EmptyImage,
    InvalidSigma,
    NoInk,
    TargetTooSmall,
    UnreadableFile,
    UnsupportedFormat,
)

# Rec. 709 luma coefficients; source scans are near-monochrome so the exact
# standard is low-stakes, but it is pinned for reproducibility.
LUMA_R, LUMA_G, LUMA_B = 0.2126, 0.7152, 0.0722

BORDER_MODES = ("replicate", "reflect", "zero")
_NUMPY_PAD_MODE = {"replicate": "edge", "reflect": "reflect"}


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Image:
    """2-D grayscale raster, row-major, every intensity finite and in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = _readonly(self.pixels)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise EmptyImage(f"expected a non-empty 2-D raster, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise UnsupportedFormat("image contains non-finite intensities")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise UnsupportedFormat("image intensities must lie in [0, 1]")
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class FilterMap:
    """Signed filter response with the same layout as Image, unbounded range."""

    values: np.ndarray

    def __post_init__(self):
        arr = _readonly(self.values)
        if arr.ndim != 2 or arr.size == 0:
            raise EmptyImage(f"expected a non-empty 2-D response, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise UnsupportedFormat("filter response contains non-finite values")
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Kernel:
    """Square convolution kernel with side 2*radius + 1."""

    radius: int
    weights: np.ndarray

    def __post_init__(self):
        if self.radius < 0:
            raise BadConfig("kernel radius must be >= 0")
        side = 2 * self.radius + 1
        arr = _readonly(self.weights)
        if arr.shape != (side, side):
            raise BadConfig(f"kernel weights must be {side}x{side}, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise BadConfig("kernel weights must be finite")
        object.__setattr__(self, "weights", arr)


@dataclass(frozen=True)
class BorderPolicy:
    """How convolution reads past the image edge."""

    mode: str = "replicate"

    def __post_init__(self):
        if self.mode not in BORDER_MODES:
            raise BadConfig(f"border mode must be one of {BORDER_MODES}, got {self.mode!r}")


@dataclass
class PreprocessConfig:
    canvas_w: int = 128
    canvas_h: int = 128
    sigma: float = 2.0
    radius: int = 8
    border: str = "replicate"
    ink_threshold: float = 0.5

    def __post_init__(self):
        if self.canvas_w < 1 or self.canvas_h < 1:
            raise BadConfig("canvas dimensions must be positive")
        if not 0.0 < self.ink_threshold < 1.0:
            raise BadConfig("ink_threshold must lie in (0, 1)")
        BorderPolicy(self.border)

    def to_kv(self) -> dict:
        return {
            "canvas_w": self.canvas_w,
            "canvas_h": self.canvas_h,
            "sigma": self.sigma,
            "radius": self.radius,
            "border": self.border,
            "ink_threshold": self.ink_threshold,
        }

    @classmethod
    def from_kv(cls, entries: dict[str, str]) -> "PreprocessConfig":
        kwargs = {}
        for key, cast in (
            ("canvas_w", int),
            ("canvas_h", int),
            ("sigma", float),
            ("radius", int),
            ("border", str),
            ("ink_threshold", float),
        ):
            if key in entries:
                try:
                    kwargs[key] = cast(entries[key])
                except ValueError as exc:
                    raise BadConfig(f"bad value for {key}: {entries[key]!r}") from exc
        return cls(**kwargs)

    def save(self, path) -> None:
        write_kv(path, self.to_kv())

    @classmethod
    def load(cls, path) -> "PreprocessConfig":
        return cls.from_kv(read_kv(path))


# ---------------------------------------------------------------------------
# file I/O


def _from_pil(pil: PilImage.Image) -> Image:
    if pil.mode == "L":
        arr = np.asarray(pil, dtype=np.float64) / 255.0
    elif pil.mode == "RGB":
        rgb = np.asarray(pil, dtype=np.float64)
        arr = (LUMA_R * rgb[..., 0] + LUMA_G * rgb[..., 1] + LUMA_B * rgb[..., 2]) / 255.0
    else:
        raise UnsupportedFormat(f"unsupported pixel mode {pil.mode!r}; need 8-bit gray or RGB")
    return Image(arr)


def _decode(opener) -> Image:
    try:
        pil = PilImage.open(opener)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise UnreadableFile(str(exc)) from exc
    if pil.format not in ("PNG", "PPM"):
        raise UnsupportedFormat(f"unsupported file format {pil.format!r}; need PGM or PNG")
    try:
        pil.load()
    except (OSError, ValueError, SyntaxError) as exc:
        raise UnreadableFile(str(exc)) from exc
    return _from_pil(pil)


def load_image(path: str | Path) -> Image:
    path = Path(path)
    if not path.is_file():
        raise UnreadableFile(f"no such file: {path}")
    return _decode(str(path))


def decode_image(data: bytes) -> Image:
    """Decode PNG or PGM bytes held in memory (the service upload path)."""
    return _decode(io.BytesIO(data))


def save_image(img: Image, path: str | Path) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix not in (".png", ".pgm"):
        raise UnsupportedFormat(f"can only write .png or .pgm, got {suffix!r}")
    quantized = np.rint(img.pixels * 255.0).astype(np.uint8)
    PilImage.fromarray(quantized, mode="L").save(str(path))


# ---------------------------------------------------------------------------
# preprocessing steps


def crop_to_content(img: Image, ink_threshold: float = 0.5) -> Image:
    if not 0.0 < ink_threshold < 1.0:
        raise BadConfig("ink_threshold must lie in (0, 1)")
    rows, cols = np.nonzero(img.pixels < ink_threshold)
    if rows.size == 0:
        raise NoInk(f"no pixel below intensity {ink_threshold}")
    return Image(img.pixels[rows.min():rows.max() + 1, cols.min():cols.max() + 1])


def center_pad(img: Image, target_width: int, target_height: int, fill: float = 1.0) -> Image:
    if img.width > target_width or img.height > target_height:
        raise TargetTooSmall(
            f"content {img.width}x{img.height} exceeds target {target_width}x{target_height}"
        )
    out = np.full((target_height, target_width), float(fill), dtype=np.float64)
    oy = (target_height - img.height) // 2
    ox = (target_width - img.width) // 2
    out[oy:oy + img.height, ox:ox + img.width] = img.pixels
    return Image(out)


def _radial_grid(radius: int) -> np.ndarray:
    ys, xs = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    return (xs * xs + ys * ys).astype(np.float64)


def gaussian_kernel(sigma: float, radius: int) -> Kernel:
    if sigma <= 0.0:
        raise InvalidSigma(f"sigma must be > 0, got {sigma}")
    if radius < 1:
        raise BadConfig("kernel radius must be >= 1")
    if radius < math.ceil(2.0 * sigma):
        warnings.warn(
            f"radius {radius} truncates a sigma={sigma} Gaussian below 2*sigma",
            stacklevel=2,
        )
    w = np.exp(-_radial_grid(radius) / (2.0 * sigma * sigma))
    return Kernel(radius, w / w.sum())


def log_kernel(sigma: float, radius: int) -> Kernel:
    if sigma <= 0.0:
        raise InvalidSigma(f"sigma must be > 0, got {sigma}")
    if radius < 1:
        raise BadConfig("kernel radius must be >= 1")
    r2 = _radial_grid(radius)
    gauss = np.exp(-r2 / (2.0 * sigma * sigma))
    w = ((r2 - 2.0 * sigma * sigma) / sigma**4) * gauss
    # Share the Gaussian kernel's normalizer so the analytic path and the
    # blur-then-Laplacian path produce responses on the same scale, then
    # remove residual DC so constant regions map to exactly zero.
    w = w / gauss.sum()
    return Kernel(radius, w - w.mean())


LAPLACIAN_5POINT = Kernel(1, np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]]))


def convolve(img: Image | FilterMap, kernel: Kernel, border: BorderPolicy = BorderPolicy()) -> FilterMap:
    arr = img.pixels if isinstance(img, Image) else img.values
    if arr.size == 0:
        raise EmptyImage("cannot convolve an empty raster")
    r = kernel.radius
    if border.mode == "zero":
        padded = np.pad(arr, r, mode="constant", constant_values=0.0)
    else:
        padded = np.pad(arr, r, mode=_NUMPY_PAD_MODE[border.mode])
    h, w = arr.shape
    out = np.zeros((h, w), dtype=np.float64)
    weights = kernel.weights
    # True convolution: out(y, x) = sum_k K(dy, dx) * I(y - dy, x - dx).
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            coeff = weights[r + dy, r + dx]
            if coeff == 0.0:
                continue
            out += coeff * padded[r - dy:r - dy + h, r - dx:r - dx + w]
    return FilterMap(out)


def laplacian_of_gaussian(
    img: Image,
    sigma: float,
    radius: int,
    border: BorderPolicy = BorderPolicy(),
    path: str = "analytic",
) -> FilterMap:
    if path == "analytic":
        return convolve(img, log_kernel(sigma, radius), border)
    if path == "two_stage":
        blurred = convolve(img, gaussian_kernel(sigma, radius), border)
        return convolve(blurred, LAPLACIAN_5POINT, border)
    raise BadConfig(f"path must be 'analytic' or 'two_stage', got {path!r}")


def normalize_filtermap(fm: FilterMap) -> Image:
    lo = fm.values.min()
    hi = fm.values.max()
    if hi == lo:
        return Image(np.full_like(fm.values, 0.5))
    return Image((fm.values - lo) / (hi - lo))


def preprocess(img: Image, cfg: PreprocessConfig | None = None) -> Image:
    """Crop to ink, center on a fixed canvas, LoG-filter, renormalize."""
    cfg = cfg or PreprocessConfig()
    cropped = crop_to_content(img, cfg.ink_threshold)
    padded = center_pad(cropped, cfg.canvas_w, cfg.canvas_h, fill=1.0)
    response = laplacian_of_gaussian(
        padded, cfg.sigma, cfg.radius, BorderPolicy(cfg.border), path="analytic"
    )
    return normalize_filtermap(response)
