"""Data augmentation: horizontal shear and horizontal flip.

Each source image expands to exactly three items (original, one sheared copy,
one flipped copy), the policy that turns 240 source images into 720.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import read_kv, write_kv
from .errors import AngleOutOfRange, BadConfig
from .imaging import Image

WHITE = 1.0

# Angles inside this band are excluded so a sheared copy is never a pixel-wise
# duplicate of its original.
MIN_DISTINCT_ANGLE = 1.0


@dataclass(frozen=True)
class Provenance:
    """How an item was derived from its source: original, shear(angle), hflip."""

    kind: str
    angle: float | None = None

    def __post_init__(self):
        if self.kind not in ("original", "shear", "hflip"):
            raise BadConfig(f"unknown provenance kind {self.kind!r}")
        if (self.kind == "shear") != (self.angle is not None):
            raise BadConfig("shear provenance carries an angle, others do not")

    def __str__(self) -> str:
        if self.kind == "shear":
            return f"shear({self.angle!r})"
        return self.kind

    @classmethod
    def parse(cls, text: str) -> "Provenance":
        if text == "original" or text == "hflip":
            return cls(text)
        if text.startswith("shear(") and text.endswith(")"):
            try:
                return cls("shear", float(text[6:-1]))
            except ValueError as exc:
                raise BadConfig(f"bad shear provenance {text!r}") from exc
        raise BadConfig(f"unknown provenance {text!r}")


ORIGINAL = Provenance("original")
HFLIP = Provenance("hflip")


@dataclass
class AugmentConfig:
    shear_min_deg: float = -15.0
    shear_max_deg: float = 15.0
    seed: int = 0

    def __post_init__(self):
        if self.shear_min_deg > self.shear_max_deg:
            raise BadConfig("shear_min_deg must be <= shear_max_deg")
        if not (-45.0 < self.shear_min_deg and self.shear_max_deg < 45.0):
            raise BadConfig("shear range must lie within (-45, 45) degrees")
        if self.shear_max_deg < MIN_DISTINCT_ANGLE and self.shear_min_deg > -MIN_DISTINCT_ANGLE:
            raise BadConfig(
                f"shear range [{self.shear_min_deg}, {self.shear_max_deg}] lies entirely "
                f"inside the excluded band (-{MIN_DISTINCT_ANGLE}, {MIN_DISTINCT_ANGLE})"
            )

    def to_kv(self) -> dict:
        return {
            "shear_min_deg": self.shear_min_deg,
            "shear_max_deg": self.shear_max_deg,
            "seed": self.seed,
        }

    @classmethod
    def from_kv(cls, entries: dict[str, str]) -> "AugmentConfig":
        kwargs = {}
        for key, cast in (("shear_min_deg", float), ("shear_max_deg", float), ("seed", int)):
            if key in entries:
                try:
                    kwargs[key] = cast(entries[key])
                except ValueError as exc:
                    raise BadConfig(f"bad value for {key}: {entries[key]!r}") from exc
        return cls(**kwargs)

    def save(self, path) -> None:
        write_kv(path, self.to_kv())

    @classmethod
    def load(cls, path) -> "AugmentConfig":
        return cls.from_kv(read_kv(path))


def shear(img: Image, angle_deg: float, fill: float = WHITE) -> Image:
    """Horizontal shear about the vertical midline, x' = x + tan(a) * (y - h/2).

    Inverse-mapped with bilinear sampling; samples beyond the image read `fill`.
    """
    if not abs(angle_deg) < 45.0:
        raise AngleOutOfRange(f"|angle| must be < 45 degrees, got {angle_deg}")
    h, w = img.height, img.width
    slope = math.tan(math.radians(angle_deg))
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    src = xs - slope * (ys - h / 2.0)
    x0 = np.floor(src).astype(np.int64)
    frac = src - x0
    x1 = x0 + 1
    in0 = (x0 >= 0) & (x0 < w)
    in1 = (x1 >= 0) & (x1 < w)
    pix = img.pixels
    rows = np.broadcast_to(np.arange(h)[:, None], src.shape)
    v0 = np.where(in0, pix[rows, np.clip(x0, 0, w - 1)], fill)
    v1 = np.where(in1, pix[rows, np.clip(x1, 0, w - 1)], fill)
    return Image((1.0 - frac) * v0 + frac * v1)


def hflip(img: Image) -> Image:
    return Image(img.pixels[:, ::-1])


def item_rng(seed: int, index: int) -> np.random.Generator:
    """Per-item stream derived from (seed, index) so order never matters."""
    return np.random.default_rng([seed, index])


def draw_shear_angle(rng: np.random.Generator, cfg: AugmentConfig) -> float:
    for _ in range(10_000):
        angle = rng.uniform(cfg.shear_min_deg, cfg.shear_max_deg)
        if abs(angle) >= MIN_DISTINCT_ANGLE:
            return angle
    raise BadConfig("could not draw a shear angle outside the excluded band")


def augment_dataset(
    items: list[tuple[Image, int]], cfg: AugmentConfig
) -> list[tuple[Image, int, Provenance]]:
    """Expand each (image, label) into original + sheared + flipped triples."""
    if not items:
        raise BadConfig("augment_dataset needs at least one item")
    out: list[tuple[Image, int, Provenance]] = []
    for index, (img, label) in enumerate(items):
        angle = draw_shear_angle(item_rng(cfg.seed, index), cfg)
        out.append((img, label, ORIGINAL))
        out.append((shear(img, angle), label, Provenance("shear", angle)))
        out.append((hflip(img), label, HFLIP))
    return out
