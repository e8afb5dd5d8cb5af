"""Dataset ingestion, the stratified 80/10/10 split, synthetic loop traces,
and the tab-separated manifest that records item/split assignments.

The synthetic generator stands in for the (non-public) clinical scans: four
connected pen loops whose height, baseline inclination, and tremor differ by
class, echoing the motor abnormalities the clinical literature reports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import ORIGINAL, Provenance, hflip, shear
from .config import read_kv, write_kv
from .errors import BadConfig, EmptyClass, MissingClassDir, TooFewItems
from .imaging import Image, load_image, save_image

CONTROL, PATIENT = 0, 1
CLASS_DIRS = ("control", "patient")
IMAGE_SUFFIXES = (".png", ".pgm")


@dataclass(frozen=True)
class LabeledItem:
    image: Image
    label: int
    source_id: str
    provenance: Provenance = ORIGINAL

    def __post_init__(self):
        if self.label not in (CONTROL, PATIENT):
            raise BadConfig(f"label must be 0 (control) or 1 (patient), got {self.label}")


@dataclass
class DatasetSplit:
    train: list[LabeledItem]
    validation: list[LabeledItem]
    test: list[LabeledItem]
    seed: int
    leak_free: bool

    def all_items(self) -> list[LabeledItem]:
        return self.train + self.validation + self.test


def load_dir(root: str | Path) -> list[LabeledItem]:
    """One item per image file under root/control and root/patient, in
    deterministic lexicographic order of the relative path."""
    root = Path(root)
    items: list[LabeledItem] = []
    for label, class_dir in enumerate(CLASS_DIRS):
        base = root / class_dir
        if not base.is_dir():
            raise MissingClassDir(f"{root} lacks a {class_dir}/ directory")
        files = sorted(
            (p for p in base.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES),
            key=lambda p: p.relative_to(root).as_posix(),
        )
        if not files:
            raise EmptyClass(f"{base} contains no {'/'.join(IMAGE_SUFFIXES)} files")
        for path in files:
            items.append(
                LabeledItem(
                    image=load_image(path),
                    label=label,
                    source_id=path.relative_to(root).as_posix(),
                )
            )
    return items


# ---------------------------------------------------------------------------
# synthetic loop traces


@dataclass
class SynthConfig:
    count_per_class: int = 120
    loops: int = 4
    tremor_amplitude_patient: float = 1.5
    tremor_amplitude_control: float = 0.2
    height_shrink_patient: float = 0.85
    height_shrink_control: float = 1.0
    baseline_drift_deg_patient: float = 3.0
    baseline_drift_deg_control: float = 0.5
    stroke_width: float = 2.0
    seed: int = 0
    width: int = 128
    height: int = 128

    def __post_init__(self):
        if self.count_per_class < 1:
            raise BadConfig("count_per_class must be >= 1")
        if self.loops < 1:
            raise BadConfig("loops must be >= 1")
        for name in ("tremor_amplitude_patient", "tremor_amplitude_control"):
            if getattr(self, name) < 0:
                raise BadConfig(f"{name} must be >= 0")
        for name in ("height_shrink_patient", "height_shrink_control"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise BadConfig(f"{name} must lie in (0, 1]")
        for name in ("baseline_drift_deg_patient", "baseline_drift_deg_control"):
            if not 0.0 <= getattr(self, name) < 45.0:
                raise BadConfig(f"{name} must lie in [0, 45)")
        if self.stroke_width <= 0:
            raise BadConfig("stroke_width must be > 0")
        if self.width < 32 or self.height < 32:
            raise BadConfig("canvas must be at least 32x32")

    def class_params(self, label: int) -> tuple[float, float, float]:
        if label == PATIENT:
            return (
                self.tremor_amplitude_patient,
                self.height_shrink_patient,
                self.baseline_drift_deg_patient,
            )
        return (
            self.tremor_amplitude_control,
            self.height_shrink_control,
            self.baseline_drift_deg_control,
        )

    def to_kv(self) -> dict:
        return {f.name: getattr(self, f.name) for f in self.__dataclass_fields__.values()}

    @classmethod
    def from_kv(cls, entries: dict[str, str]) -> "SynthConfig":
        kwargs = {}
        for name, spec in cls.__dataclass_fields__.items():
            if name in entries:
                cast = int if spec.type == "int" else float
                try:
                    kwargs[name] = cast(entries[name])
                except ValueError as exc:
                    raise BadConfig(f"bad value for {name}: {entries[name]!r}") from exc
        return cls(**kwargs)

    def save(self, path) -> None:
        write_kv(path, self.to_kv())

    @classmethod
    def load(cls, path) -> "SynthConfig":
        return cls.from_kv(read_kv(path))


def _smooth_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    raw = rng.standard_normal(n)
    taps = np.exp(-0.5 * (np.arange(-20, 21) / 6.0) ** 2)
    smooth = np.convolve(raw, taps / taps.sum(), mode="same")
    std = smooth.std()
    return smooth / std if std > 0 else smooth


def _render_trace(cfg: SynthConfig, rng: np.random.Generator, label: int) -> Image:
    tremor, shrink, drift_deg = cfg.class_params(label)
    w, h = cfg.width, cfg.height
    sx, sy = w / 128.0, h / 128.0
    samples = int(1400 * max(sx, sy, 1.0))
    t = np.linspace(0.0, 1.0, samples)

    x_start = 20.0 * sx + rng.uniform(-2.0, 2.0) * sx
    x_end = 102.0 * sx + rng.uniform(-2.0, 2.0) * sx
    y_center = h / 2.0 + rng.uniform(-2.0, 2.0) * sy
    loop_radius = 11.0 * sx * (1.0 + rng.uniform(-0.08, 0.08))
    phase = rng.uniform(-0.25, 0.25)
    half_height = 40.0 * sy * (1.0 + rng.uniform(-0.05, 0.05)) * shrink
    tilt = math.radians(drift_deg * (1.0 + rng.uniform(-0.2, 0.2)))

    turns = 2.0 * math.pi * cfg.loops * t
    xs = x_start + (x_end - x_start) * t + loop_radius * np.cos(turns + phase)
    drift = math.tan(tilt) * ((x_end - x_start) * (t - 0.5))
    ys = y_center + half_height * np.sin(turns) + drift + tremor * sy * _smooth_noise(rng, samples)

    canvas = np.ones((h, w))
    xi = np.rint(xs).astype(np.int64)
    yi = np.rint(ys).astype(np.int64)
    reach = int(math.ceil(cfg.stroke_width / 2.0))
    limit = (cfg.stroke_width / 2.0) ** 2
    for dy in range(-reach, reach + 1):
        for dx in range(-reach, reach + 1):
            if dy * dy + dx * dx <= limit:
                canvas[np.clip(yi + dy, 0, h - 1), np.clip(xi + dx, 0, w - 1)] = 0.0
    return Image(canvas)


def synth_generate(cfg: SynthConfig) -> list[LabeledItem]:
    """Balanced synthetic dataset; item i draws from the stream (seed, i)."""
    items: list[LabeledItem] = []
    for index in range(2 * cfg.count_per_class):
        label = CONTROL if index < cfg.count_per_class else PATIENT
        rng = np.random.default_rng([cfg.seed, index])
        class_dir = CLASS_DIRS[label]
        local = index if label == CONTROL else index - cfg.count_per_class
        items.append(
            LabeledItem(
                image=_render_trace(cfg, rng, label),
                label=label,
                source_id=f"{class_dir}/synth_{local:04d}.png",
            )
        )
    return items


def save_items(items: list[LabeledItem], root: str | Path) -> None:
    root = Path(root)
    for item in items:
        path = root / item.source_id
        path.parent.mkdir(parents=True, exist_ok=True)
        save_image(item.image, path)


# ---------------------------------------------------------------------------
# stratified splitting


def stratified_split(
    items: list[LabeledItem],
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
    leak_free: bool = True,
) -> DatasetSplit:
    """Seeded per-class shuffle, then floor-rule partition (remainder to train).

    With leak_free, items sharing a source_id move as one unit so augmented
    variants can never straddle splits. Without it, every item is split
    independently and variants of one source may straddle splits.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise BadConfig("fractions must be three non-negative numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise BadConfig(f"fractions must sum to 1, got {sum(fractions)}")
    if not items:
        raise TooFewItems("cannot split an empty dataset")

    units_by_class: dict[int, list[list[LabeledItem]]] = {CONTROL: [], PATIENT: []}
    if leak_free:
        groups: dict[str, list[LabeledItem]] = {}
        for item in items:
            groups.setdefault(item.source_id, []).append(item)
        for source_id in sorted(groups):
            group = groups[source_id]
            if len({member.label for member in group}) != 1:
                raise BadConfig(f"source {source_id} carries conflicting labels")
            units_by_class[group[0].label].append(group)
    else:
        for item in items:
            units_by_class[item.label].append([item])

    for label, units in units_by_class.items():
        if sum(len(unit) for unit in units) < 10:
            raise TooFewItems(
                f"class {CLASS_DIRS[label]} has fewer than 10 items; cannot split"
            )

    train: list[LabeledItem] = []
    validation: list[LabeledItem] = []
    test: list[LabeledItem] = []
    for label in (CONTROL, PATIENT):
        units = units_by_class[label]
        order = np.random.default_rng([seed, label]).permutation(len(units))
        shuffled = [units[i] for i in order]
        n = len(shuffled)
        n_val = int(n * fractions[1])
        n_test = int(n * fractions[2])
        n_train = n - n_val - n_test
        for unit in shuffled[:n_train]:
            train.extend(unit)
        for unit in shuffled[n_train:n_train + n_val]:
            validation.extend(unit)
        for unit in shuffled[n_train + n_val:]:
            test.extend(unit)
    return DatasetSplit(train, validation, test, seed=seed, leak_free=leak_free)


# ---------------------------------------------------------------------------
# manifest: one tab-separated record per item


@dataclass(frozen=True)
class ManifestRecord:
    source_id: str
    label: int
    provenance: Provenance
    split: str


SPLIT_NAMES = ("train", "validation", "test")


def write_manifest(path: str | Path, split: DatasetSplit) -> None:
    lines = []
    for split_name, bucket in zip(SPLIT_NAMES, (split.train, split.validation, split.test)):
        for item in bucket:
            lines.append(f"{item.source_id}\t{item.label}\t{item.provenance}\t{split_name}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> list[ManifestRecord]:
    records = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise BadConfig(f"{path}:{lineno}: expected 4 tab-separated fields")
        source_id, label, provenance, split_name = parts
        if split_name not in SPLIT_NAMES:
            raise BadConfig(f"{path}:{lineno}: unknown split {split_name!r}")
        records.append(
            ManifestRecord(source_id, int(label), Provenance.parse(provenance), split_name)
        )
    return records


def materialize(records: list[ManifestRecord], root: str | Path) -> DatasetSplit:
    """Rebuild split items from a manifest: load each source image once and
    re-derive augmented variants from their recorded provenance."""
    root = Path(root)
    sources: dict[str, Image] = {}
    buckets: dict[str, list[LabeledItem]] = {name: [] for name in SPLIT_NAMES}
    for record in records:
        if record.source_id not in sources:
            sources[record.source_id] = load_image(root / record.source_id)
        image = sources[record.source_id]
        if record.provenance.kind == "shear":
            image = shear(image, record.provenance.angle)
        elif record.provenance.kind == "hflip":
            image = hflip(image)
        buckets[record.split].append(
            LabeledItem(image, record.label, record.source_id, record.provenance)
        )
    return DatasetSplit(
        buckets["train"], buckets["validation"], buckets["test"], seed=0, leak_free=True
    )
