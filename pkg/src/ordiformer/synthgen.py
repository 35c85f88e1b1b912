"""Procedural dataset: two bright bands separated by a grade-coded gap.

Every image shows a dark background, two bright horizontal bands, and a
dark gap between them whose width shrinks linearly with the grade; the
grade also adds small bright blobs at the band edges near the left and
right margins.  Band brightness varies per sample, standing in for
exposure variation.  At zero noise the gap width alone decides the
grade, so a pixel-rule classifier serves as an exact oracle and the
achievable accuracy is 1; under noise the low-exposure samples become
genuinely confusable between adjacent grades.  Geometry jitter and blob
placement are symmetric under horizontal flips, keeping flip
augmentation label-preserving.

Each sample draws from its own counter-keyed generator, so sample i is
identical no matter how many samples surround it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError

Array = np.ndarray

BACKGROUND = 0.05
BAND_RANGE = (0.50, 0.85)  # per-sample brightness, like exposure variation
BLOB = 0.95
EDGE_MARGIN = 3     # dark rows above/below the bands
CENTER_JITTER = 2   # max |offset| of the gap center, drawn per sample
BLOB_ZONE = (2, 8)  # column range (inclusive) for left-side blobs
PROFILE_HALF_WIDTH = 4   # center columns used by the rule classifier
BRIGHT_THRESHOLD = 0.45

IMBALANCED = (0.38, 0.18, 0.26, 0.13, 0.05)


@dataclass(frozen=True)
class SynthConfig:
    n_samples: int = 100
    height: int = 32
    width: int = 32
    num_grades: int = 5
    gap_base: int = 14
    gap_step: int = 3
    blobs_per_grade: int = 1
    noise_sigma: float = 0.0
    seed: int = 42
    proportions: tuple[float, ...] | None = None  # None -> uniform

    def __post_init__(self):
        if self.n_samples < 1:
            raise ConfigError("n_samples must be positive")
        if self.num_grades < 2:
            raise ConfigError("need at least two grades")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if self.blobs_per_grade < 0:
            raise ConfigError("blobs_per_grade must be non-negative")
        min_gap = self.gap_base - (self.num_grades - 1) * self.gap_step
        if self.gap_step < 1 or min_gap < 1:
            raise ConfigError(f"gap widths must stay positive (narrowest is {min_gap})")
        # both bands must keep at least 2 rows under the widest gap and
        # the worst jitter
        worst_top = self.height // 2 - CENTER_JITTER - self.gap_base // 2
        worst_bot = self.height // 2 + CENTER_JITTER - self.gap_base // 2 + self.gap_base
        if worst_top < EDGE_MARGIN + 2 or worst_bot > self.height - EDGE_MARGIN - 2:
            raise ConfigError(f"image height {self.height} too small for gap_base "
                              f"{self.gap_base} with jitter {CENTER_JITTER}")
        if self.width < 4 * PROFILE_HALF_WIDTH:
            raise ConfigError(f"image width {self.width} too small")
        if self.proportions is not None:
            p = np.asarray(self.proportions, dtype=np.float64)
            if p.shape != (self.num_grades,):
                raise ConfigError("proportions must have one entry per grade")
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
                raise ConfigError("proportions must be non-negative and sum to 1")

    def gap_width(self, grade: int) -> int:
        return self.gap_base - grade * self.gap_step

    @property
    def grade_widths(self) -> np.ndarray:
        return np.array([self.gap_width(g) for g in range(self.num_grades)])


@dataclass(frozen=True)
class Sample:
    sample_id: str
    label: int
    gap_width: int
    image: Array = field(repr=False)


@dataclass
class SynthDataset:
    samples: list[Sample]
    config: SynthConfig | None = None

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labels(self) -> Array:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    @property
    def images(self) -> list[Array]:
        return [s.image for s in self.samples]

    @property
    def ids(self) -> list[str]:
        return [s.sample_id for s in self.samples]


def apportion_labels(n: int, proportions, num_grades: int) -> Array:
    """Per-grade counts by largest remainder; ties go to the lower grade."""
    if proportions is None:
        p = np.full(num_grades, 1.0 / num_grades)
    else:
        p = np.asarray(proportions, dtype=np.float64)
    exact = p * n
    counts = np.floor(exact).astype(np.int64)
    frac = exact - counts
    leftover = n - int(counts.sum())
    order = sorted(range(num_grades), key=lambda c: (-frac[c], c))
    for c in order[:leftover]:
        counts[c] += 1
    return counts


def generate(config: SynthConfig) -> SynthDataset:
    counts = apportion_labels(config.n_samples, config.proportions, config.num_grades)
    labels = np.repeat(np.arange(config.num_grades), counts)
    samples = []
    for index, grade in enumerate(labels):
        image = render_sample(config, int(grade), index)
        width = config.gap_width(int(grade))
        samples.append(Sample(sample_id=f"{int(grade)}_{index:05d}", label=int(grade),
                              gap_width=width, image=image))
    return SynthDataset(samples=samples, config=config)


def render_sample(config: SynthConfig, grade: int, index: int) -> Array:
    """Render one image; keyed by (seed, index) so order never matters."""
    if grade < 0 or grade >= config.num_grades:
        raise ConfigError(f"grade {grade} out of range")
    rng = np.random.default_rng([config.seed, index])
    h, w = config.height, config.width
    img = np.full((h, w), BACKGROUND, dtype=np.float32)
    gap = config.gap_width(grade)
    band = rng.uniform(*BAND_RANGE)
    center = h // 2 + int(rng.integers(-CENTER_JITTER, CENTER_JITTER + 1))
    gap_top = center - gap // 2
    img[EDGE_MARGIN:gap_top] = band
    img[gap_top + gap:h - EDGE_MARGIN] = band
    for _ in range(grade * config.blobs_per_grade):
        side = int(rng.integers(0, 2))
        edge = int(rng.integers(0, 2))
        cx = int(rng.integers(BLOB_ZONE[0], BLOB_ZONE[1] + 1))
        if side == 1:
            cx = w - 1 - cx
        depth = int(rng.integers(0, 2))
        cy = gap_top - 1 - depth if edge == 0 else gap_top + gap + depth
        radius = int(rng.integers(1, 3))
        _paint_disc(img, cy, cx, radius)
    if config.noise_sigma > 0.0:
        img = img + rng.normal(0.0, config.noise_sigma, size=(h, w)).astype(np.float32)
        img = np.clip(img, 0.0, 1.0)
    return img


def _paint_disc(img: Array, cy: int, cx: int, radius: int) -> None:
    h, w = img.shape
    y0, y1 = max(0, cy - radius), min(h, cy + radius + 1)
    x0, x1 = max(0, cx - radius), min(w, cx + radius + 1)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
    img[y0:y1, x0:x1][mask] = BLOB


# ---------------------------------------------------------------------------
# rule-based oracle

def measure_gap_width(image: Array, config: SynthConfig) -> int:
    """Dark-run length between the bands, read from the center columns.

    The center columns are blob-free by construction, so at zero noise
    this recovers the rendered gap width exactly.
    """
    w = config.width
    c0 = w // 2 - PROFILE_HALF_WIDTH
    c1 = w // 2 + PROFILE_HALF_WIDTH + 1
    profile = image[:, c0:c1].mean(axis=1)
    bright = np.flatnonzero(profile > BRIGHT_THRESHOLD)
    if bright.size == 0:
        raise DataFormatError("no bright band found in image")
    inner = profile[bright[0]:bright[-1] + 1]
    return int(np.sum(inner <= BRIGHT_THRESHOLD))


def rule_grade(image: Array, config: SynthConfig) -> int:
    """Grade whose nominal gap width is nearest the measured one."""
    measured = measure_gap_width(image, config)
    return int(np.argmin(np.abs(config.grade_widths - measured)))


# ---------------------------------------------------------------------------
# PGM + label-table persistence

def write_pgm(path, image: Array) -> None:
    """8-bit binary PGM; values are clipped to [0,1] then scaled to 255."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> Array:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    tokens = []
    pos = 0
    while len(tokens) < 4 and pos < len(raw):
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise DataFormatError(f"{path}: not a binary PGM")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise DataFormatError(f"{path}: malformed PGM header") from exc
    if maxval != 255 or w < 1 or h < 1:
        raise DataFormatError(f"{path}: unsupported PGM (maxval {maxval})")
    pos += 1  # single whitespace byte after maxval
    body = raw[pos:pos + w * h]
    if len(body) != w * h:
        raise DataFormatError(f"{path}: truncated pixel data")
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(h, w)
    return (pixels.astype(np.float32) / 255.0)


def write_dataset(dataset: SynthDataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "labels.csv", "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label", "gap_width"])
        for s in dataset.samples:
            writer.writerow([s.sample_id, s.label, s.gap_width])
            write_pgm(out / f"{s.sample_id}.pgm", s.image)


def read_dataset(data_dir) -> SynthDataset:
    root = Path(data_dir)
    table = root / "labels.csv"
    if not table.is_file():
        raise DataFormatError(f"missing label table {table}")
    samples = []
    with open(table, "r", newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id", "label", "gap_width"]:
            raise DataFormatError(f"{table}: unexpected header {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise DataFormatError(f"{table}:{lineno}: expected 3 columns")
            sample_id = row[0]
            try:
                label, width = int(row[1]), int(row[2])
            except ValueError as exc:
                raise DataFormatError(f"{table}:{lineno}: non-integer field") from exc
            if label < 0:
                raise DataFormatError(f"{table}:{lineno}: negative label")
            image = read_pgm(root / f"{sample_id}.pgm")
            samples.append(Sample(sample_id=sample_id, label=label,
                                  gap_width=width, image=image))
    if not samples:
        raise DataFormatError(f"{table}: no samples listed")
    return SynthDataset(samples=samples, config=None)
