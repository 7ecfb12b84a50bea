"""Labeled image corpora: loading, splitting, synthesis, and caching.

A corpus is a flat list of (image, family_id, source_id) samples plus the
alphabetical family-name table that defines the id space. This module
loads corpora from a `path,family` CSV manifest, splits them 90/10 per
family so every family lands in the test set, generates a synthetic
desk-scale corpus with family-distinctive byte textures, and round-trips
corpora through a binary cache directory.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadSpec,
    EmptyCorpus,
    FamilyTooSmall,
    MissingFile,
    ShapeMismatch,
    UnknownFamily,
)
from .preprocess import IMAGE_SIZE, ByteStream, binary_to_image

CACHE_MAGIC = b"BIMG"
CACHE_INDEX = "index.json"


@dataclass
class LabeledSample:
    """One grayscale image with its family label and provenance string."""

    image: np.ndarray
    family_id: int
    source_id: str


@dataclass
class LabeledCorpus:
    """Samples plus the family-name table that defines the label space."""

    samples: list[LabeledSample] = field(default_factory=list)
    family_names: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def family_count(self) -> int:
        return len(self.family_names)

    def validate(self) -> None:
        """Check label range and source_id uniqueness; raise BadSpec on violation."""
        seen: set[str] = set()
        for sample in self.samples:
            if not 0 <= sample.family_id < self.family_count:
                raise BadSpec(
                    f"family_id {sample.family_id} out of range "
                    f"[0, {self.family_count}) for {sample.source_id!r}"
                )
            if sample.source_id in seen:
                raise BadSpec(f"duplicate source_id {sample.source_id!r}")
            seen.add(sample.source_id)

    def images(self, dtype=np.float64) -> np.ndarray:
        """Stack all images into an (n, h, w) array."""
        if not self.samples:
            raise EmptyCorpus("corpus has no samples")
        return np.stack([s.image for s in self.samples]).astype(dtype, copy=False)

    def labels(self) -> np.ndarray:
        return np.array([s.family_id for s in self.samples], dtype=np.int64)

    def family_sizes(self) -> list[int]:
        counts = [0] * self.family_count
        for sample in self.samples:
            counts[sample.family_id] += 1
        return counts


@dataclass
class SplitSpec:
    """Train/test split parameters: per-family fraction and shuffle seed."""

    train_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.train_fraction < 1.0:
            raise BadSpec(f"train_fraction must be in (0,1), got {self.train_fraction}")


def load_corpus(root_path, manifest_path, size: int = IMAGE_SIZE) -> LabeledCorpus:
    """Build a corpus from a CSV manifest of `path,family` rows.

    Paths are resolved relative to root_path unless absolute. Families are
    indexed alphabetically by name so ids do not depend on manifest order.
    Raises MissingFile for unreadable paths and UnknownFamily for rows with
    an empty family name; EmptyInput propagates from zero-length files.
    """
    root = Path(root_path)
    rows: list[tuple[str, str]] = []
    with open(manifest_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["path", "family"]:
            raise BadSpec(f"manifest header must be 'path,family', got {reader.fieldnames}")
        for row in reader:
            rows.append((row["path"].strip(), (row["family"] or "").strip()))

    for path_str, family in rows:
        if not family:
            raise UnknownFamily(path_str)

    family_names = sorted({family for _, family in rows})
    index = {name: i for i, name in enumerate(family_names)}

    samples: list[LabeledSample] = []
    for path_str, family in rows:
        path = Path(path_str)
        if not path.is_absolute():
            path = root / path
        if not path.is_file():
            raise MissingFile(str(path))
        data = path.read_bytes()
        image = binary_to_image(ByteStream(data, source_id=path_str), size)
        samples.append(LabeledSample(image, index[family], path_str))

    corpus = LabeledCorpus(samples, family_names)
    corpus.validate()
    return corpus


def stratified_split(
    corpus: LabeledCorpus, spec: SplitSpec
) -> tuple[LabeledCorpus, LabeledCorpus]:
    """Split per family: floor(fraction*n) to train, clamped so both sides get >= 1.

    Within each family the assignment order is shuffled by the seed; the two
    halves partition the corpus exactly and every family appears in the test
    set. Families with fewer than 2 samples raise FamilyTooSmall.
    """
    by_family: dict[int, list[int]] = {fid: [] for fid in range(corpus.family_count)}
    for pos, sample in enumerate(corpus.samples):
        by_family[sample.family_id].append(pos)

    for fid, positions in by_family.items():
        if len(positions) < 2:
            raise FamilyTooSmall(corpus.family_names[fid], len(positions))

    rng = np.random.default_rng(spec.seed)
    train_pos: list[int] = []
    test_pos: list[int] = []
    for fid in range(corpus.family_count):
        positions = np.array(by_family[fid])
        order = rng.permutation(len(positions))
        n = len(positions)
        n_train = min(max(int(np.floor(spec.train_fraction * n)), 1), n - 1)
        train_pos.extend(positions[order[:n_train]].tolist())
        test_pos.extend(positions[order[n_train:]].tolist())

    train_pos.sort()
    test_pos.sort()
    train = LabeledCorpus([corpus.samples[i] for i in train_pos], list(corpus.family_names))
    test = LabeledCorpus([corpus.samples[i] for i in test_pos], list(corpus.family_names))
    return train, test


# ----------------------------------------------------------------------------
# Synthetic corpus
# ----------------------------------------------------------------------------

# Family texture generators cycle through these five base styles; each family
# additionally draws its own parameters so two families sharing a style still
# differ (distinct motif bytes, periods, palettes, and so on).
_STYLE_COUNT = 5


def _gen_periodic(param_rng: np.random.Generator):
    """Fixed repeating byte motif; renders as vertical banding."""
    motif = param_rng.integers(0, 256, size=int(param_rng.integers(16, 65)), dtype=np.uint8)

    def make(length: int, rng: np.random.Generator) -> np.ndarray:
        reps = length // len(motif) + 1
        out = np.tile(motif, reps)[:length].copy()
        return np.roll(out, int(rng.integers(0, len(motif))))

    return make


def _gen_blocks(param_rng: np.random.Generator):
    """Runs of constant bytes from a small family palette; blocky texture."""
    palette = param_rng.integers(0, 256, size=6, dtype=np.uint8)
    run = int(param_rng.integers(1_000, 5_000))

    def make(length: int, rng: np.random.Generator) -> np.ndarray:
        n_runs = length // run + 1
        levels = palette[rng.integers(0, len(palette), size=n_runs)]
        return np.repeat(levels, run)[:length].copy()

    return make


def _gen_ramps(param_rng: np.random.Generator):
    """Sawtooth with period slightly off the row width; diagonal stripes."""
    period = int(param_rng.integers(700, 950))
    gain = int(param_rng.integers(1, 4))

    def make(length: int, rng: np.random.Generator) -> np.ndarray:
        phase = int(rng.integers(0, period))
        idx = np.arange(length, dtype=np.int64) + phase
        return ((idx % period) * 255 * gain // period % 256).astype(np.uint8)

    return make


def _gen_waves(param_rng: np.random.Generator):
    """Quantized sinusoid; soft horizontal banding."""
    period = float(param_rng.uniform(3_000, 20_000))
    amp = float(param_rng.uniform(60, 120))

    def make(length: int, rng: np.random.Generator) -> np.ndarray:
        phase = float(rng.uniform(0, 2 * np.pi))
        idx = np.arange(length, dtype=np.float64)
        vals = 127.5 + amp * np.sin(2 * np.pi * idx / period + phase)
        return np.clip(np.rint(vals), 0, 255).astype(np.uint8)

    return make


def _gen_spikes(param_rng: np.random.Generator):
    """Dark background with bright bytes at a family-specific rate."""
    background = int(param_rng.integers(0, 40))
    rate = float(param_rng.uniform(0.01, 0.05))

    def make(length: int, rng: np.random.Generator) -> np.ndarray:
        out = np.full(length, background, dtype=np.uint8)
        hits = rng.random(length) < rate
        out[hits] = 255
        return out

    return make


_STYLES = [_gen_periodic, _gen_blocks, _gen_ramps, _gen_waves, _gen_spikes]

MIN_SYNTH_LENGTH = 200_000
MAX_SYNTH_LENGTH = 800_000
NOISE_RATE = 0.05


def synth_corpus(
    families: int,
    per_family: int,
    seed: int,
    size: int = IMAGE_SIZE,
) -> LabeledCorpus:
    """Generate a deterministic corpus of family-distinctive byte textures.

    Each family owns a texture generator (repeating motifs, block constants,
    diagonal ramps, sinusoids, sparse spikes) with family-specific parameters;
    each sample draws a random length in [200k, 800k] bytes, a random phase,
    and 5% uniformly random noise bytes. Identical seeds give byte-identical
    corpora.
    """
    if families < 2:
        raise BadSpec(f"families must be >= 2, got {families}")
    if per_family < 2:
        raise BadSpec(f"per_family must be >= 2, got {per_family}")

    family_seqs = np.random.SeedSequence(seed).spawn(families)
    samples: list[LabeledSample] = []
    family_names = [f"synth_{fid:03d}" for fid in range(families)]

    for fid in range(families):
        param_seq, *sample_seqs = family_seqs[fid].spawn(per_family + 1)
        make = _STYLES[fid % _STYLE_COUNT](np.random.default_rng(param_seq))
        for k in range(per_family):
            rng = np.random.default_rng(sample_seqs[k])
            length = int(rng.integers(MIN_SYNTH_LENGTH, MAX_SYNTH_LENGTH + 1))
            values = make(length, rng)
            noisy = rng.random(length) < NOISE_RATE
            values[noisy] = rng.integers(0, 256, size=int(noisy.sum()), dtype=np.uint8)
            source_id = f"{family_names[fid]}/{k:04d}"
            image = binary_to_image(ByteStream(values.tobytes(), source_id), size)
            samples.append(LabeledSample(image, fid, source_id))

    corpus = LabeledCorpus(samples, family_names)
    corpus.validate()
    return corpus


# ----------------------------------------------------------------------------
# Cache format: per-sample blobs ("BIMG", u32 height, u32 width, f32 LE rows)
# plus a JSON index naming each blob with its label and source_id.
# ----------------------------------------------------------------------------


def write_cache_blob(image: np.ndarray, path) -> None:
    if image.ndim != 2:
        raise ShapeMismatch(f"cache blobs are 2-D, got shape {image.shape}")
    h, w = image.shape
    payload = image.astype("<f4").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<II", h, w))
        fh.write(payload)


def read_cache_blob(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CACHE_MAGIC:
            raise BadSpec(f"{path}: bad magic {magic!r}, expected {CACHE_MAGIC!r}")
        h, w = struct.unpack("<II", fh.read(8))
        payload = fh.read(h * w * 4)
    if len(payload) != h * w * 4:
        raise BadSpec(f"{path}: truncated payload ({len(payload)} bytes for {h}x{w})")
    # float32 values are exactly representable in float64, so the cast keeps
    # cache round-trips bit-exact.
    return np.frombuffer(payload, dtype="<f4").reshape(h, w).astype(np.float64)


def save_cache(corpus: LabeledCorpus, cache_dir) -> None:
    """Write every sample as a blob plus an index.json; overwrites in place."""
    out = Path(cache_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, sample in enumerate(corpus.samples):
        name = f"sample_{i:06d}.bimg"
        write_cache_blob(sample.image, out / name)
        entries.append(
            {"file": name, "family_id": sample.family_id, "source_id": sample.source_id}
        )
    index = {"family_names": corpus.family_names, "samples": entries}
    with open(out / CACHE_INDEX, "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_cache(cache_dir) -> LabeledCorpus:
    root = Path(cache_dir)
    index_path = root / CACHE_INDEX
    if not index_path.is_file():
        raise MissingFile(str(index_path))
    with open(index_path, encoding="utf-8") as fh:
        index = json.load(fh)
    samples = []
    for entry in index["samples"]:
        blob = root / entry["file"]
        if not blob.is_file():
            raise MissingFile(str(blob))
        samples.append(
            LabeledSample(read_cache_blob(blob), entry["family_id"], entry["source_id"])
        )
    corpus = LabeledCorpus(samples, list(index["family_names"]))
    corpus.validate()
    return corpus
