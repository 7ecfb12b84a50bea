"""Embedding study: export, 2-D projection, cluster quality, novelty.

Embeddings are taken from the encoder in eval mode, flattened row-major
over (height, width, channel), and handled as a table of
(source_id, family_id, vector) rows with a documented CSV form. The 2-D
projection is a native, deterministic PCA; an external projector command
can be substituted for nonlinear views. Cluster quality is the mean
silhouette over families, and novelty scoring compares a query embedding
against per-family centroid-distance thresholds derived purely from the
reference table.
"""

from __future__ import annotations

import csv
import io
import shlex
import subprocess
from dataclasses import dataclass

import numpy as np

from .dataset import LabeledCorpus
from .errors import (
    BadSpec,
    DegenerateLabels,
    EmptyCorpus,
    EmptyReference,
    ExternalToolFailure,
    TooFewRows,
)
from .model import ModelParams, encoder_forward


@dataclass
class EmbeddingTable:
    """One flattened embedding row per sample."""

    source_ids: list[str]
    family_ids: np.ndarray  # (n,) int64
    values: np.ndarray  # (n, d) float64

    def __len__(self) -> int:
        return len(self.source_ids)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["source_id", "family_id"] + [f"e{i:04d}" for i in range(self.dim)]
            )
            for sid, fid, row in zip(self.source_ids, self.family_ids, self.values):
                writer.writerow([sid, int(fid)] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "EmbeddingTable":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[:2] != ["source_id", "family_id"]:
                raise BadSpec(f"{path}: embedding CSV must start with source_id,family_id")
            dim = len(header) - 2
            if dim < 1 or header[2:] != [f"e{i:04d}" for i in range(dim)]:
                raise BadSpec(f"{path}: embedding columns must be e0000..e{dim - 1:04d}")
            source_ids, family_ids, rows = [], [], []
            for record in reader:
                if not record:
                    continue
                if len(record) != dim + 2:
                    raise BadSpec(f"{path}: row with {len(record)} fields, expected {dim + 2}")
                source_ids.append(record[0])
                family_ids.append(int(record[1]))
                rows.append([float(v) for v in record[2:]])
        return cls(
            source_ids,
            np.array(family_ids, dtype=np.int64),
            np.array(rows, dtype=np.float64).reshape(len(rows), dim),
        )


@dataclass
class Projection2D:
    """2-D coordinates per sample plus the projection method tag."""

    source_ids: list[str]
    family_ids: np.ndarray
    xy: np.ndarray  # (n, 2) float64
    method: str

    def __len__(self) -> int:
        return len(self.source_ids)

    def to_csv(self, path_or_fh) -> None:
        if hasattr(path_or_fh, "write"):
            self._write(path_or_fh)
        else:
            with open(path_or_fh, "w", newline="", encoding="utf-8") as fh:
                self._write(fh)

    def _write(self, fh) -> None:
        writer = csv.writer(fh)
        writer.writerow(["source_id", "family_id", "x", "y"])
        for sid, fid, (x, y) in zip(self.source_ids, self.family_ids, self.xy):
            writer.writerow([sid, int(fid), repr(float(x)), repr(float(y))])

    @classmethod
    def from_csv_text(cls, text: str, method: str) -> "Projection2D":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != ["source_id", "family_id", "x", "y"]:
            raise BadSpec(f"projection CSV header must be source_id,family_id,x,y, got {header}")
        source_ids, family_ids, coords = [], [], []
        for record in reader:
            if not record:
                continue
            source_ids.append(record[0])
            family_ids.append(int(record[1]))
            coords.append((float(record[2]), float(record[3])))
        return cls(
            source_ids,
            np.array(family_ids, dtype=np.int64),
            np.array(coords, dtype=np.float64).reshape(len(coords), 2),
            method,
        )

    @classmethod
    def from_csv(cls, path, method: str = "file") -> "Projection2D":
        with open(path, encoding="utf-8") as fh:
            return cls.from_csv_text(fh.read(), method)


def export_embeddings(
    params: ModelParams, corpus: LabeledCorpus, batch_size: int = 64
) -> EmbeddingTable:
    """Eval-mode encoder embeddings, flattened (h, w, c) row-major per sample."""
    if len(corpus) == 0:
        raise EmptyCorpus("export_embeddings needs a nonempty corpus")
    images = corpus.images(params.dtype)
    chunks = []
    for lo in range(0, len(corpus), batch_size):
        emb = encoder_forward(params, images[lo : lo + batch_size], "eval")
        chunks.append(emb.reshape(emb.shape[0], -1).astype(np.float64))
    return EmbeddingTable(
        [s.source_id for s in corpus.samples],
        corpus.labels(),
        np.concatenate(chunks, axis=0),
    )


# ----------------------------------------------------------------------------
# 2-D projection
# ----------------------------------------------------------------------------


def pca_2d(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Top-2 principal axes of the row-centered data and the coordinates.

    Component signs are fixed by making each component's largest-magnitude
    loading positive, so the projection is deterministic.
    """
    centered = values - values.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2].copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return components, centered @ components.T


def project_2d(
    table: EmbeddingTable, method: str = "pca", command: str | None = None
) -> Projection2D:
    """Project the table to 2-D natively (pca) or via an external command.

    The external projector receives the embedding CSV on stdin and must
    print a projection CSV (source_id,family_id,x,y) on stdout; a nonzero
    exit or a malformed/mismatched output is an ExternalToolFailure.
    """
    if len(table) < 3:
        raise TooFewRows(f"projection needs >= 3 rows, got {len(table)}")
    if method == "pca":
        _, coords = pca_2d(table.values)
        return Projection2D(list(table.source_ids), table.family_ids.copy(), coords, "pca")
    if method != "external":
        raise BadSpec(f"projection method must be pca or external, got {method!r}")
    if not command:
        raise BadSpec("external projection needs a projector command")

    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(["source_id", "family_id"] + [f"e{i:04d}" for i in range(table.dim)])
    for sid, fid, row in zip(table.source_ids, table.family_ids, table.values):
        writer.writerow([sid, int(fid)] + [repr(float(v)) for v in row])

    proc = subprocess.run(
        shlex.split(command),
        input=buffer.getvalue(),
        capture_output=True,
        text=True,
    )
    if proc.returncode != 0:
        raise ExternalToolFailure(command, proc.returncode, proc.stderr)
    try:
        projection = Projection2D.from_csv_text(proc.stdout, "external")
    except (BadSpec, ValueError) as exc:
        raise ExternalToolFailure(command, 0, f"unparseable output: {exc}") from exc
    if len(projection) != len(table):
        raise ExternalToolFailure(
            command, 0, f"row count {len(projection)} != input {len(table)}"
        )
    return projection


# ----------------------------------------------------------------------------
# Cluster quality
# ----------------------------------------------------------------------------


def cluster_quality(table: EmbeddingTable) -> float:
    """Mean silhouette over all rows, Euclidean distance, families as labels.

    Zero-variance pairs (a == b == 0) contribute 0 by convention.
    """
    labels = table.family_ids
    present, counts = np.unique(labels, return_counts=True)
    if len(present) < 2:
        raise DegenerateLabels(f"silhouette needs >= 2 families, got {len(present)}")
    if counts.min() < 2:
        tiny = present[counts.argmin()]
        raise DegenerateLabels(f"family {tiny} has {counts.min()} row(s), need >= 2")

    x = table.values
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    dist = np.sqrt(np.clip(d2, 0.0, None))

    n = len(table)
    scores = np.zeros(n)
    for i in range(n):
        own = labels == labels[i]
        a = dist[i, own].sum() / (own.sum() - 1)
        b = min(dist[i, labels == other].mean() for other in present if other != labels[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


# ----------------------------------------------------------------------------
# Novelty
# ----------------------------------------------------------------------------


@dataclass
class NoveltyRow:
    """Distance of one query to its nearest family centroid and the verdict."""

    distance: float
    nearest_family: int
    threshold: float
    novel: bool


@dataclass
class FamilyThresholds:
    """Per-family centroids and member-distance percentiles (reference-only)."""

    family_ids: np.ndarray  # (f,)
    centroids: np.ndarray  # (f, d)
    thresholds: np.ndarray  # (f,)


def family_thresholds(reference: EmbeddingTable, percentile: float = 95.0) -> FamilyThresholds:
    """Centroid and member-distance percentile per family in the reference."""
    if len(reference) == 0:
        raise EmptyReference("reference embedding table is empty")
    present = np.unique(reference.family_ids)
    centroids = np.zeros((len(present), reference.dim))
    thresholds = np.zeros(len(present))
    for k, fid in enumerate(present):
        members = reference.values[reference.family_ids == fid]
        centroids[k] = members.mean(axis=0)
        dists = np.linalg.norm(members - centroids[k], axis=1)
        thresholds[k] = np.percentile(dists, percentile)
    return FamilyThresholds(present, centroids, thresholds)


def novelty_score(
    reference: EmbeddingTable | FamilyThresholds,
    query: np.ndarray,
    percentile: float = 95.0,
) -> NoveltyRow:
    """Score one query embedding against the reference families.

    The query is assigned to its nearest family centroid and flagged novel
    when its distance exceeds that family's member-distance percentile.
    Thresholds depend only on the reference, never on queries.
    """
    ref = (
        reference
        if isinstance(reference, FamilyThresholds)
        else family_thresholds(reference, percentile)
    )
    flat = np.asarray(query, dtype=np.float64).ravel()
    if flat.shape[0] != ref.centroids.shape[1]:
        raise BadSpec(
            f"query has {flat.shape[0]} values, reference embeddings have "
            f"{ref.centroids.shape[1]}"
        )
    dists = np.linalg.norm(ref.centroids - flat[None, :], axis=1)
    k = int(np.argmin(dists))
    distance = float(dists[k])
    threshold = float(ref.thresholds[k])
    return NoveltyRow(
        distance=distance,
        nearest_family=int(ref.family_ids[k]),
        threshold=threshold,
        novel=distance > threshold,
    )


def novelty_report(
    reference: EmbeddingTable, queries: np.ndarray, percentile: float = 95.0
) -> list[NoveltyRow]:
    """Score a batch of query embeddings with one shared threshold table."""
    ref = family_thresholds(reference, percentile)
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim == 1:
        queries = queries[None, :]
    return [novelty_score(ref, q, percentile) for q in queries.reshape(queries.shape[0], -1)]
