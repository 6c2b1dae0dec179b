"""
Embedding step - appearance vectors per detection, from a precomputed file or
generated deterministically for synthetic runs.

Vectors are NOT renormalized on load. Cosine similarity downstream ignores
magnitude, but GCN propagation sees raw values, so normalization is the
producer's job.
"""
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Protocol, Tuple

import numpy as np
import pandas as pd

from sinkhorn_tracker.utils import helper
from sinkhorn_tracker.utils.error_handler import (
    DataError, DimensionMismatchError, InputValidator, MissingEmbeddingError, ValidationError,
)

EmbeddingKey = Tuple[str, int, int]


@dataclass(frozen=True)
class AppearanceEmbedding:
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise ValidationError("embedding components must be finite", field="values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def cosine(self, other: "AppearanceEmbedding") -> float:
        norm = float(np.linalg.norm(self.values) * np.linalg.norm(other.values))
        if norm == 0.0:
            return 0.0
        return float(np.dot(self.values, other.values) / norm)


class EmbeddingProvider(Protocol):
    dim: int

    def get(self, sequence: str, frame: int, det_index: int) -> AppearanceEmbedding: ...


def get_embedding(provider: EmbeddingProvider, sequence: str, frame: int, det_index: int) -> AppearanceEmbedding:
    embedding = provider.get(sequence, frame, det_index)
    if embedding.dim != provider.dim:
        raise DimensionMismatchError(
            f"embedding for ({sequence}, {frame}, {det_index}) has dimension {embedding.dim}, "
            f"expected {provider.dim}", expected=provider.dim, actual=embedding.dim)
    return embedding


class FileEmbeddingProvider:
    """
    Text file: a `D,COUNT` header line, then one `sequence,frame,det_index,v1,...,vD`
    record per line. A key that is absent raises MissingEmbeddingError.
    """

    def __init__(self, path, expected_dim: Optional[int] = None):
        self.path = Path(path)
        self._vectors: Dict[EmbeddingKey, AppearanceEmbedding] = {}
        self.dim = self._load(expected_dim)

    def _load(self, expected_dim: Optional[int]) -> int:
        if not self.path.is_file():
            raise DataError(f"file not found: {self.path}", path=self.path)
        with self.path.open("r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if not lines or not lines[0].strip():
            raise DataError("missing 'D,COUNT' header", path=self.path, line=1)
        header = [p.strip() for p in lines[0].split(",")]
        try:
            dim, count = int(header[0]), int(header[1])
        except (ValueError, IndexError):
            raise DataError(f"malformed header {lines[0]!r}, expected 'D,COUNT'", path=self.path, line=1)
        if len(header) != 2 or dim < 1 or count < 0:
            raise DataError(f"malformed header {lines[0]!r}, expected 'D,COUNT'", path=self.path, line=1)
        if expected_dim is not None and dim != expected_dim:
            raise DimensionMismatchError(
                f"{self.path}: embeddings have dimension {dim}, config expects {expected_dim}",
                expected=expected_dim, actual=dim)

        records = 0
        for line_no, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            fields = [p.strip() for p in line.split(",")]
            if len(fields) != 3 + dim:
                raise DataError(f"expected {3 + dim} fields, got {len(fields)}", path=self.path, line=line_no)
            try:
                key = (fields[0], int(fields[1]), int(fields[2]))
                values = np.array([float(v) for v in fields[3:]], dtype=np.float64)
            except ValueError as e:
                raise DataError(f"unparseable record: {e}", path=self.path, line=line_no)
            if not np.all(np.isfinite(values)):
                raise DataError("non-finite embedding component", path=self.path, line=line_no)
            if key in self._vectors:
                raise DataError(f"duplicate key {key}", path=self.path, line=line_no)
            self._vectors[key] = AppearanceEmbedding(values)
            records += 1
        if records != count:
            raise DataError(f"header announces {count} records, file holds {records}", path=self.path)
        helper.log_json("INFO", "EMBEDDINGS_LOADED", path=str(self.path), dim=dim, count=records)
        return dim

    def __len__(self) -> int:
        return len(self._vectors)

    def get(self, sequence: str, frame: int, det_index: int) -> AppearanceEmbedding:
        key = (str(sequence), int(frame), int(det_index))
        try:
            return self._vectors[key]
        except KeyError:
            raise MissingEmbeddingError(key, path=self.path)


def write_embedding_file(path, records: Mapping[EmbeddingKey, np.ndarray]) -> Path:
    """Write records sorted by key in the format FileEmbeddingProvider reads."""
    path = Path(path)
    dims = {np.asarray(v).reshape(-1).shape[0] for v in records.values()}
    if len(dims) > 1:
        raise DimensionMismatchError(f"mixed embedding dimensions {sorted(dims)}", actual=sorted(dims))
    dim = dims.pop() if dims else 1
    rows = []
    for (sequence, frame, det_index), values in sorted(records.items()):
        rows.append([sequence, frame, det_index, *np.asarray(values, dtype=np.float64).reshape(-1).tolist()])
    frame = pd.DataFrame(rows)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"{dim},{len(rows)}\n")
        if rows:
            frame.to_csv(fh, header=False, index=False, float_format="%.17g", lineterminator="\n")
    return path


def _key_seed(*parts) -> int:
    digest = hashlib.blake2b("|".join(str(p) for p in parts).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def synthetic_identity_embedding(identity_id: int, noise_scale: float, rng_seed: int,
                                 dim: int) -> AppearanceEmbedding:
    """
    Unit-norm base vector that depends only on identity_id, plus Gaussian noise
    of scale noise_scale drawn from rng_seed. noise_scale = 0 returns the base
    vector itself.
    """
    noise_scale = InputValidator.validate_non_negative(noise_scale, "noise_scale")
    InputValidator.validate_positive_int(dim, "dim")
    base = np.random.default_rng([int(identity_id) & 0xFFFFFFFF, 0x5EED]).standard_normal(dim)
    base /= np.linalg.norm(base)
    if noise_scale == 0.0:
        return AppearanceEmbedding(base)
    noise = np.random.default_rng(int(rng_seed)).standard_normal(dim) * noise_scale
    return AppearanceEmbedding(base + noise)


class SyntheticEmbeddingProvider:
    """
    Deterministic per key. With an identity map (key -> identity id) every
    detection of an identity shares its base vector; unknown keys get a
    vector derived from the key itself.
    """

    def __init__(self, dim: int, identities: Optional[Mapping[EmbeddingKey, int]] = None,
                 noise_scale: float = 0.0, seed: int = 0):
        self.dim = InputValidator.validate_positive_int(dim, "dim")
        self.identities = dict(identities or {})
        self.noise_scale = InputValidator.validate_non_negative(noise_scale, "noise_scale")
        self.seed = seed

    def get(self, sequence: str, frame: int, det_index: int) -> AppearanceEmbedding:
        key = (str(sequence), int(frame), int(det_index))
        noise_seed = _key_seed(self.seed, *key)
        if key in self.identities:
            return synthetic_identity_embedding(self.identities[key], self.noise_scale, noise_seed, self.dim)
        values = np.random.default_rng(noise_seed).standard_normal(self.dim)
        return AppearanceEmbedding(values / np.linalg.norm(values))
