"""Behaviour archive and k-nearest-neighbour novelty scoring"""

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.spatial.distance import cdist

from noveltyswarm.utils.errors import ConfigurationError
from noveltyswarm.utils.io import write_csv
from noveltyswarm.utils.logging import LoggerMixin


class ArchiveMode(str, Enum):
    """How descriptors enter the archive"""
    STOCHASTIC = "stochastic"
    THRESHOLD = "threshold"


class NoveltyConfig(BaseModel):
    """Novelty metric and archive parameters"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    k: int = Field(default=15, ge=1, description="Nearest neighbours averaged")
    p_add: float = Field(default=0.02, ge=0.0, le=1.0, description="Archive insertion probability")
    mode: ArchiveMode = Field(default=ArchiveMode.STOCHASTIC)
    max_size: Optional[int] = Field(default=None, ge=1, description="Archive cap; oldest evicted")
    # dynamic threshold rule
    initial_threshold: float = Field(default=1.0, gt=0.0)
    threshold_raise_count: int = Field(default=4, ge=0)
    threshold_raise_factor: float = Field(default=1.2, ge=1.0)
    threshold_stall_generations: int = Field(default=5, ge=1)
    threshold_lower_factor: float = Field(default=0.95, gt=0.0, le=1.0)


def as_descriptor(values: Any) -> np.ndarray:
    """Coerce to a 1-D float vector"""
    return np.asarray(values, dtype=float).reshape(-1)


def distance(a: Any, b: Any) -> float:
    """Euclidean distance between two behaviour descriptors"""
    a, b = as_descriptor(a), as_descriptor(b)
    if a.shape != b.shape:
        raise ConfigurationError("descriptor length mismatch", [f"{a.size} vs {b.size}"])
    return float(np.linalg.norm(a - b))


def sparseness(x: Any, reference: Any, k: int) -> float:
    """Mean distance to the k nearest reference descriptors (all of them if fewer)"""
    x = as_descriptor(x)
    reference = np.asarray(reference, dtype=float)
    if reference.size == 0:
        return 0.0
    reference = reference.reshape(-1, x.size) if reference.ndim == 1 else reference
    if reference.shape[1] != x.size:
        raise ConfigurationError("descriptor length mismatch", [f"{x.size} vs {reference.shape[1]}"])
    distances = cdist(x[None, :], reference)[0]
    n = min(k, distances.size)
    return float(np.partition(distances, n - 1)[:n].mean())


@dataclass
class Archive(LoggerMixin):
    """Append-only store of past descriptors"""
    config: NoveltyConfig = field(default_factory=NoveltyConfig)
    descriptors: List[np.ndarray] = field(default_factory=list)
    generations: List[int] = field(default_factory=list)
    threshold: Optional[float] = None
    stalled_generations: int = 0

    def __post_init__(self):
        if self.threshold is None:
            self.threshold = self.config.initial_threshold

    def __len__(self) -> int:
        return len(self.descriptors)

    def matrix(self, width: int) -> np.ndarray:
        if not self.descriptors:
            return np.empty((0, width))
        return np.vstack(self.descriptors)

    def add(self, descriptor: Any, generation: int) -> None:
        descriptor = as_descriptor(descriptor)
        if self.descriptors and descriptor.size != self.descriptors[0].size:
            raise ConfigurationError("descriptor length mismatch", [f"{descriptor.size} vs {self.descriptors[0].size}"])
        self.descriptors.append(descriptor.copy())
        self.generations.append(int(generation))
        if self.config.max_size is not None and len(self.descriptors) > self.config.max_size:
            del self.descriptors[0]
            del self.generations[0]

    def insert_generation(self, descriptors: np.ndarray, novelty: np.ndarray, generation: int,
                          rng: np.random.Generator, config: Optional[NoveltyConfig] = None) -> int:
        """Archive this generation's descriptors according to the configured rule"""
        if config is not None:
            self.config = config
        if self.config.mode is ArchiveMode.STOCHASTIC:
            chosen = np.flatnonzero(rng.random(len(descriptors)) < self.config.p_add)
        else:
            chosen = np.flatnonzero(novelty > self.threshold)
        for i in chosen:
            self.add(descriptors[i], generation)
        if self.config.mode is ArchiveMode.THRESHOLD:
            self._adapt_threshold(len(chosen))
        return len(chosen)

    def _adapt_threshold(self, added: int) -> None:
        if added > self.config.threshold_raise_count:
            self.threshold *= self.config.threshold_raise_factor
        if added == 0:
            self.stalled_generations += 1
            if self.stalled_generations >= self.config.threshold_stall_generations:
                self.threshold *= self.config.threshold_lower_factor
                self.stalled_generations = 0
        else:
            self.stalled_generations = 0

    def export_csv(self, path: Path) -> Path:
        """One descriptor per line: generation of insertion, then values"""
        width = self.descriptors[0].size if self.descriptors else 0
        header = ["generation"] + [f"b{i}" for i in range(width)]
        rows = ([g] + [float(v) for v in d] for g, d in zip(self.generations, self.descriptors))
        return write_csv(path, header, rows)

    def to_state(self) -> Dict[str, Any]:
        return {
            "descriptors": [[float(v) for v in d] for d in self.descriptors],
            "generations": list(self.generations),
            "threshold": self.threshold,
            "stalled_generations": self.stalled_generations,
        }

    @classmethod
    def from_state(cls, state: Dict[str, Any], config: NoveltyConfig) -> "Archive":
        return cls(
            config=config,
            descriptors=[np.asarray(d, dtype=float) for d in state["descriptors"]],
            generations=[int(g) for g in state["generations"]],
            threshold=state["threshold"],
            stalled_generations=int(state["stalled_generations"]),
        )


def population_novelty(descriptors: np.ndarray, archive_matrix: np.ndarray, k: int) -> np.ndarray:
    """Sparseness of each row against the other rows plus the archive"""
    n = descriptors.shape[0]
    if n == 0:
        return np.zeros(0)
    within = cdist(descriptors, descriptors)
    np.fill_diagonal(within, np.inf)
    if archive_matrix.shape[0]:
        distances = np.hstack([within, cdist(descriptors, archive_matrix)])
    else:
        distances = within
    available = n - 1 + archive_matrix.shape[0]
    if available == 0:
        return np.zeros(n)
    m = min(k, available)
    nearest = np.partition(distances, m - 1, axis=1)[:, :m]
    return nearest.mean(axis=1)


def score_generation(descriptors: Sequence[Any], archive: Archive, config: NoveltyConfig,
                     rng: np.random.Generator, generation: int = 0) -> Tuple[np.ndarray, Archive]:
    """Novelty of every individual, then archive insertion (single writer)"""
    matrix = np.asarray(descriptors, dtype=float)
    if matrix.ndim != 2:
        raise ConfigurationError("descriptors must form a 2-D array")
    if len(archive) and archive.descriptors[0].size != matrix.shape[1]:
        raise ConfigurationError(
            "descriptor length mismatch", [f"archive {archive.descriptors[0].size} vs {matrix.shape[1]}"]
        )
    scores = population_novelty(matrix, archive.matrix(matrix.shape[1]), config.k)
    added = archive.insert_generation(matrix, scores, generation, rng, config)
    archive.logger.debug("Novelty scored", generation=generation, added=added, archive_size=len(archive))
    return scores, archive
