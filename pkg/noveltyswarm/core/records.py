"""Persisted run artifacts: manifest, per-generation records, checkpoints.

Directory layout of one experiment::

    <output_dir>/manifest.json
    <output_dir>/config.json
    <output_dir>/run_000/generations.csv
    <output_dir>/run_000/evaluations/gen_0000.csv
    <output_dir>/run_000/champions/gen_0000.txt
    <output_dir>/run_000/archive.csv
    <output_dir>/run_000/checkpoint.json
    <output_dir>/run_000/posteval.csv
"""

from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from noveltyswarm.core.analysis import EvaluatedIndividual
from noveltyswarm.core.neuroevo import Genome
from noveltyswarm.core.selection import ScoredIndividual
from noveltyswarm.core.tasks import EvaluationResult
from noveltyswarm.utils.errors import RunIncompleteError
from noveltyswarm.utils.io import atomic_write_text, read_csv, read_json, write_csv, write_json
from noveltyswarm.utils.logging import LoggerMixin

MANIFEST_NAME = "manifest.json"
CONFIG_NAME = "config.json"

GENERATION_FIELDS = [
    "generation", "best_fitness", "mean_fitness", "species", "archive_size",
    "mc", "champion_key", "champion_complexity", "diverged",
]


class RunStatus(str, Enum):
    PENDING = "pending"
    RUNNING = "running"
    COMPLETE = "complete"


class GenerationStats(BaseModel):
    """Summary of one generation of one run"""
    generation: int = Field(ge=0)
    best_fitness: float
    mean_fitness: float
    species: int = Field(ge=0)
    archive_size: int = Field(ge=0)
    mc: Optional[float] = None
    champion_key: int
    champion_complexity: int
    diverged: int = Field(default=0, ge=0, description="Evaluations scored 0 after divergence")

    def as_row(self) -> List[Any]:
        return [
            self.generation, self.best_fitness, self.mean_fitness, self.species, self.archive_size,
            "" if self.mc is None else self.mc, self.champion_key, self.champion_complexity, self.diverged,
        ]

    @classmethod
    def from_row(cls, row: Dict[str, str]) -> "GenerationStats":
        return cls(**{**row, "mc": row["mc"] or None})


class RunRecord(BaseModel):
    """Per-generation history of one run; generations are contiguous from 0"""
    run_index: int = Field(ge=0)
    seed: int
    generations: List[GenerationStats] = Field(default_factory=list)

    def best_curve(self) -> List[float]:
        return [g.best_fitness for g in self.generations]

    def append(self, stats: GenerationStats) -> None:
        if stats.generation != len(self.generations):
            raise ValueError(f"generation {stats.generation} breaks contiguity at {len(self.generations)}")
        self.generations.append(stats)


class RunEntry(BaseModel):
    index: int = Field(ge=0)
    seed: int
    status: RunStatus = RunStatus.PENDING
    completed_generations: int = Field(default=0, ge=0)
    path: str


class RunManifest(BaseModel):
    """Index of an experiment's runs and where their artifacts live"""
    schema_version: int = 1
    config_hash: str
    master_seed: int
    generations: int
    runs: List[RunEntry] = Field(default_factory=list)
    artifacts: Dict[str, str] = Field(default_factory=dict)
    created: str = Field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    @property
    def complete(self) -> bool:
        return all(r.status is RunStatus.COMPLETE for r in self.runs)

    def completed_runs(self) -> List[RunEntry]:
        return [r for r in self.runs if r.status is RunStatus.COMPLETE]


class ExperimentStore(LoggerMixin):
    """Reads and writes every artifact under one output directory"""

    def __init__(self, root: Path):
        self.root = Path(root)

    @classmethod
    def from_manifest_path(cls, path: Path) -> "ExperimentStore":
        path = Path(path)
        return cls(path.parent if path.suffix == ".json" else path)

    # manifest and config

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST_NAME

    @property
    def config_path(self) -> Path:
        return self.root / CONFIG_NAME

    def load_manifest(self) -> RunManifest:
        if not self.manifest_path.exists():
            raise RunIncompleteError(f"no manifest at {self.manifest_path}")
        return RunManifest.model_validate(read_json(self.manifest_path))

    def save_manifest(self, manifest: RunManifest) -> Path:
        return write_json(self.manifest_path, manifest.model_dump(mode="json"))

    # per run

    def run_dir(self, index: int) -> Path:
        return self.root / f"run_{index:03d}"

    def generations_path(self, index: int) -> Path:
        return self.run_dir(index) / "generations.csv"

    def evaluations_path(self, index: int, generation: int) -> Path:
        return self.run_dir(index) / "evaluations" / f"gen_{generation:04d}.csv"

    def champion_path(self, index: int, generation: int) -> Path:
        return self.run_dir(index) / "champions" / f"gen_{generation:04d}.txt"

    def checkpoint_path(self, index: int) -> Path:
        return self.run_dir(index) / "checkpoint.json"

    def archive_path(self, index: int) -> Path:
        return self.run_dir(index) / "archive.csv"

    def posteval_path(self, index: int) -> Path:
        return self.run_dir(index) / "posteval.csv"

    def write_generations(self, record: RunRecord) -> Path:
        return write_csv(self.generations_path(record.run_index), GENERATION_FIELDS,
                         (g.as_row() for g in record.generations))

    def load_record(self, entry: RunEntry) -> RunRecord:
        path = self.generations_path(entry.index)
        if not path.exists():
            return RunRecord(run_index=entry.index, seed=entry.seed)
        record = RunRecord(run_index=entry.index, seed=entry.seed)
        for row in read_csv(path):
            record.append(GenerationStats.from_row(row))
        return record

    def write_evaluations(self, index: int, generation: int, genomes: Sequence[Genome],
                          results: Sequence[EvaluationResult], scored: Sequence[ScoredIndividual]) -> Path:
        """Per-individual dump: key, fitness, novelty, score, complexity, descriptor, trial fitnesses"""
        width = len(results[0].descriptor) if results else 0
        trials = len(results[0].trial_fitnesses) if results else 0
        header = (["genome", "fitness", "novelty", "score", "complexity", "diverged"]
                  + [f"b{i}" for i in range(width)] + [f"trial{i}" for i in range(trials)])
        rows = (
            [g.key, float(r.fitness), s.novelty, s.score, g.complexity, int(r.diverged)]
            + [float(v) for v in r.descriptor] + [float(f) for f in r.trial_fitnesses]
            for g, r, s in zip(genomes, results, scored)
        )
        return write_csv(self.evaluations_path(index, generation), header, rows)

    def load_evaluations(self, index: int, generation: int) -> List[Dict[str, str]]:
        path = self.evaluations_path(index, generation)
        if not path.exists():
            raise RunIncompleteError(f"missing evaluations for run {index} generation {generation}")
        return read_csv(path)

    def load_descriptors(self, index: int, generation: int) -> np.ndarray:
        rows = self.load_evaluations(index, generation)
        if not rows:
            return np.zeros((0, 0))
        keys = sorted((k for k in rows[0] if k.startswith("b") and k[1:].isdigit()), key=lambda k: int(k[1:]))
        return np.array([[float(row[k]) for k in keys] for row in rows])

    def load_individuals(self, entry: RunEntry, generations: int) -> List[EvaluatedIndividual]:
        individuals = []
        for g in range(generations):
            for row in self.load_evaluations(entry.index, g):
                individuals.append(EvaluatedIndividual(g, float(row["fitness"]), int(row["complexity"])))
        return individuals

    def write_champion(self, index: int, generation: int, genome: Genome) -> Path:
        return atomic_write_text(self.champion_path(index, generation), genome.to_text())

    def load_champion(self, index: int, generation: int) -> Genome:
        path = self.champion_path(index, generation)
        if not path.exists():
            raise RunIncompleteError(f"missing champion for run {index} generation {generation}")
        return Genome.from_text(path.read_text(encoding="utf-8"))

    def write_checkpoint(self, index: int, state: Dict[str, Any]) -> Path:
        path = write_json(self.checkpoint_path(index), state)
        self.logger.debug("Checkpoint written", run=index, generation=state.get("generation"))
        return path

    def load_checkpoint(self, index: int) -> Optional[Dict[str, Any]]:
        path = self.checkpoint_path(index)
        return read_json(path) if path.exists() else None
