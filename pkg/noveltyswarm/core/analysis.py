"""Post-hoc analysis of finished runs.

Champion post-evaluation, highest-so-far fitness curves, Kohonen maps of
behaviour space, 2D behaviour densities, complexity-versus-fitness tables
and the cross-method comparisons used by the acceptance report. Everything
here is read-only over persisted records and returns plain arrays or small
dataclasses the runner serialises.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.spatial.distance import cdist
from scipy.stats import mannwhitneyu

from noveltyswarm.core.tasks import TaskConfig, TaskKind, evaluate
from noveltyswarm.core.neuroevo import Genome
from noveltyswarm.utils.errors import ConfigurationError
from noveltyswarm.utils.logging import get_logger
from noveltyswarm.utils.seeding import Stream, trial_seeds

logger = get_logger(__name__)

DEFAULT_LEVELS = {
    TaskKind.AGGREGATION: (0.60, 0.65, 0.70, 0.75, 0.80, 0.85),
    TaskKind.RESOURCE: (0.2, 0.4, 0.6, 0.8, 0.9),
}


def post_evaluate(genome: Genome, task: TaskConfig, n_trials: int, seed: int) -> float:
    """Mean fitness over ``n_trials`` independent single-trial evaluations"""
    if n_trials < 1:
        raise ConfigurationError("post-evaluation needs at least one trial", [f"n_trials={n_trials}"])
    seeds = trial_seeds(seed, 0, n_trials, Stream.POSTEVAL)
    fitnesses = [evaluate(genome, task, [s]).fitness for s in seeds]
    return float(np.mean(fitnesses))


def running_max(values: Sequence[float]) -> np.ndarray:
    return np.maximum.accumulate(np.asarray(values, dtype=float))


def fitness_trajectory(best_per_generation: Sequence[Sequence[float]]) -> np.ndarray:
    """Highest fitness found so far, averaged over runs, per generation"""
    if len(best_per_generation) == 0:
        return np.zeros(0)
    lengths = {len(run) for run in best_per_generation}
    if len(lengths) != 1:
        raise ConfigurationError("runs have different generation counts", [str(sorted(lengths))])
    return np.vstack([running_max(run) for run in best_per_generation]).mean(axis=0)


def best_per_run(best_per_generation: Sequence[Sequence[float]]) -> np.ndarray:
    """Highest fitness of each run (box-plot data)"""
    return np.array([max(run) if len(run) else 0.0 for run in best_per_generation], dtype=float)


@dataclass(frozen=True)
class Comparison:
    """One-sided Mann–Whitney U test: does ``a`` tend to exceed ``b``"""
    generation: int
    median_a: float
    median_b: float
    statistic: float
    p_value: float


def compare_methods(curves_a: Sequence[Sequence[float]], curves_b: Sequence[Sequence[float]],
                    generation: int) -> Comparison:
    """Compare highest-so-far fitness of two groups of runs at one generation"""
    a = np.array([running_max(run)[generation] for run in curves_a])
    b = np.array([running_max(run)[generation] for run in curves_b])
    if a.size == 0 or b.size == 0:
        raise ConfigurationError("both groups need at least one run")
    result = mannwhitneyu(a, b, alternative="greater")
    return Comparison(generation, float(np.median(a)), float(np.median(b)),
                      float(result.statistic), float(result.pvalue))


class SomConfig(BaseModel):
    """Rectangular Kohonen map and its linear training schedule"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    width: int = Field(default=10, ge=1)
    height: int = Field(default=10, ge=1)
    epochs: int = Field(default=50, ge=1)
    initial_learning_rate: float = Field(default=0.5, gt=0.0, le=1.0)
    final_learning_rate: float = Field(default=0.01, gt=0.0, le=1.0)
    initial_radius: Optional[float] = Field(default=None, gt=0.0, description="Defaults to max(w, h)/2")
    final_radius: float = Field(default=1.0, gt=0.0)
    samples_per_epoch: Optional[int] = Field(default=20_000, ge=1, description="Descriptors drawn per epoch; None uses all")
    batch_size: int = Field(default=32, ge=1, description="Descriptors per vectorised update")

    @model_validator(mode="after")
    def check_schedule(self) -> "SomConfig":
        if self.final_learning_rate > self.initial_learning_rate:
            raise ValueError("final_learning_rate must not exceed initial_learning_rate")
        return self

    @property
    def start_radius(self) -> float:
        return self.initial_radius if self.initial_radius is not None else max(self.width, self.height) / 2.0


@dataclass
class SomGrid:
    """Trained prototypes, row-major (cell = row·width + column)"""
    config: SomConfig
    prototypes: np.ndarray                       # (height·width, D)
    errors: List[float] = field(default_factory=list)

    @property
    def coordinates(self) -> np.ndarray:
        rows, cols = np.divmod(np.arange(self.config.width * self.config.height), self.config.width)
        return np.column_stack([rows, cols]).astype(float)

    def winners(self, descriptors: np.ndarray, chunk: int = 4096) -> np.ndarray:
        """Best matching cell per descriptor, computed in chunks"""
        data = np.atleast_2d(descriptors)
        winners = np.zeros(len(data), dtype=int)
        for i in range(0, len(data), chunk):
            winners[i:i + chunk] = np.argmin(cdist(data[i:i + chunk], self.prototypes, "sqeuclidean"), axis=1)
        return winners

    def to_dict(self) -> Dict[str, Any]:
        return {
            "width": self.config.width,
            "height": self.config.height,
            "prototypes": [[float(v) for v in p] for p in self.prototypes],
            "quantization_errors": [float(e) for e in self.errors],
        }


def quantization_error(grid: SomGrid, descriptors: np.ndarray) -> float:
    """Mean distance from each descriptor to its best matching prototype"""
    distances = cdist(np.atleast_2d(descriptors), grid.prototypes)
    return float(distances.min(axis=1).mean())


def _schedule(start: float, end: float, epoch: int, epochs: int) -> float:
    if epochs == 1:
        return start
    return start + (end - start) * epoch / (epochs - 1)


def train_som(descriptors: Any, config: SomConfig, seed: int) -> SomGrid:
    """SOM training with Gaussian neighbourhoods and linear decay.

    Each update averages the online rule over ``batch_size`` descriptors
    against the same prototypes; a batch of one is the classic online SOM.
    The quantization error is tracked on the descriptors drawn that epoch.
    """
    data = np.asarray(descriptors, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ConfigurationError("SOM training needs a non-empty 2-D descriptor array")
    rng = np.random.default_rng(seed)
    cells = config.width * config.height
    grid = SomGrid(config, data[rng.integers(0, len(data), size=cells)].copy())
    coords = grid.coordinates

    for epoch in range(config.epochs):
        rate = _schedule(config.initial_learning_rate, config.final_learning_rate, epoch, config.epochs)
        radius = _schedule(config.start_radius, config.final_radius, epoch, config.epochs)
        order = rng.permutation(len(data))
        if config.samples_per_epoch is not None:
            order = order[:config.samples_per_epoch]
        for start in range(0, len(order), config.batch_size):
            batch = data[order[start:start + config.batch_size]]
            winners = np.argmin(cdist(batch, grid.prototypes, "sqeuclidean"), axis=1)
            spread = cdist(coords[winners], coords, "sqeuclidean")
            influence = np.exp(-spread / (2.0 * radius * radius))          # (batch, cells)
            pull = influence.T @ batch - influence.sum(axis=0)[:, None] * grid.prototypes
            grid.prototypes += rate * pull / len(batch)
        grid.errors.append(quantization_error(grid, data[order]))

    logger.debug("SOM trained", cells=cells, samples=len(data), final_error=grid.errors[-1])
    return grid


@dataclass
class BehaviourMap:
    """Per-cell occupancy of a SOM"""
    counts: np.ndarray          # (height, width)
    mean_fitness: np.ndarray    # (height, width); NaN for empty cells

    def to_dict(self) -> Dict[str, Any]:
        return {
            "counts": self.counts.astype(int).tolist(),
            "mean_fitness": [[None if np.isnan(v) else float(v) for v in row] for row in self.mean_fitness],
        }


def map_behaviours(grid: SomGrid, descriptors: Any, fitnesses: Optional[Sequence[float]] = None) -> BehaviourMap:
    """Assign each descriptor to its nearest prototype; count and average fitness per cell"""
    data = np.atleast_2d(np.asarray(descriptors, dtype=float))
    shape = (grid.config.height, grid.config.width)
    cells = shape[0] * shape[1]
    if data.size == 0:
        return BehaviourMap(np.zeros(shape, dtype=int), np.full(shape, np.nan))
    winners = grid.winners(data)
    counts = np.bincount(winners, minlength=cells)
    mean_fitness = np.full(cells, np.nan)
    if fitnesses is not None:
        fit = np.asarray(fitnesses, dtype=float)
        if fit.shape != (len(data),):
            raise ConfigurationError("one fitness per descriptor required")
        sums = np.bincount(winners, weights=fit, minlength=cells)
        occupied = counts > 0
        mean_fitness[occupied] = sums[occupied] / counts[occupied]
    return BehaviourMap(counts.reshape(shape), mean_fitness.reshape(shape))


@dataclass
class Density2D:
    counts: np.ndarray
    x_edges: np.ndarray
    y_edges: np.ndarray
    components: tuple

    def to_dict(self) -> Dict[str, Any]:
        return {
            "components": list(self.components),
            "counts": self.counts.astype(int).tolist(),
            "x_edges": [float(v) for v in self.x_edges],
            "y_edges": [float(v) for v in self.y_edges],
        }


def density_2d(descriptors: Any, x: int = 0, y: int = 1, bins: int = 20) -> Density2D:
    """Binned counts of two descriptor components over [0, 1]²"""
    data = np.atleast_2d(np.asarray(descriptors, dtype=float))
    if data.size and not (0 <= x < data.shape[1] and 0 <= y < data.shape[1]):
        raise ConfigurationError("component index out of range", [f"x={x}", f"y={y}", f"width={data.shape[1]}"])
    if bins < 1:
        raise ConfigurationError("bins must be positive")
    xs = data[:, x] if data.size else np.zeros(0)
    ys = data[:, y] if data.size else np.zeros(0)
    counts, x_edges, y_edges = np.histogram2d(xs, ys, bins=bins, range=[[0.0, 1.0], [0.0, 1.0]])
    return Density2D(counts, x_edges, y_edges, (x, y))


@dataclass(frozen=True)
class EvaluatedIndividual:
    generation: int
    fitness: float
    complexity: int


@dataclass(frozen=True)
class ComplexityRow:
    level: float
    mean_generation: Optional[float]
    mean_complexity: Optional[float]
    runs: int


@dataclass
class ComplexityTable:
    rows: List[ComplexityRow]
    total_runs: int

    def as_rows(self) -> List[list]:
        return [[r.level, r.mean_generation, r.mean_complexity, r.runs] for r in self.rows]


def least_complex(individuals: Sequence[EvaluatedIndividual], level: float) -> Optional[EvaluatedIndividual]:
    """Least complex individual reaching ``level``; earliest generation among ties"""
    qualifying = [ind for ind in individuals if ind.fitness >= level]
    if not qualifying:
        return None
    return min(qualifying, key=lambda ind: (ind.complexity, ind.generation))


def complexity_table(runs: Sequence[Sequence[EvaluatedIndividual]], levels: Sequence[float]) -> ComplexityTable:
    """Mean complexity and generation of the least complex qualifying individual per fitness level"""
    levels = [float(level) for level in levels]
    if any(b < a for a, b in zip(levels, levels[1:])):
        raise ConfigurationError("fitness levels must be ascending", [str(levels)])
    rows = []
    for level in levels:
        found = [ind for ind in (least_complex(run, level) for run in runs) if ind is not None]
        if found:
            rows.append(ComplexityRow(
                level,
                float(np.mean([ind.generation for ind in found])),
                float(np.mean([ind.complexity for ind in found])),
                len(found),
            ))
        else:
            rows.append(ComplexityRow(level, None, None, 0))
    return ComplexityTable(rows, len(runs))
