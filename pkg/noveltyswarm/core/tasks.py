"""Aggregation and resource-sharing tasks.

Fitness functions, behaviour characterisations and the multi-trial
evaluation of one genome. Metric extraction reads the per-tick history
recorded by the simulator; tick 0 (the initial placement) never enters a
metric.
"""

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import pdist, squareform
from scipy.stats import hmean

from noveltyswarm.core.neuroevo import Genome, RecurrentNetwork
from noveltyswarm.core.sim import SimConfig, WorldState, place_swarms, sense, step, write_trajectory
from noveltyswarm.utils.errors import ConfigurationError
from noveltyswarm.utils.logging import get_logger

logger = get_logger(__name__)

N_OUTPUTS = 3


class TaskKind(str, Enum):
    AGGREGATION = "aggregation"
    RESOURCE = "resource"


class Characterisation(str, Enum):
    """Behaviour characterisations; the first three belong to aggregation"""
    BCM = "bcm"
    BCL = "bcl"
    BCMCL = "bcmcl"
    BSIMPLE = "bsimple"
    BEXTRA = "bextra"

    @property
    def task(self) -> TaskKind:
        if self in (Characterisation.BSIMPLE, Characterisation.BEXTRA):
            return TaskKind.RESOURCE
        return TaskKind.AGGREGATION

    def length(self, n_samples: int) -> int:
        return {
            Characterisation.BCM: n_samples,
            Characterisation.BCL: n_samples,
            Characterisation.BCMCL: 2 * n_samples,
            Characterisation.BSIMPLE: 2,
            Characterisation.BEXTRA: 4,
        }[self]


class TaskConfig(BaseModel):
    """What a single evaluation runs: task, characterisation, simulator, trials"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    task: TaskKind = Field(default=TaskKind.AGGREGATION)
    characterisation: Characterisation = Field(default=Characterisation.BCMCL)
    sim: SimConfig
    trials: int = Field(default=10, ge=1, description="Trials per evaluation")

    @model_validator(mode="before")
    @classmethod
    def default_sim(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("sim") is None:
            task = TaskKind(data.get("task", TaskKind.AGGREGATION))
            sim = SimConfig.resource() if task is TaskKind.RESOURCE else SimConfig.aggregation()
            data = {**data, "sim": sim}
        return data

    @model_validator(mode="after")
    def check_compatible(self) -> "TaskConfig":
        problems = []
        if self.characterisation.task is not self.task:
            problems.append(f"characterisation {self.characterisation.value} does not apply to task {self.task.value}")
        if self.sim.energy_enabled != (self.task is TaskKind.RESOURCE):
            problems.append("sim.energy_enabled must be true exactly for the resource task")
        if self.task is TaskKind.AGGREGATION and self.sim.steps < self.sim.sample_interval:
            problems.append("sim.steps must cover at least one sampling period")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    @property
    def n_inputs(self) -> int:
        return self.sim.n_inputs

    @property
    def n_outputs(self) -> int:
        return N_OUTPUTS

    @property
    def initial_complexity(self) -> int:
        """Nodes plus links of the fully connected starting network"""
        return self.n_inputs + self.n_outputs + self.n_inputs * self.n_outputs

    @property
    def n_samples(self) -> int:
        return self.sim.steps // self.sim.sample_interval

    @property
    def descriptor_length(self) -> int:
        return self.characterisation.length(self.n_samples)


@dataclass
class TrialMetrics:
    """Everything the fitness functions and characterisations need from one trial.

    Per-tick arrays cover ticks 1..T (row t-1 is tick t).
    """
    n_robots: int
    d_max: float
    max_speed: float
    e_max: float
    cm_samples: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cluster_samples: np.ndarray = field(default_factory=lambda: np.zeros(0))
    final_positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    alive: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=bool))
    energy: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    speeds: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    station_distance: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    diverged: bool = False

    @property
    def steps(self) -> int:
        return self.alive.shape[0]

    @property
    def survivors(self) -> int:
        """|a_T|"""
        return int(self.alive[-1].sum()) if self.steps else self.n_robots


def mean_distance_to_centre(positions: np.ndarray, d_max: float) -> float:
    """Mean centre-of-mass distance, normalised by d_max"""
    positions = np.asarray(positions, dtype=float)
    if len(positions) == 0:
        return 0.0
    centre = positions.mean(axis=0)
    return float(np.linalg.norm(positions - centre, axis=1).mean() / d_max)


def cluster_labels(positions: np.ndarray, link_distance: float) -> Tuple[int, np.ndarray]:
    """Connected components of the graph linking robots strictly closer than ``link_distance``"""
    positions = np.asarray(positions, dtype=float)
    n = len(positions)
    if n == 0:
        return 0, np.zeros(0, dtype=int)
    adjacency = squareform(pdist(positions)) < link_distance
    return connected_components(csr_matrix(adjacency), directed=False)


def count_clusters(positions: np.ndarray, link_distance: float) -> int:
    return int(cluster_labels(positions, link_distance)[0])


def extract_metrics(world: WorldState) -> TrialMetrics:
    """Sampled aggregation metrics and per-tick resource traces of a finished trial"""
    cfg = world.config
    h = world.history
    steps = cfg.steps
    n = world.n_robots
    sample_ticks = range(cfg.sample_interval, steps + 1, cfg.sample_interval)
    cm, clusters = [], []
    for t in sample_ticks:
        alive = h.alive[t]
        positions = h.positions[t][alive] if alive.any() else h.positions[t]
        cm.append(mean_distance_to_centre(positions, cfg.d_max))
        clusters.append(count_clusters(positions, cfg.robot_range) / n)
    return TrialMetrics(
        n_robots=n,
        d_max=cfg.d_max,
        max_speed=cfg.max_speed,
        e_max=cfg.energy.e_max,
        cm_samples=np.clip(np.array(cm), 0.0, 1.0),
        cluster_samples=np.array(clusters),
        final_positions=world.positions.copy(),
        alive=h.alive[1:steps + 1].copy(),
        energy=np.where(h.alive[1:steps + 1], h.energy[1:steps + 1], 0.0),
        speeds=h.speeds[1:steps + 1].copy(),
        station_distance=h.station_distance[1:steps + 1].copy(),
        diverged=world.diverged,
    )


def fitness_aggregation_trial(world: Any, d_max: Optional[float] = None) -> float:
    """1 − mean normalised distance to the final centre of mass.

    Accepts a finished ``WorldState`` or an (N, 2) array of final positions
    (then ``d_max`` is required).
    """
    if isinstance(world, WorldState):
        positions, d_max = world.positions, world.config.d_max
    else:
        positions = np.asarray(world, dtype=float)
        if d_max is None:
            raise ConfigurationError("d_max is required with raw positions")
    return float(np.clip(1.0 - mean_distance_to_centre(positions, d_max), 0.0, 1.0))


def combine_aggregation_trials(fitnesses: Sequence[float]) -> float:
    """Harmonic mean; any zero trial makes the combined fitness 0"""
    values = np.asarray(fitnesses, dtype=float)
    if values.size == 0:
        raise ConfigurationError("no trial fitnesses to combine")
    if (values <= 0.0).any():
        return 0.0
    return float(hmean(values))


def combine_resource_trials(fitnesses: Sequence[float]) -> float:
    values = np.asarray(fitnesses, dtype=float)
    if values.size == 0:
        raise ConfigurationError("no trial fitnesses to combine")
    return float(values.mean())


def char_bcm(metrics: TrialMetrics) -> np.ndarray:
    return metrics.cm_samples.copy()


def char_bcl(metrics: TrialMetrics) -> np.ndarray:
    return metrics.cluster_samples.copy()


def char_bcmcl(metrics: TrialMetrics) -> np.ndarray:
    return np.concatenate([char_bcm(metrics), char_bcl(metrics)])


def fitness_resource_trial(metrics: TrialMetrics) -> float:
    """0.9·survivor fraction + 0.1·energy averaged over all robots and ticks"""
    n, steps = metrics.n_robots, metrics.steps
    if steps == 0:
        return 0.9 * metrics.survivors / n + 0.1
    energy_term = float(metrics.energy.sum()) / (steps * n * metrics.e_max)
    return float(np.clip(0.9 * metrics.survivors / n + 0.1 * energy_term, 0.0, 1.0))


def _alive_tick_means(metrics: TrialMetrics, values: np.ndarray) -> float:
    """Mean over ticks with a live robot of the mean over live robots (0 if none)"""
    counts = metrics.alive.sum(axis=1)
    live = counts > 0
    if not live.any():
        return 0.0
    per_tick = np.where(metrics.alive, values, 0.0).sum(axis=1)[live] / counts[live]
    return float(per_tick.mean())


def char_bsimple(metrics: TrialMetrics) -> np.ndarray:
    survivors = metrics.survivors / metrics.n_robots
    energy = _alive_tick_means(metrics, metrics.energy / metrics.e_max)
    return np.clip(np.array([survivors, energy]), 0.0, 1.0)


def char_bextra(metrics: TrialMetrics) -> np.ndarray:
    speed = _alive_tick_means(metrics, metrics.speeds / metrics.max_speed)
    station = _alive_tick_means(metrics, metrics.station_distance / metrics.d_max)
    return np.clip(np.concatenate([char_bsimple(metrics), [speed, station]]), 0.0, 1.0)


CHARACTERISATIONS = {
    Characterisation.BCM: char_bcm,
    Characterisation.BCL: char_bcl,
    Characterisation.BCMCL: char_bcmcl,
    Characterisation.BSIMPLE: char_bsimple,
    Characterisation.BEXTRA: char_bextra,
}


def characterise(metrics: TrialMetrics, characterisation: Characterisation) -> np.ndarray:
    return CHARACTERISATIONS[characterisation](metrics)


@dataclass
class EvaluationResult:
    """Combined fitness and mean descriptor of one genome over its trials"""
    genome_key: int
    fitness: float
    descriptor: np.ndarray
    trial_fitnesses: List[float]
    trial_descriptors: List[np.ndarray]
    complexity: int = 0
    diverged: bool = False


def run_trials(genome: Genome, task: TaskConfig, seeds: Sequence[int]) -> List[Tuple[TrialMetrics, WorldState]]:
    """Simulate one trial per seed in a single batched world.

    Every robot of every trial is one row of the network state, so a tick
    costs one propagation for the whole evaluation.
    """
    world = place_swarms(task.sim, seeds)
    network = RecurrentNetwork(genome)
    rows = world.n_trials * world.n_robots
    state = network.new_state(rows)
    for _ in range(task.sim.steps):
        inputs = sense(world).as_inputs().reshape(rows, -1)
        step(world, network.activate(state, inputs))
        if world.diverged or not world.alive.any():
            break
    trials = [world.trial(b) for b in range(world.n_trials)]
    return [(extract_metrics(t), t) for t in trials]


def run_trial(genome: Genome, task: TaskConfig, seed: int,
              trajectory_path: Optional[Path] = None) -> Tuple[TrialMetrics, WorldState]:
    """Simulate one trial of a homogeneous swarm controlled by ``genome``"""
    metrics, world = run_trials(genome, task, [seed])[0]
    if trajectory_path is not None:
        write_trajectory(world, trajectory_path)
    return metrics, world


def trial_fitness(metrics: TrialMetrics, world: WorldState, task: TaskKind) -> float:
    if task is TaskKind.AGGREGATION:
        return fitness_aggregation_trial(world)
    return fitness_resource_trial(metrics)


def combine_trials(fitnesses: Sequence[float], task: TaskKind) -> float:
    if task is TaskKind.AGGREGATION:
        return combine_aggregation_trials(fitnesses)
    return combine_resource_trials(fitnesses)


def evaluate(genome: Genome, task: TaskConfig, seeds: Sequence[int]) -> EvaluationResult:
    """Run one trial per seed and combine (harmonic mean for aggregation, mean for resource)"""
    if len(seeds) == 0:
        raise ConfigurationError("evaluation needs at least one trial seed")
    trials = run_trials(genome, task, seeds)
    if any(metrics.diverged for metrics, _ in trials):
        logger.warning("Simulation diverged", genome=genome.key, seeds=list(seeds))
        width = task.descriptor_length
        return EvaluationResult(
            genome_key=genome.key,
            fitness=0.0,
            descriptor=np.zeros(width),
            trial_fitnesses=[0.0] * len(seeds),
            trial_descriptors=[np.zeros(width) for _ in seeds],
            complexity=genome.complexity,
            diverged=True,
        )
    fitnesses = [trial_fitness(metrics, world, task.task) for metrics, world in trials]
    descriptors = [characterise(metrics, task.characterisation) for metrics, _ in trials]
    return EvaluationResult(
        genome_key=genome.key,
        fitness=combine_trials(fitnesses, task.task),
        descriptor=np.mean(descriptors, axis=0),
        trial_fitnesses=fitnesses,
        trial_descriptors=descriptors,
        complexity=genome.complexity,
    )
