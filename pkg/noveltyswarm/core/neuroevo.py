"""Minimal NEAT for evolving recurrent swarm controllers.

Genomes are immutable; every structural change produces a new ``Genome``.
Networks are compiled into a dense weight matrix and stepped once per
control tick, so recurrent links (self-loops included) read the previous
tick's activations while input nodes read the current sensor values.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import expit

from noveltyswarm.utils.errors import ConfigurationError
from noveltyswarm.utils.logging import LoggerMixin

SIGMOID_SLOPE = 4.9


class NodeKind(str, Enum):
    """Role of a neuron in the network"""
    INPUT = "input"
    OUTPUT = "output"
    HIDDEN = "hidden"


@dataclass(frozen=True)
class NodeGene:
    """A neuron"""
    id: int
    kind: NodeKind


@dataclass(frozen=True)
class ConnectionGene:
    """A weighted link carrying its historical marking"""
    innovation: int
    source: int
    target: int
    weight: float
    enabled: bool = True


@dataclass(frozen=True)
class Genome:
    """NEAT encoding: node genes followed by innovation-numbered connection genes"""
    key: int
    nodes: Tuple[NodeGene, ...]
    connections: Tuple[ConnectionGene, ...]

    @property
    def complexity(self) -> int:
        """Number of neurons plus number of connections"""
        return len(self.nodes) + len(self.connections)

    @property
    def input_ids(self) -> Tuple[int, ...]:
        return tuple(n.id for n in self.nodes if n.kind is NodeKind.INPUT)

    @property
    def output_ids(self) -> Tuple[int, ...]:
        return tuple(n.id for n in self.nodes if n.kind is NodeKind.OUTPUT)

    @property
    def n_inputs(self) -> int:
        return len(self.input_ids)

    @property
    def n_outputs(self) -> int:
        return len(self.output_ids)

    def connection_map(self) -> Dict[int, ConnectionGene]:
        """Connections keyed by innovation number"""
        return {c.innovation: c for c in self.connections}

    def with_key(self, key: int) -> "Genome":
        return replace(self, key=key)

    def validate(self) -> None:
        """Raise if the genome breaks its structural invariants"""
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("duplicate node ids", [f"genome {self.key}"])
        innovations = [c.innovation for c in self.connections]
        if len(set(innovations)) != len(innovations):
            raise ConfigurationError("duplicate innovation numbers", [f"genome {self.key}"])
        pairs = [(c.source, c.target) for c in self.connections]
        if len(set(pairs)) != len(pairs):
            raise ConfigurationError("duplicate connection endpoints", [f"genome {self.key}"])
        known = set(ids)
        inputs = set(self.input_ids)
        for c in self.connections:
            if c.source not in known or c.target not in known:
                raise ConfigurationError("connection references unknown node", [f"innovation {c.innovation}"])
            if c.target in inputs:
                raise ConfigurationError("connection targets an input node", [f"innovation {c.innovation}"])

    def to_text(self) -> str:
        """Line-oriented text form: node list, then connection list"""
        lines = [f"genome {self.key}"]
        lines.extend(f"node {n.id} {n.kind.value}" for n in self.nodes)
        lines.extend(
            f"connection {c.innovation} {c.source} {c.target} {float(c.weight)!r} {int(c.enabled)}"
            for c in self.connections
        )
        lines.append("end")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Genome":
        genomes = parse_genomes(text)
        if len(genomes) != 1:
            raise ConfigurationError(f"expected one genome, found {len(genomes)}")
        return genomes[0]


def parse_genomes(text: str) -> List[Genome]:
    """Parse any number of genomes written by ``Genome.to_text``"""
    genomes: List[Genome] = []
    key: Optional[int] = None
    nodes: List[NodeGene] = []
    connections: List[ConnectionGene] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split()
        if not parts:
            continue
        try:
            if parts[0] == "genome":
                key, nodes, connections = int(parts[1]), [], []
            elif parts[0] == "node":
                nodes.append(NodeGene(int(parts[1]), NodeKind(parts[2])))
            elif parts[0] == "connection":
                connections.append(ConnectionGene(
                    innovation=int(parts[1]),
                    source=int(parts[2]),
                    target=int(parts[3]),
                    weight=float(parts[4]),
                    enabled=parts[5] == "1",
                ))
            elif parts[0] == "end":
                if key is None:
                    raise ValueError("'end' without 'genome'")
                genomes.append(Genome(key, tuple(nodes), tuple(connections)))
                key = None
            else:
                raise ValueError(f"unknown record {parts[0]!r}")
        except (IndexError, ValueError) as e:
            raise ConfigurationError("malformed genome text", [f"line {lineno}: {e}"]) from e
    if key is not None:
        raise ConfigurationError("malformed genome text", ["missing 'end'"])
    return genomes


class EvolutionConfig(BaseModel):
    """NEAT parameters; defaults follow the aggregation experiments"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    population_size: int = Field(default=200, ge=2, description="Individuals per generation")
    generations: int = Field(default=250, ge=0, description="Generations per run")
    crossover_rate: float = Field(default=0.25, ge=0.0, le=1.0)
    # per-connection perturbation probability for mutated clones
    weight_mutation_rate: float = Field(default=0.10, ge=0.0, le=1.0)
    weight_perturbation: float = Field(default=0.5, ge=0.0)
    weight_reset_rate: float = Field(default=0.10, ge=0.0, le=1.0)
    weight_reset_range: float = Field(default=2.0, gt=0.0)
    initial_weight_range: float = Field(default=2.0, gt=0.0)
    weight_limit: float = Field(default=8.0, gt=0.0)
    add_connection_rate: float = Field(default=0.05, ge=0.0, le=1.0)
    add_node_rate: float = Field(default=0.03, ge=0.0, le=1.0)
    disabled_inherit_rate: float = Field(default=0.75, ge=0.0, le=1.0)
    excess_coefficient: float = Field(default=1.0, ge=0.0)
    disjoint_coefficient: float = Field(default=1.0, ge=0.0)
    weight_coefficient: float = Field(default=0.4, ge=0.0)
    compatibility_threshold: float = Field(default=3.0, gt=0.0)
    threshold_step: float = Field(default=0.1, ge=0.0)
    threshold_min: float = Field(default=0.3, gt=0.0)
    target_species_min: int = Field(default=8, ge=1)
    target_species_max: int = Field(default=12, ge=1)
    stagnation_limit: int = Field(default=15, ge=1)
    elitism_min_size: int = Field(default=5, ge=0, description="Champion kept when species is larger")
    survival_threshold: float = Field(default=0.2, gt=0.0, le=1.0)

    @model_validator(mode="after")
    def check_species_target(self) -> "EvolutionConfig":
        if self.target_species_min > self.target_species_max:
            raise ValueError("target_species_min must not exceed target_species_max")
        return self


class InnovationTracker:
    """Hands out historical markings and hidden node ids.

    Identical structural mutations within one generation share numbers;
    the caches are cleared by ``new_generation``.
    """

    def __init__(self, next_innovation: int, next_node_id: int):
        self.next_innovation = next_innovation
        self.next_node_id = next_node_id
        self._connections: Dict[Tuple[int, int], int] = {}
        self._splits: Dict[int, Tuple[int, int, int]] = {}

    def new_generation(self) -> None:
        self._connections.clear()
        self._splits.clear()

    def connection(self, source: int, target: int) -> int:
        """Innovation number for a new source→target link"""
        key = (source, target)
        if key not in self._connections:
            self._connections[key] = self._take_innovation()
        return self._connections[key]

    def split(self, innovation: int, existing_nodes: Iterable[int] = ()) -> Tuple[int, int, int]:
        """(hidden node id, in-link innovation, out-link innovation) for splitting a link"""
        cached = self._splits.get(innovation)
        if cached is not None and cached[0] not in set(existing_nodes):
            return cached
        result = (self._take_node(), self._take_innovation(), self._take_innovation())
        if cached is None:
            self._splits[innovation] = result
        return result

    def _take_innovation(self) -> int:
        value = self.next_innovation
        self.next_innovation += 1
        return value

    def _take_node(self) -> int:
        value = self.next_node_id
        self.next_node_id += 1
        return value

    def to_state(self) -> Dict[str, int]:
        return {"next_innovation": self.next_innovation, "next_node_id": self.next_node_id}

    @classmethod
    def from_state(cls, state: Dict[str, int]) -> "InnovationTracker":
        return cls(int(state["next_innovation"]), int(state["next_node_id"]))


def initial_genome(key: int, n_inputs: int, n_outputs: int, rng: np.random.Generator,
                   weight_range: float = 2.0) -> Genome:
    """Fully connected input→output genome without hidden or bias nodes"""
    nodes = [NodeGene(i, NodeKind.INPUT) for i in range(n_inputs)]
    nodes += [NodeGene(n_inputs + j, NodeKind.OUTPUT) for j in range(n_outputs)]
    weights = rng.uniform(-weight_range, weight_range, size=n_inputs * n_outputs)
    connections = [
        ConnectionGene(i * n_outputs + j, i, n_inputs + j, float(weights[i * n_outputs + j]))
        for i in range(n_inputs)
        for j in range(n_outputs)
    ]
    return Genome(key, tuple(nodes), tuple(connections))


@dataclass
class NetworkState:
    """Per-node activations carried across ticks of one trial (one row per robot)"""
    values: np.ndarray
    genome_key: int

    def reset(self) -> None:
        self.values[...] = 0.0


class RecurrentNetwork:
    """Compiled genome: one synchronous propagation step per call"""

    def __init__(self, genome: Genome):
        self.genome_key = genome.key
        self.node_ids = [n.id for n in genome.nodes]
        index = {node_id: i for i, node_id in enumerate(self.node_ids)}
        self.input_index = np.array([index[i] for i in genome.input_ids], dtype=int)
        self.output_index = np.array([index[i] for i in genome.output_ids], dtype=int)
        self.n_inputs = len(self.input_index)
        self.n_nodes = len(self.node_ids)
        # weights[target, source]
        self.weights = np.zeros((self.n_nodes, self.n_nodes))
        for c in genome.connections:
            if c.enabled:
                self.weights[index[c.target], index[c.source]] += c.weight

    def new_state(self, batch: int = 1) -> NetworkState:
        return NetworkState(np.zeros((batch, self.n_nodes)), self.genome_key)

    def activate(self, state: NetworkState, inputs: Any) -> np.ndarray:
        """Advance one tick; returns outputs in [0,1] (shape follows inputs)"""
        x = np.asarray(inputs, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[-1] != self.n_inputs:
            raise ConfigurationError(
                "input length mismatch", [f"expected {self.n_inputs}, got {x.shape[-1]}"]
            )
        if state.genome_key != self.genome_key or state.values.shape != (x.shape[0], self.n_nodes):
            raise ConfigurationError("network state does not belong to this genome")

        previous = state.values.copy()
        previous[:, self.input_index] = x
        current = expit(SIGMOID_SLOPE * (previous @ self.weights.T))
        current[:, self.input_index] = x
        state.values = current
        outputs = current[:, self.output_index]
        return outputs[0] if single else outputs


def activate(genome: Genome, state: NetworkState, inputs: Any) -> np.ndarray:
    """One propagation step of ``genome`` (compiles on every call; prefer RecurrentNetwork in loops)"""
    return RecurrentNetwork(genome).activate(state, inputs)


def compatibility_distance(a: Genome, b: Genome, c1: float = 1.0, c2: float = 1.0,
                           c3: float = 0.4) -> float:
    """c1·E/N + c2·D/N + c3·W̄ over excess, disjoint and matching genes"""
    genes_a = a.connection_map()
    genes_b = b.connection_map()
    if not genes_a and not genes_b:
        return 0.0
    cutoff = min(max(genes_a, default=-1), max(genes_b, default=-1))
    matching = genes_a.keys() & genes_b.keys()
    unmatched = genes_a.keys() ^ genes_b.keys()
    excess = sum(1 for innovation in unmatched if innovation > cutoff)
    disjoint = len(unmatched) - excess
    n = max(len(genes_a), len(genes_b), 1)
    if matching:
        weight_diff = sum(abs(genes_a[i].weight - genes_b[i].weight) for i in matching) / len(matching)
    else:
        weight_diff = 0.0
    return c1 * excess / n + c2 * disjoint / n + c3 * weight_diff


def crossover(parent1: Genome, parent2: Genome, rng: np.random.Generator, key: Optional[int] = None,
              score1: float = 0.0, score2: float = 0.0, disabled_inherit_rate: float = 0.75) -> Genome:
    """Align genes by innovation; unmatched genes come from the higher-scoring parent.

    With equal scores ``parent1`` counts as the fitter parent.
    """
    if score2 > score1:
        parent1, parent2 = parent2, parent1
    other = parent2.connection_map()
    connections = []
    for gene in sorted(parent1.connections, key=lambda c: c.innovation):
        match = other.get(gene.innovation)
        if match is None:
            connections.append(gene)
            continue
        chosen = gene if rng.random() < 0.5 else match
        if not gene.enabled or not match.enabled:
            chosen = replace(chosen, enabled=bool(rng.random() >= disabled_inherit_rate))
        connections.append(chosen)
    return Genome(parent1.key if key is None else key, parent1.nodes, tuple(connections))


def mutate(genome: Genome, innovations: InnovationTracker, rng: np.random.Generator,
           config: EvolutionConfig, key: Optional[int] = None) -> Genome:
    """Weight perturbation, then possible add-connection and add-node"""
    nodes = list(genome.nodes)
    connections = list(genome.connections)

    if connections and config.weight_mutation_rate > 0.0:
        draws = rng.random((len(connections), 3))
        for i, (pick, reset, value) in enumerate(draws):
            if pick >= config.weight_mutation_rate:
                continue
            c = connections[i]
            if reset < config.weight_reset_rate:
                weight = (2.0 * value - 1.0) * config.weight_reset_range
            else:
                weight = c.weight + (2.0 * value - 1.0) * config.weight_perturbation
            weight = float(np.clip(weight, -config.weight_limit, config.weight_limit))
            connections[i] = replace(c, weight=weight)

    if config.add_connection_rate > 0.0 and rng.random() < config.add_connection_rate:
        _add_connection(nodes, connections, innovations, rng, config)

    if config.add_node_rate > 0.0 and rng.random() < config.add_node_rate:
        _add_node(nodes, connections, innovations, rng)

    return Genome(genome.key if key is None else key, tuple(nodes), tuple(connections))


def _add_connection(nodes: List[NodeGene], connections: List[ConnectionGene],
                    innovations: InnovationTracker, rng: np.random.Generator,
                    config: EvolutionConfig) -> None:
    existing = {(c.source, c.target) for c in connections}
    targets = [n.id for n in nodes if n.kind is not NodeKind.INPUT]
    free = [(n.id, t) for n in nodes for t in targets if (n.id, t) not in existing]
    if not free:
        return
    source, target = free[int(rng.integers(len(free)))]
    weight = float(rng.uniform(-config.initial_weight_range, config.initial_weight_range))
    connections.append(ConnectionGene(innovations.connection(source, target), source, target, weight))


def _add_node(nodes: List[NodeGene], connections: List[ConnectionGene],
              innovations: InnovationTracker, rng: np.random.Generator) -> None:
    enabled = [i for i, c in enumerate(connections) if c.enabled]
    if not enabled:
        return
    index = enabled[int(rng.integers(len(enabled)))]
    old = connections[index]
    hidden, in_innovation, out_innovation = innovations.split(old.innovation, (n.id for n in nodes))
    connections[index] = replace(old, enabled=False)
    nodes.append(NodeGene(hidden, NodeKind.HIDDEN))
    connections.append(ConnectionGene(in_innovation, old.source, hidden, 1.0))
    connections.append(ConnectionGene(out_innovation, hidden, old.target, old.weight))


@dataclass
class Species:
    """A niche of compatible genomes"""
    key: int
    representative: Genome
    members: List[int] = field(default_factory=list)  # population indices
    created: int = 0
    staleness: int = 0
    best_score: Optional[float] = None
    adjusted_sum: float = 0.0

    def to_state(self) -> Dict[str, Any]:
        return {
            "key": self.key,
            "representative": self.representative.to_text(),
            "created": self.created,
            "staleness": self.staleness,
            "best_score": self.best_score,
        }

    @classmethod
    def from_state(cls, state: Dict[str, Any]) -> "Species":
        return cls(
            key=int(state["key"]),
            representative=Genome.from_text(state["representative"]),
            created=int(state["created"]),
            staleness=int(state["staleness"]),
            best_score=state["best_score"],
        )


@dataclass
class Population:
    """One generation plus the bookkeeping reproduction needs"""
    generation: int
    genomes: List[Genome]
    species: List[Species]
    compatibility_threshold: float
    innovations: InnovationTracker
    next_genome_key: int
    next_species_key: int = 0

    def take_key(self) -> int:
        key = self.next_genome_key
        self.next_genome_key += 1
        return key

    def to_state(self) -> Dict[str, Any]:
        return {
            "generation": self.generation,
            "genomes": "".join(g.to_text() for g in self.genomes),
            "species": [s.to_state() for s in self.species],
            "compatibility_threshold": self.compatibility_threshold,
            "innovations": self.innovations.to_state(),
            "next_genome_key": self.next_genome_key,
            "next_species_key": self.next_species_key,
        }

    @classmethod
    def from_state(cls, state: Dict[str, Any]) -> "Population":
        return cls(
            generation=int(state["generation"]),
            genomes=parse_genomes(state["genomes"]),
            species=[Species.from_state(s) for s in state["species"]],
            compatibility_threshold=float(state["compatibility_threshold"]),
            innovations=InnovationTracker.from_state(state["innovations"]),
            next_genome_key=int(state["next_genome_key"]),
            next_species_key=int(state["next_species_key"]),
        )


def allocate_offspring(shares: Sequence[float], total: int) -> List[int]:
    """Largest-remainder split of ``total`` proportional to ``shares``"""
    shares = np.asarray(shares, dtype=float)
    if shares.size == 0:
        return []
    if shares.sum() <= 0.0:
        shares = np.ones_like(shares)
    quotas = shares / shares.sum() * total
    counts = np.floor(quotas).astype(int)
    remainder = total - int(counts.sum())
    order = np.argsort(-(quotas - counts), kind="stable")
    counts[order[:remainder]] += 1
    return [int(c) for c in counts]


def reserve_offspring(counts: Sequence[int], minimum: Sequence[int]) -> List[int]:
    """Raise each count to its minimum, taking slots from the largest allocations"""
    counts = [int(c) for c in counts]
    if sum(minimum) > sum(counts):
        raise ConfigurationError(
            "population too small for the reserved offspring", [f"reserved {sum(minimum)} of {sum(counts)}"]
        )
    for i, floor in enumerate(minimum):
        while counts[i] < floor:
            spare = [c - m if c > m else -1 for c, m in zip(counts, minimum)]
            donor = int(np.argmax(spare))
            counts[donor] -= 1
            counts[i] += 1
    return counts


class NeatEvolver(LoggerMixin):
    """Speciation, fitness sharing and generational reproduction"""

    def __init__(self, config: EvolutionConfig):
        self.config = config

    def initial_population(self, n_inputs: int, n_outputs: int, rng: np.random.Generator) -> Population:
        genomes = [
            initial_genome(key, n_inputs, n_outputs, rng, self.config.initial_weight_range)
            for key in range(self.config.population_size)
        ]
        return Population(
            generation=0,
            genomes=genomes,
            species=[],
            compatibility_threshold=self.config.compatibility_threshold,
            innovations=InnovationTracker(n_inputs * n_outputs, n_inputs + n_outputs),
            next_genome_key=len(genomes),
        )

    def distance(self, a: Genome, b: Genome) -> float:
        return compatibility_distance(
            a, b,
            self.config.excess_coefficient,
            self.config.disjoint_coefficient,
            self.config.weight_coefficient,
        )

    def speciate(self, population: Population) -> List[Species]:
        """Assign every genome to the first species whose representative is close enough"""
        species = [
            Species(s.key, s.representative, [], s.created, s.staleness, s.best_score)
            for s in population.species
        ]
        for index, genome in enumerate(population.genomes):
            for s in species:
                if self.distance(genome, s.representative) < population.compatibility_threshold:
                    s.members.append(index)
                    break
            else:
                species.append(Species(
                    key=population.next_species_key,
                    representative=genome,
                    members=[index],
                    created=population.generation,
                ))
                population.next_species_key += 1
        return [s for s in species if s.members]

    def epoch(self, population: Population, scores: Sequence[float], rng: np.random.Generator) -> Population:
        """Produce the next generation.

        ``population.species`` is replaced by this generation's speciation,
        with members filled in, so callers can inspect it afterwards.
        """
        scores = np.asarray(scores, dtype=float)
        if scores.shape != (len(population.genomes),):
            raise ConfigurationError(
                "score count mismatch", [f"expected {len(population.genomes)}, got {scores.size}"]
            )
        if not np.all(np.isfinite(scores)) or np.any(scores < 0.0):
            raise ConfigurationError("selection scores must be finite and non-negative")

        cfg = self.config
        species = self.speciate(population)
        population.species = species
        champion = int(np.argmax(scores))

        for s in species:
            member_scores = scores[s.members]
            best = float(member_scores.max())
            if s.best_score is None or best > s.best_score:
                s.best_score = best
                s.staleness = 0
            else:
                s.staleness += 1
            s.adjusted_sum = float(member_scores.sum() / len(s.members))

        eligible = [s for s in species if s.staleness < cfg.stagnation_limit or champion in s.members]
        counts = allocate_offspring([s.adjusted_sum for s in eligible], cfg.population_size)
        # species that keep an elite, and the one holding the champion, need a slot
        minimum = [
            1 if len(s.members) > cfg.elitism_min_size or champion in s.members else 0
            for s in eligible
        ]
        counts = reserve_offspring(counts, minimum)

        population.innovations.new_generation()
        offspring: List[Genome] = []
        survivors: List[Species] = []
        for s, count in zip(eligible, counts):
            if count == 0:
                continue
            ranked = sorted(s.members, key=lambda m: (-scores[m], m))
            if len(ranked) > cfg.elitism_min_size:
                offspring.append(population.genomes[ranked[0]])
                count -= 1
            pool = ranked[:max(1, math.ceil(cfg.survival_threshold * len(ranked)))]
            if len(pool) == 1 and len(ranked) > 1:
                pool = ranked[:2]
            for _ in range(count):
                offspring.append(self._breed(population, pool, scores, rng))
            rep = population.genomes[s.members[int(rng.integers(len(s.members)))]]
            survivors.append(Species(s.key, rep, [], s.created, s.staleness, s.best_score))

        threshold = population.compatibility_threshold
        if len(species) < cfg.target_species_min:
            threshold = max(cfg.threshold_min, threshold - cfg.threshold_step)
        elif len(species) > cfg.target_species_max:
            threshold += cfg.threshold_step

        self.logger.debug(
            "Epoch complete",
            generation=population.generation,
            species=len(species),
            eligible=len(eligible),
            threshold=threshold,
        )
        return Population(
            generation=population.generation + 1,
            genomes=offspring,
            species=survivors,
            compatibility_threshold=threshold,
            innovations=population.innovations,
            next_genome_key=population.next_genome_key,
            next_species_key=population.next_species_key,
        )

    def _breed(self, population: Population, pool: List[int], scores: np.ndarray,
               rng: np.random.Generator) -> Genome:
        key = population.take_key()
        if len(pool) >= 2 and rng.random() < self.config.crossover_rate:
            i, j = rng.choice(pool, size=2, replace=False)
            return crossover(
                population.genomes[int(i)], population.genomes[int(j)], rng, key,
                float(scores[int(i)]), float(scores[int(j)]), self.config.disabled_inherit_rate,
            )
        parent = population.genomes[pool[int(rng.integers(len(pool)))]]
        return mutate(parent, population.innovations, rng, self.config, key)


def epoch(population: Population, scores: Sequence[float], config: EvolutionConfig,
          rng: np.random.Generator) -> Population:
    """Functional entry point for one generation of reproduction"""
    return NeatEvolver(config).epoch(population, scores, rng)
