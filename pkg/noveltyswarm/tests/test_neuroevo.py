"""Tests for genomes, recurrent networks and NEAT reproduction"""

import math
from dataclasses import replace

import numpy as np
import pytest

from noveltyswarm.core.neuroevo import (
    ConnectionGene, EvolutionConfig, Genome, InnovationTracker, NeatEvolver, NodeGene, NodeKind,
    RecurrentNetwork, activate, allocate_offspring, compatibility_distance, crossover, epoch,
    initial_genome, mutate, parse_genomes, reserve_offspring,
)
from noveltyswarm.utils.errors import ConfigurationError


def tiny_genome(weight: float = 0.0, key: int = 0, self_loop: float = None) -> Genome:
    """One input, one output, one link (plus an optional output self-loop)"""
    nodes = (NodeGene(0, NodeKind.INPUT), NodeGene(1, NodeKind.OUTPUT))
    connections = [ConnectionGene(0, 0, 1, weight)]
    if self_loop is not None:
        connections.append(ConnectionGene(1, 1, 1, self_loop))
    return Genome(key, nodes, tuple(connections))


NO_MUTATION = EvolutionConfig(weight_mutation_rate=0.0, add_connection_rate=0.0, add_node_rate=0.0)


class TestInitialGenome:
    """Structural anchors of the starting networks"""

    def test_aggregation_complexity(self):
        """Test the aggregation network starts at 20 neurons and 51 links"""
        genome = initial_genome(0, 17, 3, np.random.default_rng(0))
        assert len(genome.nodes) == 20
        assert len(genome.connections) == 51
        assert genome.complexity == 71

    def test_resource_complexity(self):
        """Test the resource network starts at 29 neurons and 78 links"""
        genome = initial_genome(0, 26, 3, np.random.default_rng(0))
        assert len(genome.nodes) == 29
        assert len(genome.connections) == 78
        assert genome.complexity == 107

    def test_weights_within_range(self):
        """Test initial weights stay in the configured range"""
        genome = initial_genome(0, 17, 3, np.random.default_rng(1), weight_range=2.0)
        weights = np.array([c.weight for c in genome.connections])
        assert np.all(np.abs(weights) <= 2.0)
        genome.validate()

    def test_text_round_trip(self):
        """Test the text form parses back to the same genome"""
        genome = initial_genome(7, 4, 3, np.random.default_rng(2))
        assert Genome.from_text(genome.to_text()) == genome
        both = parse_genomes(genome.to_text() + tiny_genome(key=9).to_text())
        assert [g.key for g in both] == [7, 9]

    def test_malformed_text(self):
        """Test malformed genome text is rejected"""
        with pytest.raises(ConfigurationError):
            Genome.from_text("genome 1\nnode 0 input\n")
        with pytest.raises(ConfigurationError):
            Genome.from_text("genome 1\nbogus 3\nend\n")


class TestActivation:
    """One synchronous propagation step per tick"""

    def test_zero_weights_give_half(self):
        """Test zero weights give 0.5 on every output"""
        genome = initial_genome(0, 17, 3, np.random.default_rng(0))
        genome = Genome(0, genome.nodes, tuple(replace(c, weight=0.0) for c in genome.connections))
        network = RecurrentNetwork(genome)
        state = network.new_state()
        out = network.activate(state, np.random.default_rng(3).random(17))
        np.testing.assert_allclose(out, [0.5, 0.5, 0.5])

    def test_single_link_closed_form(self):
        """Test one link against the closed-form sigmoid"""
        for w in (-1.3, 0.0, 0.4, 2.0):
            genome = tiny_genome(w)
            network = RecurrentNetwork(genome)
            out = network.activate(network.new_state(), [1.0])
            assert out[0] == pytest.approx(1.0 / (1.0 + math.exp(-4.9 * w)), abs=1e-12)

    def test_self_recurrent_two_ticks(self):
        """Test a self-loop feeds the previous tick back in"""
        genome = tiny_genome(weight=0.0, self_loop=0.8)
        network = RecurrentNetwork(genome)
        state = network.new_state()
        sig = lambda x: 1.0 / (1.0 + math.exp(-4.9 * x))
        tick1 = network.activate(state, [0.0])[0]
        tick2 = network.activate(state, [0.0])[0]
        assert tick1 == pytest.approx(sig(0.0))
        assert tick2 == pytest.approx(sig(0.8 * sig(0.0)))

    def test_hidden_node_delays_signal(self):
        """Test a hidden node adds one tick of delay"""
        # input -> hidden -> output takes two ticks to arrive
        nodes = (NodeGene(0, NodeKind.INPUT), NodeGene(1, NodeKind.OUTPUT), NodeGene(2, NodeKind.HIDDEN))
        connections = (ConnectionGene(0, 0, 2, 1.0), ConnectionGene(1, 2, 1, 1.0))
        network = RecurrentNetwork(Genome(0, nodes, connections))
        state = network.new_state()
        first = network.activate(state, [1.0])[0]
        second = network.activate(state, [1.0])[0]
        assert first == pytest.approx(0.5)
        sig = lambda x: 1.0 / (1.0 + math.exp(-4.9 * x))
        assert second == pytest.approx(sig(sig(1.0)))

    def test_batched_rows_are_independent(self):
        """Test each row of a batch evolves as if alone"""
        genome = initial_genome(0, 5, 3, np.random.default_rng(4))
        network = RecurrentNetwork(genome)
        inputs = np.random.default_rng(5).random((4, 5))
        batch = network.activate(network.new_state(4), inputs)
        for i in range(4):
            single = network.activate(network.new_state(), inputs[i])
            np.testing.assert_allclose(batch[i], single)

    def test_disabled_connection_ignored(self):
        """Test disabled links carry no signal"""
        genome = Genome(0, tiny_genome().nodes, (ConnectionGene(0, 0, 1, 5.0, enabled=False),))
        out = activate(genome, RecurrentNetwork(genome).new_state(), [1.0])
        assert out[0] == pytest.approx(0.5)

    def test_input_length_mismatch(self):
        """Test the wrong input width is rejected"""
        network = RecurrentNetwork(tiny_genome())
        with pytest.raises(ConfigurationError):
            network.activate(network.new_state(), [1.0, 0.0])

    def test_foreign_state_rejected(self):
        """Test state from another genome is rejected"""
        network = RecurrentNetwork(tiny_genome(key=1))
        other = RecurrentNetwork(tiny_genome(key=2))
        with pytest.raises(ConfigurationError):
            network.activate(other.new_state(), [1.0])


class TestCompatibilityDistance:
    """Excess, disjoint and weight terms"""

    def setup_method(self):
        """Set up a seeded generator"""
        self.rng = np.random.default_rng(10)

    def test_identity(self):
        """Test a genome is at distance zero from itself"""
        genome = initial_genome(0, 6, 3, self.rng)
        assert compatibility_distance(genome, genome) == 0.0

    def test_single_weight_difference(self):
        """Test one changed weight contributes c3 times the mean difference"""
        a = initial_genome(0, 6, 3, self.rng)
        changed = list(a.connections)
        changed[4] = ConnectionGene(changed[4].innovation, changed[4].source, changed[4].target,
                                    changed[4].weight + 0.7)
        b = Genome(1, a.nodes, tuple(changed))
        # mean over 18 matching genes
        assert compatibility_distance(a, b) == pytest.approx(0.4 * 0.7 / 18)

    def test_excess_and_disjoint(self):
        """Test excess and disjoint genes are counted apart"""
        nodes = tiny_genome().nodes
        a = Genome(0, nodes, (ConnectionGene(0, 0, 1, 0.0), ConnectionGene(2, 1, 1, 0.0)))
        b = Genome(1, nodes, (ConnectionGene(0, 0, 1, 0.0), ConnectionGene(1, 0, 1, 0.0),
                              ConnectionGene(5, 1, 1, 0.0)))
        # disjoint: 1, 2; excess: 5; N = 3
        assert compatibility_distance(a, b) == pytest.approx(1.0 / 3 + 2.0 / 3)

    def test_symmetry(self):
        """Test distance is symmetric"""
        innovations = InnovationTracker(18, 9)
        config = EvolutionConfig(add_connection_rate=0.5, add_node_rate=0.5)
        for _ in range(30):
            a = mutate(initial_genome(0, 6, 3, self.rng), innovations, self.rng, config)
            b = mutate(initial_genome(1, 6, 3, self.rng), innovations, self.rng, config)
            assert compatibility_distance(a, b) == pytest.approx(compatibility_distance(b, a))


class TestCrossover:
    """Gene alignment by innovation number"""

    def setup_method(self):
        """Set up a seeded generator"""
        self.rng = np.random.default_rng(20)

    def test_identical_structure(self):
        """Test crossing matching structures keeps the structure"""
        a = initial_genome(0, 5, 3, self.rng)
        b = initial_genome(1, 5, 3, self.rng)
        child = crossover(a, b, self.rng, key=2, score1=1.0, score2=1.0)
        assert [c.innovation for c in child.connections] == [c.innovation for c in a.connections]
        assert child.nodes == a.nodes
        child.validate()

    def test_excess_from_fitter_parent(self):
        """Test excess genes come from the fitter parent"""
        innovations = InnovationTracker(15, 8)
        base = initial_genome(0, 5, 3, self.rng)
        config = EvolutionConfig(weight_mutation_rate=0.0, add_connection_rate=1.0, add_node_rate=0.0)
        extended = mutate(base, innovations, self.rng, config)
        extra = set(extended.connection_map()) - set(base.connection_map())
        child = crossover(extended, base, self.rng, score1=0.9, score2=0.1)
        assert extra <= set(child.connection_map())
        child = crossover(base, extended, self.rng, score1=0.1, score2=0.9)
        assert extra <= set(child.connection_map())

    def test_gene_subset_of_parents(self):
        """Test every child gene exists in a parent"""
        innovations = InnovationTracker(15, 8)
        config = EvolutionConfig(add_connection_rate=0.6, add_node_rate=0.4)
        for _ in range(50):
            a = mutate(initial_genome(0, 5, 3, self.rng), innovations, self.rng, config)
            b = mutate(initial_genome(1, 5, 3, self.rng), innovations, self.rng, config)
            child = crossover(a, b, self.rng, score1=float(self.rng.random()), score2=float(self.rng.random()))
            union = set(a.connection_map()) | set(b.connection_map())
            assert set(child.connection_map()) <= union
            child.validate()

    def test_disabled_gene_mostly_stays_disabled(self):
        """Test a gene disabled in a parent stays disabled about 75% of the time"""
        nodes = tiny_genome().nodes
        a = Genome(0, nodes, (ConnectionGene(0, 0, 1, 1.0, enabled=False),))
        b = Genome(1, nodes, (ConnectionGene(0, 0, 1, 1.0, enabled=True),))
        enabled = sum(crossover(a, b, self.rng).connections[0].enabled for _ in range(2000))
        assert 0.2 < enabled / 2000 < 0.3


class TestMutation:
    """Weight perturbation and structural additions"""

    def setup_method(self):
        """Set up a seeded generator"""
        self.rng = np.random.default_rng(30)

    def test_no_mutation_is_identity(self):
        """Test zero mutation rates leave the genome unchanged"""
        genome = initial_genome(3, 6, 3, self.rng)
        assert mutate(genome, InnovationTracker(18, 9), self.rng, NO_MUTATION) == genome

    def test_add_node_split(self):
        """Test splitting a link adds a hidden node with weights 1 and w"""
        genome = tiny_genome(weight=0.7)
        config = EvolutionConfig(weight_mutation_rate=0.0, add_connection_rate=0.0, add_node_rate=1.0)
        child = mutate(genome, InnovationTracker(2, 2), self.rng, config)
        by_innovation = child.connection_map()
        assert not by_innovation[0].enabled
        hidden = [n.id for n in child.nodes if n.kind is NodeKind.HIDDEN]
        assert hidden == [2]
        into = [c for c in child.connections if c.target == 2][0]
        out = [c for c in child.connections if c.source == 2][0]
        assert (into.source, into.weight) == (0, 1.0)
        assert (out.target, out.weight) == (1, 0.7)

    def test_complexity_never_decreases(self):
        """Test mutation never lowers complexity"""
        innovations = InnovationTracker(18, 9)
        config = EvolutionConfig(add_connection_rate=0.3, add_node_rate=0.3)
        genome = initial_genome(0, 6, 3, self.rng)
        for _ in range(100):
            child = mutate(genome, innovations, self.rng, config)
            assert child.complexity >= genome.complexity
            child.validate()
            genome = child

    def test_same_generation_structures_share_innovations(self):
        """Test the same new link in one generation gets one innovation number"""
        innovations = InnovationTracker(2, 2)
        config = EvolutionConfig(weight_mutation_rate=0.0, add_connection_rate=0.0, add_node_rate=1.0)
        a = mutate(tiny_genome(), innovations, np.random.default_rng(1), config)
        b = mutate(tiny_genome(), innovations, np.random.default_rng(2), config)
        assert a.connection_map().keys() == b.connection_map().keys()
        innovations.new_generation()
        c = mutate(tiny_genome(), innovations, np.random.default_rng(3), config)
        assert c.connection_map().keys() != a.connection_map().keys()

    def test_weights_clamped(self):
        """Test mutated weights stay within the weight limit"""
        config = EvolutionConfig(weight_mutation_rate=1.0, weight_perturbation=5.0, weight_reset_rate=0.0,
                                 add_connection_rate=0.0, add_node_rate=0.0, weight_limit=8.0)
        genome = tiny_genome(weight=7.9)
        for _ in range(50):
            genome = mutate(genome, InnovationTracker(2, 2), self.rng, config)
            assert abs(genome.connections[0].weight) <= 8.0


class TestOffspringAllocation:
    """Largest-remainder rounding"""

    def test_sums_to_total(self):
        """Test allocations always add up to the total"""
        rng = np.random.default_rng(40)
        for _ in range(200):
            shares = rng.random(int(rng.integers(1, 15)))
            total = int(rng.integers(1, 300))
            counts = allocate_offspring(shares, total)
            assert sum(counts) == total
            assert all(c >= 0 for c in counts)

    def test_zero_shares_split_evenly(self):
        """Test all-zero shares split evenly"""
        assert allocate_offspring([0.0, 0.0], 4) == [2, 2]

    def test_empty(self):
        """Test no species get no offspring"""
        assert allocate_offspring([], 10) == []

    def test_reserve_takes_from_largest(self):
        """Test reserved slots are taken from the largest allocation"""
        assert reserve_offspring([0, 10, 30], [1, 1, 0]) == [1, 10, 29]
        assert reserve_offspring([3, 3], [1, 1]) == [3, 3]

    def test_reserve_keeps_total(self):
        """Test reservation never changes the total and meets every minimum"""
        rng = np.random.default_rng(41)
        for _ in range(200):
            size = int(rng.integers(1, 12))
            counts = allocate_offspring(rng.random(size) ** 4, int(rng.integers(size, 200)))
            minimum = [int(m) for m in rng.integers(0, 2, size)]
            reserved = reserve_offspring(counts, minimum)
            assert sum(reserved) == sum(counts)
            assert all(r >= m for r, m in zip(reserved, minimum))

    def test_reserve_more_than_total(self):
        """Test reserving more slots than exist is rejected"""
        with pytest.raises(ConfigurationError):
            reserve_offspring([1, 0], [1, 1])


class TestEpoch:
    """Generational reproduction"""

    def setup_method(self):
        """Set up a 40-genome evolver"""
        self.config = EvolutionConfig(population_size=40)
        self.evolver = NeatEvolver(self.config)
        self.rng = np.random.default_rng(50)

    def test_identical_genomes_one_species(self):
        """Test identical genomes form a single species"""
        population = self.evolver.initial_population(5, 3, self.rng)
        clone = population.genomes[0]
        population.genomes = [clone.with_key(i) for i in range(40)]
        assert len(self.evolver.speciate(population)) == 1

    def test_population_size_preserved(self):
        """Test every generation keeps the population size and valid genomes"""
        population = self.evolver.initial_population(5, 3, self.rng)
        for _ in range(5):
            scores = self.rng.random(len(population.genomes))
            population = self.evolver.epoch(population, scores, self.rng)
            assert len(population.genomes) == 40
            for genome in population.genomes:
                genome.validate()

    def test_full_size_population(self):
        """Test a 200-genome population reproduces to 200"""
        config = EvolutionConfig()
        population = NeatEvolver(config).initial_population(17, 3, self.rng)
        assert len(population.genomes) == 200
        nxt = epoch(population, self.rng.random(200), config, self.rng)
        assert len(nxt.genomes) == 200
        assert nxt.generation == 1

    def test_champion_survives_in_large_species(self):
        """Test the champion of a large species is copied unchanged"""
        population = self.evolver.initial_population(5, 3, self.rng)
        scores = np.full(40, 0.1)
        scores[7] = 1.0
        champion = population.genomes[7]
        nxt = self.evolver.epoch(population, scores, self.rng)
        assert champion in nxt.genomes

    def test_low_scoring_large_species_keeps_champion(self):
        """Test a large species with too little score for an offspring still passes on its best genome"""
        base = initial_genome(0, 5, 3, self.rng)

        def uniform(key, weight):
            return Genome(key, base.nodes, tuple(replace(c, weight=weight) for c in base.connections))

        genomes = [uniform(k, 5.0) for k in range(6)] + [uniform(k, -5.0) for k in range(6, 40)]
        population = self.evolver.initial_population(5, 3, self.rng)
        population.genomes = genomes
        scores = np.array([0.001] * 6 + [1.0] * 34)
        nxt = self.evolver.epoch(population, scores, self.rng)
        assert len(population.species) == 2
        assert genomes[0] in nxt.genomes
        assert len(nxt.genomes) == 40

    def test_every_member_in_one_species(self):
        """Test speciation assigns each genome to exactly one species"""
        population = self.evolver.initial_population(5, 3, self.rng)
        for _ in range(5):
            species = self.evolver.speciate(population)
            members = sorted(m for s in species for m in s.members)
            assert members == list(range(len(population.genomes)))
            population = self.evolver.epoch(population, self.rng.random(40), self.rng)

    def test_genome_keys_unique(self):
        """Test new genomes get fresh keys"""
        population = self.evolver.initial_population(5, 3, self.rng)
        seen = {g.key for g in population.genomes}
        for _ in range(3):
            population = self.evolver.epoch(population, self.rng.random(40), self.rng)
            fresh = [g.key for g in population.genomes if g.key not in seen]
            assert len(fresh) == len(set(fresh))
            seen |= set(fresh)

    def test_state_round_trip(self):
        """Test a population survives its checkpoint form"""
        population = self.evolver.initial_population(5, 3, self.rng)
        population = self.evolver.epoch(population, self.rng.random(40), self.rng)
        restored = type(population).from_state(population.to_state())
        assert restored.genomes == population.genomes
        assert restored.compatibility_threshold == population.compatibility_threshold
        assert [s.key for s in restored.species] == [s.key for s in population.species]

    def test_deterministic(self):
        """Test reproduction is reproducible for a seed"""
        def run(seed):
            rng = np.random.default_rng(seed)
            population = self.evolver.initial_population(5, 3, rng)
            for _ in range(3):
                population = self.evolver.epoch(population, rng.random(40), rng)
            return population.genomes
        assert run(9) == run(9)

    def test_rejects_bad_scores(self):
        """Test wrong-length or negative scores are rejected"""
        population = self.evolver.initial_population(5, 3, self.rng)
        with pytest.raises(ConfigurationError):
            self.evolver.epoch(population, np.ones(3), self.rng)
        with pytest.raises(ConfigurationError):
            self.evolver.epoch(population, np.full(40, -1.0), self.rng)
