"""Tests for post-evaluation, fitness curves, SOMs, densities and complexity tables"""

import numpy as np
import pytest
from scipy import stats

from noveltyswarm.core.analysis import (
    EvaluatedIndividual, SomConfig, best_per_run, compare_methods, complexity_table, density_2d,
    fitness_trajectory, least_complex, map_behaviours, post_evaluate, quantization_error, running_max,
    train_som,
)
from noveltyswarm.core.neuroevo import initial_genome
from noveltyswarm.core.sim import SimConfig
from noveltyswarm.core.tasks import Characterisation, TaskConfig, TaskKind, evaluate
from noveltyswarm.utils.errors import ConfigurationError
from noveltyswarm.utils.seeding import Stream, trial_seeds


class TestFitnessTrajectory:
    """Highest-so-far curves averaged over runs"""

    def test_hand_example(self):
        """Test the two-run hand example averages running maxima"""
        curve = fitness_trajectory([[0.1, 0.3, 0.2], [0.2, 0.2, 0.5]])
        np.testing.assert_allclose(curve, [0.15, 0.25, 0.4])

    def test_non_decreasing(self):
        """Test averaged curves never decrease"""
        rng = np.random.default_rng(0)
        curve = fitness_trajectory(rng.random((5, 40)))
        assert np.all(np.diff(curve) >= 0.0)

    def test_ragged_runs(self):
        """Test runs of different lengths are rejected"""
        with pytest.raises(ConfigurationError):
            fitness_trajectory([[0.1, 0.2], [0.3]])

    def test_no_runs(self):
        """Test no runs give an empty curve"""
        assert fitness_trajectory([]).size == 0

    def test_running_max_and_best(self):
        """Test running maximum and best-per-run helpers"""
        assert running_max([0.2, 0.1, 0.4]).tolist() == [0.2, 0.2, 0.4]
        assert best_per_run([[0.1, 0.7, 0.3], [0.5]]).tolist() == [0.7, 0.5]


class TestCompareMethods:
    """One-sided rank test between two groups of runs"""

    def test_clear_winner(self):
        """Test a clearly better group gets a small p-value"""
        better = [[0.8 + 0.01 * i] for i in range(10)]
        worse = [[0.2 + 0.01 * i] for i in range(10)]
        result = compare_methods(better, worse, generation=0)
        assert result.p_value < 0.001
        assert result.median_a > result.median_b

    def test_uses_running_max(self):
        """Test comparison reads the highest-so-far value, not the last one"""
        a = [[0.9, 0.1]] * 5
        b = [[0.5, 0.5]] * 5
        assert compare_methods(a, b, generation=1).median_a == pytest.approx(0.9)

    def test_empty_group(self):
        """Test an empty group is rejected"""
        with pytest.raises(ConfigurationError):
            compare_methods([], [[0.1]], generation=0)


class TestSom:
    """Kohonen map training and behaviour mapping"""

    def setup_method(self):
        """Set up a small map with a short schedule"""
        self.config = SomConfig(width=4, height=3, epochs=20)

    def test_defaults(self):
        """Test default grid, schedule and sampling"""
        config = SomConfig()
        assert (config.width, config.height, config.epochs) == (10, 10, 50)
        assert config.start_radius == 5.0
        assert (config.samples_per_epoch, config.batch_size) == (20_000, 32)

    def test_degenerate_data(self):
        """Test prototypes collapse onto a repeated descriptor"""
        data = np.full((30, 3), 0.4)
        grid = train_som(data, self.config, seed=1)
        np.testing.assert_allclose(grid.prototypes, 0.4)
        assert quantization_error(grid, data) == pytest.approx(0.0, abs=1e-12)

    def test_error_decreases(self):
        """Test quantization error falls over training"""
        rng = np.random.default_rng(2)
        data = np.vstack([rng.normal(c, 0.05, (50, 2)) for c in ([0.2, 0.2], [0.8, 0.3], [0.5, 0.9])])
        grid = train_som(data, self.config, seed=3)
        assert grid.errors[-1] < grid.errors[0]
        assert len(grid.errors) == 20

    def test_deterministic(self):
        """Test training is reproducible for a seed"""
        data = np.random.default_rng(4).random((40, 5))
        a = train_som(data, self.config, seed=5)
        b = train_som(data, self.config, seed=5)
        np.testing.assert_array_equal(a.prototypes, b.prototypes)

    def test_large_dataset_subsampled(self):
        """Test training draws a bounded sample per epoch and keeps prototypes inside the data hull"""
        data = np.random.default_rng(10).random((50_000, 3))
        config = SomConfig(width=4, height=3, epochs=3, samples_per_epoch=1000, batch_size=50)
        grid = train_som(data, config, seed=11)
        assert len(grid.errors) == 3
        assert np.all((grid.prototypes >= 0.0) & (grid.prototypes <= 1.0))
        assert grid.winners(data).shape == (50_000,)

    def test_batch_of_one_is_online_rule(self):
        """Test a single-descriptor batch moves prototypes by the classic online update"""
        config = SomConfig(width=2, height=1, epochs=1, samples_per_epoch=1, batch_size=1,
                           initial_learning_rate=0.5, final_learning_rate=0.5, initial_radius=1.0)
        data = np.array([[0.0, 0.0], [1.0, 1.0]])
        rng = np.random.default_rng(12)
        start = data[rng.integers(0, 2, size=2)].copy()
        x = data[rng.permutation(2)[0]]
        winner = int(np.argmin(((start - x) ** 2).sum(axis=1)))
        influence = np.exp(-np.array([(c - winner) ** 2 for c in range(2)]) / 2.0)
        expected = start + 0.5 * influence[:, None] * (x - start)
        grid = train_som(data, config, seed=12)
        np.testing.assert_allclose(grid.prototypes, expected, atol=1e-12)

    def test_rejects_empty_data(self):
        """Test training needs descriptors"""
        with pytest.raises(ConfigurationError):
            train_som(np.zeros((0, 3)), self.config, seed=0)

    def test_bad_schedule(self):
        """Test a rising learning rate is rejected"""
        with pytest.raises(ValueError):
            SomConfig(initial_learning_rate=0.01, final_learning_rate=0.5)

    def test_map_partitions_descriptors(self):
        """Test every descriptor lands in its nearest cell with its fitness"""
        rng = np.random.default_rng(6)
        data = rng.random((100, 3))
        fitness = rng.random(100)
        grid = train_som(data, self.config, seed=7)
        mapped = map_behaviours(grid, data, fitness)
        assert mapped.counts.shape == (3, 4)
        assert mapped.counts.sum() == 100
        winners = [int(np.argmin(np.linalg.norm(grid.prototypes - x, axis=1))) for x in data]
        for cell in range(12):
            members = [i for i, w in enumerate(winners) if w == cell]
            assert mapped.counts.flat[cell] == len(members)
            if members:
                assert mapped.mean_fitness.flat[cell] == pytest.approx(fitness[members].mean())
            else:
                assert np.isnan(mapped.mean_fitness.flat[cell])

    def test_map_fitness_length(self):
        """Test mapping needs one fitness per descriptor"""
        grid = train_som(np.random.default_rng(8).random((10, 2)), self.config, seed=0)
        with pytest.raises(ConfigurationError):
            map_behaviours(grid, np.zeros((3, 2)), [0.1])

    def test_serialises(self):
        """Test grid and map serialise, empty cells as null"""
        grid = train_som(np.random.default_rng(9).random((10, 2)), self.config, seed=0)
        mapped = map_behaviours(grid, np.zeros((0, 2)))
        assert len(grid.to_dict()["prototypes"]) == 12
        assert mapped.to_dict()["mean_fitness"][0][0] is None


class TestDensity:
    """2D histograms of descriptor components"""

    def test_total_count(self):
        """Test bin counts add up to the number of descriptors"""
        data = np.random.default_rng(10).random((500, 4))
        density = density_2d(data, x=1, y=3, bins=10)
        assert density.counts.sum() == 500
        assert density.counts.shape == (10, 10)
        assert density.components == (1, 3)

    def test_single_point(self):
        """Test a single descriptor fills exactly one bin"""
        density = density_2d([[0.05, 0.95]], bins=10)
        assert density.counts[0, 9] == 1
        assert density.counts.sum() == 1

    def test_uniform_chi_square(self):
        """Test uniform data passes a chi-square check"""
        data = np.random.default_rng(11).random((10_000, 2))
        counts = density_2d(data, bins=5).counts.ravel()
        assert stats.chisquare(counts).pvalue > 0.001

    def test_component_out_of_range(self):
        """Test components beyond the descriptor length are rejected"""
        with pytest.raises(ConfigurationError):
            density_2d(np.zeros((3, 2)), x=0, y=2)


class TestComplexityTable:
    """Least complex individual per fitness level"""

    def test_tie_breaks_on_generation(self):
        """Test equal complexities resolve to the earliest generation"""
        individuals = [EvaluatedIndividual(5, 0.9, 80), EvaluatedIndividual(2, 0.7, 80),
                       EvaluatedIndividual(1, 0.95, 90)]
        assert least_complex(individuals, 0.7) == EvaluatedIndividual(2, 0.7, 80)
        assert least_complex(individuals, 0.99) is None

    def test_table(self):
        """Test per-level minimum complexity across runs"""
        runs = [
            [EvaluatedIndividual(0, 0.62, 71), EvaluatedIndividual(4, 0.81, 75)],
            [EvaluatedIndividual(1, 0.66, 73), EvaluatedIndividual(9, 0.70, 72)],
        ]
        table = complexity_table(runs, [0.6, 0.8, 0.9])
        first, second, third = table.rows
        assert first.runs == 2
        assert first.mean_complexity == pytest.approx(71.5)
        assert first.mean_generation == pytest.approx(4.5)
        assert (second.runs, second.mean_complexity, second.mean_generation) == (1, 75.0, 4.0)
        assert third.runs == 0 and third.mean_complexity is None
        assert table.total_runs == 2

    def test_levels_must_ascend(self):
        """Test unsorted levels are rejected"""
        with pytest.raises(ConfigurationError):
            complexity_table([], [0.8, 0.6])


@pytest.mark.slow
class TestPostEvaluate:
    """Independent re-evaluation of champions"""

    def setup_method(self):
        """Set up a short aggregation task and a random controller"""
        self.task = TaskConfig(task=TaskKind.AGGREGATION, characterisation=Characterisation.BCM,
                               sim=SimConfig.aggregation(steps=50), trials=1)
        self.genome = initial_genome(0, 17, 3, np.random.default_rng(12))

    def test_single_trial_matches_evaluate(self):
        """Test one post-evaluation trial equals evaluating with the same seed"""
        seed = trial_seeds(99, 0, 1, Stream.POSTEVAL)[0]
        expected = evaluate(self.genome, self.task, [seed]).fitness
        assert post_evaluate(self.genome, self.task, 1, 99) == pytest.approx(expected)

    def test_deterministic(self):
        """Test post-evaluation is reproducible for a seed"""
        assert post_evaluate(self.genome, self.task, 3, 5) == post_evaluate(self.genome, self.task, 3, 5)

    def test_needs_trials(self):
        """Test post-evaluation needs at least one trial"""
        with pytest.raises(ConfigurationError):
            post_evaluate(self.genome, self.task, 0, 5)
