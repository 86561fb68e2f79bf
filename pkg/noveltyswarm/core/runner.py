"""Experiment orchestration: evolve, resume, post-evaluate, export.

One generation of one run:

1. evaluate every genome on the generation's shared trial seeds (fan-out)
2. novelty scoring and archive insertion (single writer)
3. selection scores
4. persist evaluations, champion and stats
5. reproduce, then checkpoint

Every random stream is rebuilt from (run seed, generation, purpose), so a
run resumed from its checkpoint writes the same bytes as an uninterrupted
one.
"""

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from enum import Enum
from itertools import repeat
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from noveltyswarm.config.experiment import ExperimentConfig, load_config
from noveltyswarm.config.settings import get_settings
from noveltyswarm.core import analysis
from noveltyswarm.core.neuroevo import NeatEvolver, Population
from noveltyswarm.core.novelty import Archive, score_generation
from noveltyswarm.core.records import (
    ExperimentStore, GenerationStats, RunEntry, RunManifest, RunRecord, RunStatus,
)
from noveltyswarm.core.selection import PmcnsState, Selector
from noveltyswarm.core.tasks import EvaluationResult, evaluate, run_trial
from noveltyswarm.utils.errors import ConfigMismatchError, ConfigurationError, RunIncompleteError
from noveltyswarm.utils.io import read_csv, write_csv, write_json
from noveltyswarm.utils.logging import LoggerMixin, log_performance
from noveltyswarm.utils.seeding import Stream, derive_seed, generation_rng, run_seed, trial_seeds

GenerationCallback = Callable[[int, GenerationStats], None]


class ExportKind(str, Enum):
    TRAJECTORIES = "trajectories"
    TRAJECTORY_CURVES = "trajectory-curves"
    SOM = "som"
    DENSITY = "density"
    COMPLEXITY = "complexity"
    SUMMARY = "summary"


class ExperimentRunner(LoggerMixin):
    """Runs every evolutionary run of one experiment into its output directory"""

    def __init__(self, config: ExperimentConfig, workers: Optional[int] = None,
                 on_generation: Optional[GenerationCallback] = None):
        self.config = config
        self.task = config.task_config()
        self.workers = workers or get_settings().workers
        self.on_generation = on_generation
        self.store = ExperimentStore(config.output_dir)
        self.evolver = NeatEvolver(config.evolution)

    # manifest

    def prepare(self) -> RunManifest:
        """Create the manifest, or reopen it when the config hash matches"""
        digest = self.config.config_hash()
        if self.store.manifest_path.exists():
            manifest = self.store.load_manifest()
            if manifest.config_hash != digest:
                raise ConfigMismatchError(
                    "output directory holds a different experiment",
                    [f"manifest {manifest.config_hash[:12]}", f"config {digest[:12]}"],
                )
            return manifest
        manifest = RunManifest(
            config_hash=digest,
            master_seed=self.config.master_seed,
            generations=self.config.evolution.generations,
            runs=[
                RunEntry(index=i, seed=run_seed(self.config.master_seed, i),
                         path=self.store.run_dir(i).name)
                for i in range(self.config.runs)
            ],
        )
        write_json(self.store.config_path, self.config.canonical())
        self.store.save_manifest(manifest)
        self.logger.info("Experiment created", output_dir=str(self.store.root), runs=self.config.runs,
                         config_hash=digest[:12])
        return manifest

    def run(self) -> RunManifest:
        manifest = self.prepare()
        started = time.time()
        with self._executor() as executor:
            for entry in manifest.runs:
                if entry.status is RunStatus.COMPLETE:
                    continue
                entry.status = RunStatus.RUNNING
                self.store.save_manifest(manifest)
                self._run_single(entry, manifest, executor)
                entry.status = RunStatus.COMPLETE
                self.store.save_manifest(manifest)
        log_performance("experiment", time.time() - started, runs=len(manifest.runs))
        return manifest

    def _executor(self):
        if self.workers > 1:
            return ProcessPoolExecutor(max_workers=self.workers)
        return _InlineExecutor()

    # one run

    def _run_single(self, entry: RunEntry, manifest: RunManifest, executor) -> RunRecord:
        cfg = self.config
        seed = entry.seed
        checkpoint = self.store.load_checkpoint(entry.index)
        if checkpoint is not None:
            population = Population.from_state(checkpoint["population"])
            archive = Archive.from_state(checkpoint["archive"], cfg.novelty)
            selector = Selector(cfg.selection, PmcnsState(**checkpoint["pmcns"]))
            record = RunRecord.model_validate(checkpoint["record"])
            self.logger.info("Run resumed", run=entry.index, generation=population.generation)
        else:
            population = self.evolver.initial_population(
                self.task.n_inputs, self.task.n_outputs, generation_rng(seed, 0, Stream.INIT)
            )
            archive = Archive(cfg.novelty)
            selector = Selector(cfg.selection)
            record = RunRecord(run_index=entry.index, seed=seed)
            self.logger.info("Run started", run=entry.index, seed=seed)

        for generation in range(population.generation, cfg.evolution.generations):
            started = time.time()
            genomes = population.genomes
            seeds = trial_seeds(seed, generation, self.task.trials)
            chunk = max(1, len(genomes) // (4 * self.workers))
            results: List[EvaluationResult] = list(
                executor.map(evaluate, genomes, repeat(self.task), repeat(seeds), chunksize=chunk)
            )
            fitness = np.array([r.fitness for r in results])
            descriptors = np.vstack([r.descriptor for r in results])

            novelty, archive = score_generation(
                descriptors, archive, cfg.novelty, generation_rng(seed, generation, Stream.NOVELTY), generation
            )
            scored = selector.score(fitness, novelty, generation_rng(seed, generation, Stream.SELECTION))

            best = int(np.argmax(fitness))
            champion = genomes[best]
            self.store.write_evaluations(entry.index, generation, genomes, results, scored)
            self.store.write_champion(entry.index, generation, champion)

            last = generation == cfg.evolution.generations - 1
            if last:
                species = len(self.evolver.speciate(population))
            else:
                current = population
                population = self.evolver.epoch(
                    current, [s.score for s in scored], generation_rng(seed, generation, Stream.REPRODUCTION)
                )
                # epoch leaves this generation's speciation on the old population
                species = len(current.species)

            stats = GenerationStats(
                generation=generation,
                best_fitness=float(fitness[best]),
                mean_fitness=float(fitness.mean()),
                species=species,
                archive_size=len(archive),
                mc=selector.criterion,
                champion_key=champion.key,
                champion_complexity=champion.complexity,
                diverged=sum(r.diverged for r in results),
            )
            record.append(stats)
            self.store.write_generations(record)
            archive.export_csv(self.store.archive_path(entry.index))
            if last:
                population.generation = generation + 1
            self.store.write_checkpoint(entry.index, {
                "generation": generation + 1,
                "population": population.to_state(),
                "archive": archive.to_state(),
                "pmcns": asdict(selector.state),
                "record": record.model_dump(mode="json"),
            })
            entry.completed_generations = generation + 1
            self.store.save_manifest(manifest)

            self.logger.info(
                "Generation complete",
                run=entry.index,
                generation=generation,
                best=stats.best_fitness,
                mean=stats.mean_fitness,
                species=stats.species,
                archive=stats.archive_size,
                mc=stats.mc,
                duration_ms=round((time.time() - started) * 1000.0, 1),
            )
            if self.on_generation is not None:
                self.on_generation(entry.index, stats)

        self.logger.info("Run complete", run=entry.index, generations=len(record.generations))
        return record


class _InlineExecutor:
    """Executor stand-in evaluating in the calling process"""

    def map(self, fn, *iterables, chunksize: int = 1):
        return map(fn, *iterables)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def run_experiment(config: ExperimentConfig, workers: Optional[int] = None,
                   on_generation: Optional[GenerationCallback] = None) -> RunManifest:
    """Execute (or continue) every run of ``config``"""
    return ExperimentRunner(config, workers, on_generation).run()


def load_experiment(manifest_path: Path, config_path: Optional[Path] = None):
    """Reopen an experiment; a supplied config must hash to the manifest's value"""
    store = ExperimentStore.from_manifest_path(manifest_path)
    manifest = store.load_manifest()
    source = Path(config_path) if config_path is not None else store.config_path
    config = load_config(source, output_dir=store.root)
    if config.config_hash() != manifest.config_hash:
        raise ConfigMismatchError(
            "configuration changed since the experiment started",
            [f"manifest {manifest.config_hash[:12]}", f"config {config.config_hash()[:12]}"],
        )
    return config, store, manifest


def resume(manifest_path: Path, config_path: Optional[Path] = None, workers: Optional[int] = None,
           on_generation: Optional[GenerationCallback] = None) -> RunManifest:
    config, _, _ = load_experiment(manifest_path, config_path)
    return run_experiment(config, workers, on_generation)


def _finished_runs(store: ExperimentStore, manifest: RunManifest) -> List[RunEntry]:
    runs = [r for r in manifest.completed_runs() if r.completed_generations > 0]
    if not runs:
        raise RunIncompleteError("run incomplete: no run has completed generations")
    return runs


def posteval(manifest_path: Path, trials: Optional[int] = None) -> Dict[int, Path]:
    """Post-evaluate every generation's champion of every completed run"""
    config, store, manifest = load_experiment(manifest_path)
    task = config.task_config()
    n_trials = trials or config.posteval_trials
    written = {}
    for entry in _finished_runs(store, manifest):
        record = store.load_record(entry)
        rows = []
        for stats in record.generations:
            champion = store.load_champion(entry.index, stats.generation)
            seed = derive_seed(entry.seed, Stream.POSTEVAL, stats.generation)
            value = analysis.post_evaluate(champion, task, n_trials, seed)
            rows.append([stats.generation, champion.key, stats.best_fitness, value])
        written[entry.index] = write_csv(
            store.posteval_path(entry.index),
            ["generation", "champion_key", "fitness", "posteval_fitness"],
            rows,
        )
        store.logger.info("Champions post-evaluated", run=entry.index, trials=n_trials, generations=len(rows))
    return written


class Exporter(LoggerMixin):
    """Turns persisted records into analysis files under ``<output_dir>/exports``"""

    def __init__(self, config: ExperimentConfig, store: ExperimentStore, manifest: RunManifest,
                 out_dir: Optional[Path] = None):
        self.config = config
        self.store = store
        self.manifest = manifest
        self.out_dir = Path(out_dir) if out_dir is not None else store.root / "exports"
        self.runs = _finished_runs(store, manifest)
        self.records = [store.load_record(entry) for entry in self.runs]

    def export(self, kind: ExportKind) -> List[Path]:
        handler = {
            ExportKind.TRAJECTORIES: self.trajectories,
            ExportKind.TRAJECTORY_CURVES: self.trajectory_curves,
            ExportKind.SOM: self.som,
            ExportKind.DENSITY: self.density,
            ExportKind.COMPLEXITY: self.complexity,
            ExportKind.SUMMARY: self.summary,
        }[kind]
        paths = handler()
        self.logger.info("Exported", kind=kind.value, files=len(paths))
        return paths

    def _posteval_curve(self, entry: RunEntry) -> Optional[List[float]]:
        path = self.store.posteval_path(entry.index)
        if not path.exists():
            return None
        return [float(row["posteval_fitness"]) for row in read_csv(path)]

    def _best_generation(self, record: RunRecord) -> GenerationStats:
        return max(record.generations, key=lambda g: (g.best_fitness, -g.generation))

    def trajectories(self) -> List[Path]:
        """One trial trajectory of each run's best champion"""
        task = self.config.task_config()
        paths = []
        for entry, record in zip(self.runs, self.records):
            best = self._best_generation(record)
            champion = self.store.load_champion(entry.index, best.generation)
            target = self.out_dir / "trajectories" / f"run_{entry.index:03d}.csv.gz"
            run_trial(champion, task, derive_seed(entry.seed, Stream.ANALYSIS, best.generation), target)
            paths.append(target)
        return paths

    def trajectory_curves(self) -> List[Path]:
        """Long-format per-run curves plus the cross-run mean of the highest fitness so far"""
        posteval = [self._posteval_curve(entry) for entry in self.runs]
        with_posteval = all(p is not None for p in posteval)
        header = ["run", "generation", "best_fitness", "best_so_far"]
        if with_posteval:
            header += ["posteval_fitness", "posteval_best_so_far"]
        rows = []
        for i, (entry, record) in enumerate(zip(self.runs, self.records)):
            curve = record.best_curve()
            so_far = analysis.running_max(curve)
            post = analysis.running_max(posteval[i]) if with_posteval else None
            for g, value in enumerate(curve):
                row = [entry.index, g, value, float(so_far[g])]
                if with_posteval:
                    row += [float(posteval[i][g]), float(post[g])]
                rows.append(row)
        runs_path = write_csv(self.out_dir / "trajectory_runs.csv", header, rows)

        mean = analysis.fitness_trajectory([r.best_curve() for r in self.records])
        mean_header = ["generation", "mean_best_so_far"]
        columns = [mean]
        if with_posteval:
            mean_header.append("mean_posteval_best_so_far")
            columns.append(analysis.fitness_trajectory(posteval))
        curve_path = write_csv(
            self.out_dir / "trajectory_curve.csv",
            mean_header,
            ([g] + [float(c[g]) for c in columns] for g in range(len(mean))),
        )
        return [runs_path, curve_path]

    def _all_descriptors(self):
        descriptors, fitnesses = [], []
        for entry in self.runs:
            for g in range(entry.completed_generations):
                rows = self.store.load_evaluations(entry.index, g)
                descriptors.append(self.store.load_descriptors(entry.index, g))
                fitnesses.extend(float(row["fitness"]) for row in rows)
        return np.vstack(descriptors), np.array(fitnesses)

    def som(self) -> List[Path]:
        """SOM over every evaluated descriptor, with overall and per-run occupancy"""
        descriptors, fitnesses = self._all_descriptors()
        grid = analysis.train_som(descriptors, self.config.som,
                                  derive_seed(self.config.master_seed, Stream.ANALYSIS))
        per_run = {}
        for entry in self.runs:
            run_desc = np.vstack([self.store.load_descriptors(entry.index, g)
                                  for g in range(entry.completed_generations)])
            per_run[str(entry.index)] = analysis.map_behaviours(grid, run_desc).to_dict()
        payload = {
            "grid": grid.to_dict(),
            "map": analysis.map_behaviours(grid, descriptors, fitnesses).to_dict(),
            "runs": per_run,
        }
        return [write_json(self.out_dir / "som.json", payload)]

    def density(self) -> List[Path]:
        descriptors, _ = self._all_descriptors()
        d = self.config.density
        return [write_json(self.out_dir / "density.json",
                           analysis.density_2d(descriptors, d.x, d.y, d.bins).to_dict())]

    def complexity(self) -> List[Path]:
        runs = [self.store.load_individuals(entry, entry.completed_generations) for entry in self.runs]
        table = analysis.complexity_table(runs, self.config.levels)
        return [write_csv(
            self.out_dir / "complexity.csv",
            ["level", "mean_generation", "mean_complexity", "runs"],
            ([r.level, "" if r.mean_generation is None else r.mean_generation,
              "" if r.mean_complexity is None else r.mean_complexity, r.runs] for r in table.rows),
        )]

    def summary(self) -> List[Path]:
        """Highest fitness of each run (box-plot data)"""
        rows = []
        for entry, record in zip(self.runs, self.records):
            best = self._best_generation(record)
            post = self._posteval_curve(entry)
            rows.append([
                entry.index, entry.seed, best.best_fitness, best.generation, best.champion_key,
                "" if post is None else max(post),
            ])
        return [write_csv(
            self.out_dir / "summary.csv",
            ["run", "seed", "best_fitness", "best_generation", "champion_key", "posteval_best"],
            rows,
        )]


def export(manifest_path: Path, what: str, out_dir: Optional[Path] = None) -> List[Path]:
    """Write one kind of analysis export for a finished experiment"""
    try:
        kind = ExportKind(what)
    except ValueError as e:
        raise ConfigurationError(f"unknown export kind {what!r}", [k.value for k in ExportKind]) from e
    config, store, manifest = load_experiment(manifest_path)
    return Exporter(config, store, manifest, out_dir).export(kind)
