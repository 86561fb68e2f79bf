#!/usr/bin/env python3
"""Desk-scale statistical acceptance checks for noveltyswarm.

Runs small experiments per method and prints a pass/fail report. Runs are
persisted under --out, so an interrupted report resumes where it stopped.
Expect several hours for the full set with a handful of workers.
"""

import sys
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import click
import numpy as np
from rich.console import Console
from rich.table import Table

from noveltyswarm.config.experiment import ExperimentConfig, preset
from noveltyswarm.core.analysis import compare_methods
from noveltyswarm.core.records import ExperimentStore
from noveltyswarm.core.runner import run_experiment
from noveltyswarm.utils.logging import get_logger, setup_logging

console = Console()
logger = get_logger("acceptance")

Check = Tuple[bool, str]


class AcceptanceSuite:
    """Runs (or reuses) the experiments behind each statistical criterion"""

    def __init__(self, out_dir: Path, workers: int, master_seed: int):
        self.out_dir = out_dir
        self.workers = workers
        self.master_seed = master_seed

    def curves(self, name: str, base: str, **overrides) -> List[List[float]]:
        """Best-fitness-per-generation curve of each run of one method"""
        config: ExperimentConfig = preset(
            base, name=name, master_seed=self.master_seed, output_dir=str(self.out_dir / name), **overrides
        )
        started = time.time()
        manifest = run_experiment(config, self.workers)
        store = ExperimentStore(config.output_dir)
        logger.info("Method finished", method=name, runs=len(manifest.runs), seconds=round(time.time() - started))
        return [store.load_record(entry).best_curve() for entry in manifest.runs]

    def random_population_anchor(self) -> Check:
        """Mean best fitness of 30 random initial populations of 200 on aggregation"""
        curves = self.curves("initial-populations", "aggregation",
                             selection={"policy": "fitness"},
                             evolution={"population_size": 200, "generations": 1})
        mean = float(np.mean([c[0] for c in curves]))
        return abs(mean - 0.55) <= 0.10, f"mean initial best {mean:.3f} (target 0.55 ± 0.10)"

    def resource_random_baseline(self) -> Check:
        curves = self.curves("resource-random", "desk-resource",
                             selection={"policy": "random"},
                             evolution={"population_size": 50, "generations": 100}, runs=5)
        best = max(max(c) for c in curves)
        return best <= 0.25, f"highest fitness under random selection {best:.3f} (limit 0.25)"

    def bootstrapping_trend(self) -> Check:
        novelty = self.curves("aggregation-novelty", "desk-aggregation")
        fitness = self.curves("aggregation-fitness", "desk-aggregation", selection={"policy": "fitness"})
        result = compare_methods(novelty, fitness, generation=20)
        return result.p_value < 0.1, (
            f"gen 20 medians novelty {result.median_a:.3f} vs fitness {result.median_b:.3f}, "
            f"p = {result.p_value:.3f}"
        )

    def deception_trend(self) -> Check:
        novelty = [max(c) for c in self.curves("resource-novelty", "desk-resource")]
        fitness = [max(c) for c in self.curves("resource-fitness", "desk-resource",
                                               selection={"policy": "fitness"})]
        stalled_fitness = sum(b < 0.3 for b in fitness)
        stalled_novelty = sum(b < 0.3 for b in novelty)
        passed = np.median(novelty) > np.median(fitness) and stalled_fitness >= 3 and stalled_novelty <= 1
        return bool(passed), (
            f"medians novelty {np.median(novelty):.3f} vs fitness {np.median(fitness):.3f}; "
            f"stalled below 0.3: fitness {stalled_fitness}/{len(fitness)}, novelty {stalled_novelty}/{len(novelty)}"
        )

    def variant_ordering(self) -> Check:
        extra = {"characterisation": "bextra"}
        novelty = np.median([max(c) for c in self.curves("bextra-novelty", "desk-resource", **extra)])
        pmcns = np.median([max(c) for c in self.curves(
            "bextra-pmcns", "desk-resource", selection={"policy": "pmcns", "percentile": 0.5, "smoothing": 0.25},
            **extra)])
        scalarized = np.median([max(c) for c in self.curves(
            "bextra-scalarization", "desk-resource", selection={"policy": "scalarization", "rho": 0.75},
            **extra)])
        passed = pmcns >= novelty and scalarized >= novelty
        return bool(passed), f"medians pmcns {pmcns:.3f}, scalarization {scalarized:.3f}, novelty {novelty:.3f}"


CRITERIA: Dict[str, Tuple[str, Callable[[AcceptanceSuite], Check]]] = {
    "3": ("random population fitness anchor", AcceptanceSuite.random_population_anchor),
    "5": ("resource random baseline", AcceptanceSuite.resource_random_baseline),
    "6": ("bootstrapping trend", AcceptanceSuite.bootstrapping_trend),
    "7": ("deception trend", AcceptanceSuite.deception_trend),
    "8": ("variant ordering", AcceptanceSuite.variant_ordering),
}


@click.command()
@click.option('--out', 'out_dir', type=click.Path(path_type=Path), default=Path("runs/acceptance"),
              help='Where the experiments are stored')
@click.option('--workers', type=int, default=4, help='Evaluation processes')
@click.option('--seed', 'master_seed', type=int, default=2024, help='Master seed for every method')
@click.option('--only', multiple=True, type=click.Choice(sorted(CRITERIA)), help='Run selected criteria')
def main(out_dir: Path, workers: int, master_seed: int, only: Optional[Tuple[str, ...]]):
    """Run the long statistical checks and print a report"""
    setup_logging()
    suite = AcceptanceSuite(out_dir, workers, master_seed)
    table = Table(title="noveltyswarm acceptance")
    table.add_column("#", justify="right")
    table.add_column("Criterion")
    table.add_column("Result")
    table.add_column("Detail")

    failed = 0
    for key in only or sorted(CRITERIA):
        title, check = CRITERIA[key]
        console.print(f"[bold blue]Running {key}: {title}[/bold blue]")
        passed, detail = check(suite)
        failed += not passed
        table.add_row(key, title, "[green]PASS[/green]" if passed else "[red]FAIL[/red]", detail)

    console.print(table)
    sys.exit(1 if failed else 0)


if __name__ == "__main__":
    main()
