#!/usr/bin/env python3
"""Command-line interface for noveltyswarm experiments"""

import sys
from pathlib import Path
from typing import Optional

import click
from rich.console import Console
from rich.panel import Panel
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn
from rich.table import Table

from noveltyswarm import __version__
from noveltyswarm.config.experiment import ExperimentConfig, list_presets, load_config, preset
from noveltyswarm.config.settings import get_settings
from noveltyswarm.core import runner
from noveltyswarm.core.records import GenerationStats, RunManifest
from noveltyswarm.utils.errors import NoveltySwarmError
from noveltyswarm.utils.io import write_json
from noveltyswarm.utils.logging import get_logger, log_error, setup_logging

console = Console(stderr=True)
logger = get_logger(__name__)


def _fail(error: Exception) -> None:
    """Report an error and exit with its code (2 for anything unexpected)"""
    if isinstance(error, NoveltySwarmError):
        console.print(f"[red]Error: {error}[/red]")
        sys.exit(error.exit_code)
    log_error(error)
    console.print(f"[red]Fatal error: {error}[/red]")
    sys.exit(2)


def _manifest_table(manifest: RunManifest) -> Table:
    table = Table(title=f"Experiment {manifest.config_hash[:12]}")
    table.add_column("Run", justify="right")
    table.add_column("Seed", justify="right")
    table.add_column("Status")
    table.add_column("Generations", justify="right")
    for entry in manifest.runs:
        table.add_row(str(entry.index), str(entry.seed), entry.status.value,
                      f"{entry.completed_generations}/{manifest.generations}")
    return table


class _GenerationProgress:
    """Rich progress bar fed by the runner's per-generation callback"""

    def __init__(self, runs: int, generations: int, enabled: bool):
        self.enabled = enabled and runs * generations > 0
        self.progress = Progress(
            TextColumn("[bold blue]{task.description}"),
            BarColumn(),
            MofNCompleteColumn(),
            TextColumn("best {task.fields[best]:.4f}"),
            TimeElapsedColumn(),
            console=console,
        )
        self.task = self.progress.add_task("evolving", total=runs * generations, best=0.0)

    def __call__(self, run_index: int, stats: GenerationStats) -> None:
        self.progress.update(self.task, advance=1, description=f"run {run_index}", best=stats.best_fitness)

    def __enter__(self):
        if self.enabled:
            self.progress.start()
        return self

    def __exit__(self, *exc):
        if self.enabled:
            self.progress.stop()
        return False


def _evolve(config: ExperimentConfig, workers: Optional[int], resume_from: Optional[Path] = None,
            config_path: Optional[Path] = None) -> None:
    settings = get_settings()
    with _GenerationProgress(config.runs, config.evolution.generations, settings.progress) as progress:
        if resume_from is None:
            manifest = runner.run_experiment(config, workers, progress)
        else:
            manifest = runner.resume(resume_from, config_path, workers, progress)
    console.print(_manifest_table(manifest))


@click.group()
@click.version_option(__version__, prog_name="noveltyswarm")
@click.option('--debug', is_flag=True, help='Enable debug logging')
@click.option('--log-format', type=click.Choice(['json', 'console']), default=None,
              help='Override NOVELTYSWARM_LOG_FORMAT')
def main(debug: bool, log_format: Optional[str]):
    """noveltyswarm - neuroevolution of swarm controllers with novelty search"""
    settings = get_settings()
    if debug:
        settings.debug = True
        settings.log_level = "DEBUG"
    if log_format:
        settings.log_format = log_format
    setup_logging()


@main.command()
@click.argument('config_path', type=click.Path(path_type=Path))
@click.option('--output-dir', type=click.Path(path_type=Path), default=None,
              help='Override the output directory in the config')
@click.option('--workers', type=int, default=None, help='Evaluation processes (default NOVELTYSWARM_WORKERS)')
def evolve(config_path: Path, output_dir: Optional[Path], workers: Optional[int]):
    """Run every evolutionary run of an experiment config"""
    try:
        config = load_config(config_path, output_dir)
        console.print(Panel.fit(
            f"[bold]{config.name}[/bold]\n"
            f"task {config.task.value} · {config.characterisation.value} · {config.selection.policy.value}\n"
            f"{config.runs} runs × {config.evolution.generations} generations × "
            f"{config.evolution.population_size} individuals",
            title="noveltyswarm",
        ))
        _evolve(config, workers)
    except Exception as e:
        _fail(e)


@main.command()
@click.argument('manifest_path', type=click.Path(path_type=Path))
@click.option('--config', 'config_path', type=click.Path(path_type=Path), default=None,
              help='Config to check against the manifest hash')
@click.option('--workers', type=int, default=None)
def resume(manifest_path: Path, config_path: Optional[Path], workers: Optional[int]):
    """Continue an interrupted experiment from its last completed generation"""
    try:
        config, _, _ = runner.load_experiment(manifest_path, config_path)
        _evolve(config, workers, resume_from=manifest_path, config_path=config_path)
    except Exception as e:
        _fail(e)


@main.command()
@click.argument('manifest_path', type=click.Path(path_type=Path))
@click.option('--trials', type=click.IntRange(min=1), default=None,
              help='Trials per champion (default from config)')
def posteval(manifest_path: Path, trials: Optional[int]):
    """Post-evaluate each generation's champion"""
    try:
        written = runner.posteval(manifest_path, trials)
        for index, path in sorted(written.items()):
            console.print(f"[green]✓ run {index}[/green] {path}")
    except Exception as e:
        _fail(e)


@main.command()
@click.argument('manifest_path', type=click.Path(path_type=Path))
@click.argument('what', type=click.Choice([k.value for k in runner.ExportKind]))
@click.option('--out', 'out_dir', type=click.Path(path_type=Path), default=None,
              help='Export directory (default <output_dir>/exports)')
def export(manifest_path: Path, what: str, out_dir: Optional[Path]):
    """Write analysis files for a finished experiment"""
    try:
        for path in runner.export(manifest_path, what, out_dir):
            console.print(f"[green]✓[/green] {path}")
    except Exception as e:
        _fail(e)


@main.command()
@click.argument('config_path', type=click.Path(path_type=Path))
def validate(config_path: Path):
    """Check a config file and print its hash"""
    try:
        config = load_config(config_path)
        task = config.task_config()
        click.echo(f"valid  {config.config_hash()}")
        console.print(
            f"[green]✓[/green] {task.task.value}/{task.characterisation.value}: "
            f"{task.n_inputs} inputs, initial complexity {task.initial_complexity}, "
            f"descriptor length {task.descriptor_length}"
        )
    except Exception as e:
        _fail(e)


@main.command(name="preset")
@click.argument('name', required=False)
@click.argument('path', required=False, type=click.Path(path_type=Path))
@click.option('--list', 'show_list', is_flag=True, help='List available presets')
def preset_command(name: Optional[str], path: Optional[Path], show_list: bool):
    """Write a named preset config as JSON"""
    try:
        if show_list or name is None:
            for preset_name in list_presets():
                click.echo(preset_name)
            return
        config = preset(name)
        target = path or Path(f"{name}.json")
        write_json(target, config.model_dump(mode="json"))
        console.print(f"[green]✓[/green] {target}")
    except Exception as e:
        _fail(e)


if __name__ == "__main__":
    main()
