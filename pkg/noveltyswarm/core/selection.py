"""Selection scores from (fitness, novelty) pairs.

Regimes: fitness only, random, pure novelty, progressive minimal criteria
novelty (PMCNS), fixed minimal criteria novelty (MCNS) and linear
scalarization of normalised fitness and novelty.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from noveltyswarm.utils.errors import ConfigurationError
from noveltyswarm.utils.logging import LoggerMixin


class SelectionPolicy(str, Enum):
    """Selection regime"""
    FITNESS = "fitness"
    RANDOM = "random"
    NOVELTY = "novelty"
    PMCNS = "pmcns"
    MCNS = "mcns"
    SCALARIZATION = "scalarization"

    @property
    def needs_novelty(self) -> bool:
        return self in (SelectionPolicy.NOVELTY, SelectionPolicy.PMCNS,
                        SelectionPolicy.MCNS, SelectionPolicy.SCALARIZATION)


class SelectionConfig(BaseModel):
    """Policy and its parameters"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    policy: SelectionPolicy = Field(default=SelectionPolicy.FITNESS)
    percentile: float = Field(default=0.50, ge=0.0, le=1.0, description="PMCNS P")
    smoothing: float = Field(default=0.25, ge=0.0, le=1.0, description="PMCNS S")
    rho: float = Field(default=0.75, ge=0.0, le=1.0, description="Novelty weight in scalarization")
    minimal_criterion: float = Field(default=0.0, ge=0.0, description="Fixed criterion for MCNS")


@dataclass
class PmcnsState:
    """Progressive minimal criterion; ``frozen`` keeps it constant (MCNS)"""
    mc: float = 0.0
    percentile: float = 0.50
    smoothing: float = 0.25
    frozen: bool = False


@dataclass(frozen=True)
class ScoredIndividual:
    fitness: float
    novelty: float
    score: float


def score_fitness(fitnesses: Sequence[float]) -> np.ndarray:
    return np.asarray(fitnesses, dtype=float).copy()


def score_random(n: int, rng: np.random.Generator) -> np.ndarray:
    """n independent uniform draws in [0, 1)"""
    if n < 0:
        raise ConfigurationError("population size must be non-negative")
    return rng.random(n)


def nearest_rank_percentile(values: Sequence[float], p: float) -> float:
    """The ceil(p·n)-th order statistic (the minimum when p = 0)"""
    ordered = np.sort(np.asarray(values, dtype=float))
    if ordered.size == 0:
        raise ConfigurationError("percentile of an empty population")
    rank = max(1, math.ceil(p * ordered.size))
    return float(ordered[rank - 1])


def update_criterion(state: PmcnsState, fitnesses: Sequence[float]) -> float:
    """mc ← mc + max(0, (v_g − mc)·S); returns the new mc"""
    if state.frozen:
        return state.mc
    v = nearest_rank_percentile(fitnesses, state.percentile)
    state.mc = state.mc + max(0.0, (v - state.mc) * state.smoothing)
    return state.mc


def score_pmcns(fitnesses: Sequence[float], novelties: Sequence[float], state: PmcnsState) -> np.ndarray:
    """Novelty for individuals meeting the criterion, 0 otherwise"""
    fit = np.asarray(fitnesses, dtype=float)
    nov = np.asarray(novelties, dtype=float)
    if fit.shape != nov.shape:
        raise ConfigurationError("fitness and novelty lengths differ", [f"{fit.size} vs {nov.size}"])
    return np.where(fit >= state.mc, nov, 0.0)


def _normalise(values: np.ndarray) -> np.ndarray:
    low, high = values.min(), values.max()
    if high == low:
        return np.full_like(values, 0.5)
    return (values - low) / (high - low)


def score_scalarized(fitnesses: Sequence[float], novelties: Sequence[float], rho: float) -> np.ndarray:
    """(1−rho)·normalised fitness + rho·normalised novelty"""
    fit = np.asarray(fitnesses, dtype=float)
    nov = np.asarray(novelties, dtype=float)
    if fit.shape != nov.shape:
        raise ConfigurationError("fitness and novelty lengths differ", [f"{fit.size} vs {nov.size}"])
    if fit.size == 0:
        raise ConfigurationError("scalarization needs a non-empty population")
    if not 0.0 <= rho <= 1.0:
        raise ConfigurationError("rho must lie in [0, 1]", [f"rho={rho}"])
    return (1.0 - rho) * _normalise(fit) + rho * _normalise(nov)


class Selector(LoggerMixin):
    """Applies one policy generation after generation"""

    def __init__(self, config: SelectionConfig, state: Optional[PmcnsState] = None):
        self.config = config
        if state is None:
            state = PmcnsState(
                mc=config.minimal_criterion if config.policy is SelectionPolicy.MCNS else 0.0,
                percentile=config.percentile,
                smoothing=config.smoothing,
                frozen=config.policy is SelectionPolicy.MCNS,
            )
        self.state = state

    @property
    def criterion(self) -> Optional[float]:
        if self.config.policy in (SelectionPolicy.PMCNS, SelectionPolicy.MCNS):
            return self.state.mc
        return None

    def score(self, fitnesses: Sequence[float], novelties: Optional[Sequence[float]],
              rng: np.random.Generator) -> List[ScoredIndividual]:
        """Selection scores for one generation (PMCNS updates mc before gating)"""
        fit = np.asarray(fitnesses, dtype=float)
        policy = self.config.policy
        if policy.needs_novelty and novelties is None:
            raise ConfigurationError(f"policy {policy.value} needs novelty scores")
        nov = np.zeros_like(fit) if novelties is None else np.asarray(novelties, dtype=float)

        if policy is SelectionPolicy.FITNESS:
            scores = score_fitness(fit)
        elif policy is SelectionPolicy.RANDOM:
            scores = score_random(fit.size, rng)
        elif policy is SelectionPolicy.NOVELTY:
            scores = nov.copy()
        elif policy in (SelectionPolicy.PMCNS, SelectionPolicy.MCNS):
            if fit.size:
                update_criterion(self.state, fit)
            scores = score_pmcns(fit, nov, self.state)
        else:
            scores = score_scalarized(fit, nov, self.config.rho)

        return [ScoredIndividual(float(f), float(n), float(s)) for f, n, s in zip(fit, nov, scores)]
