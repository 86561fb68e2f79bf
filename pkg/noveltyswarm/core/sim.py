"""Deterministic 2D kinematic simulator for small robot swarms.

Square walled arena, circular differential-drive robots, sector sensors,
pairwise collision relaxation and an energy/charging model. All per-robot
state lives in numpy arrays indexed by robot id, optionally behind a leading
trial axis so that all trials of one evaluation advance together; one
``step`` advances the world by one control tick of ``dt`` seconds.
"""

import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from noveltyswarm.utils.errors import ConfigurationError
from noveltyswarm.utils.io import write_csv_gz
from noveltyswarm.utils.logging import get_logger

logger = get_logger(__name__)

N_SECTORS = 8
SECTOR_WIDTH = 2.0 * math.pi / N_SECTORS
UNIT_X = np.array([1.0, 0.0])


class EnergyModel(BaseModel):
    """Battery drain and charging station parameters"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    e_max: float = Field(default=1000.0, gt=0.0, description="Full battery (units)")
    idle_drain: float = Field(default=5.0, ge=0.0, description="Units/s with motors off")
    full_drain: float = Field(default=10.0, ge=0.0, description="Units/s at full speed")
    charge_rate: float = Field(default=100.0, ge=0.0, description="Units/s while charging")
    station_radius: float = Field(default=0.04, gt=0.0, description="Charging station radius (m)")

    def drain(self, wheels: np.ndarray, max_speed: float) -> np.ndarray:
        """Units/s for each robot, linear in mean absolute wheel speed"""
        effort = np.abs(wheels).sum(axis=-1) / (2.0 * max_speed)
        return self.idle_drain + (self.full_drain - self.idle_drain) * effort


class SimConfig(BaseModel):
    """Arena, robot and sensor geometry"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    arena_size: float = Field(default=3.0, gt=0.0, description="Arena side (m)")
    dt: float = Field(default=0.1, gt=0.0, description="Control tick (s)")
    steps: int = Field(default=2500, ge=1, description="Ticks per trial")
    robot_diameter: float = Field(default=0.08, gt=0.0)
    max_speed: float = Field(default=0.12, gt=0.0, description="Top wheel speed (m/s)")
    obstacle_range: float = Field(default=0.10, gt=0.0)
    robot_range: float = Field(default=0.25, gt=0.0)
    station_range: float = Field(default=1.0, gt=0.0)
    min_separation: float = Field(default=0.50, ge=0.0, description="Initial pairwise spacing (m)")
    swarm_size: int = Field(default=7, ge=1)
    energy_enabled: bool = Field(default=False, description="Resource-sharing energy model")
    energy: EnergyModel = Field(default_factory=EnergyModel)
    count_includes_self: bool = Field(default=True)
    sample_period: float = Field(default=5.0, gt=0.0, description="Metric sampling period (s)")
    collision_iterations: int = Field(default=5, ge=1)
    max_placement_rejections: int = Field(default=100_000, ge=1)

    @model_validator(mode="after")
    def check_geometry(self) -> "SimConfig":
        radius = self.robot_diameter / 2.0
        bad = [
            name for name in ("obstacle_range", "robot_range", "station_range")
            if getattr(self, name) <= radius
        ]
        if bad:
            raise ValueError(f"sensor ranges must exceed the robot radius: {', '.join(bad)}")
        if self.arena_size <= self.robot_diameter:
            raise ValueError("arena_size must exceed robot_diameter")
        return self

    @classmethod
    def aggregation(cls, **overrides) -> "SimConfig":
        return cls(**{"swarm_size": 7, "energy_enabled": False, **overrides})

    @classmethod
    def resource(cls, **overrides) -> "SimConfig":
        return cls(**{"swarm_size": 5, "energy_enabled": True, **overrides})

    @property
    def radius(self) -> float:
        return self.robot_diameter / 2.0

    @property
    def d_max(self) -> float:
        """Half the arena diagonal"""
        return self.arena_size * math.sqrt(2.0) / 2.0

    @property
    def sample_interval(self) -> int:
        """Ticks between metric samples"""
        return max(1, int(round(self.sample_period / self.dt)))

    @property
    def n_inputs(self) -> int:
        # resource sensors: obstacle, robot, station rings + charging flag + energy
        return 3 * N_SECTORS + 2 if self.energy_enabled else 2 * N_SECTORS + 1

    @property
    def station_position(self) -> np.ndarray:
        return np.array([self.arena_size / 2.0, self.arena_size / 2.0])


@dataclass(frozen=True)
class RobotState:
    """Snapshot of one robot"""
    position: Tuple[float, float]
    heading: float
    wheels: Tuple[float, float]
    stopped: bool
    energy: float
    alive: bool


@dataclass
class TrialHistory:
    """Per-tick records; index 0 is the initial placement.

    Arrays are shaped (ticks, *batch, N, ...) where ``batch`` is empty for a
    single trial and (trials,) for a batched world.
    """
    positions: np.ndarray
    headings: np.ndarray
    energy: np.ndarray
    alive: np.ndarray
    speeds: np.ndarray
    station_distance: np.ndarray
    charging: np.ndarray

    @classmethod
    def allocate(cls, steps: int, shape: Tuple[int, ...]) -> "TrialHistory":
        ticks = (steps + 1,) + tuple(shape)
        return cls(
            positions=np.zeros(ticks + (2,)),
            headings=np.zeros(ticks),
            energy=np.zeros(ticks),
            alive=np.zeros(ticks, dtype=bool),
            speeds=np.zeros(ticks),
            station_distance=np.zeros(ticks),
            charging=np.zeros(ticks, dtype=bool),
        )

    def select(self, trial: int) -> "TrialHistory":
        return TrialHistory(**{f.name: getattr(self, f.name)[:, trial] for f in fields(self)})


@dataclass
class WorldState:
    """Arena contents at one tick plus the history of the trial so far.

    Per-robot arrays may carry a leading trial axis; every kernel in this
    module broadcasts over it, so all trials of an evaluation advance
    together.
    """
    config: SimConfig
    positions: np.ndarray
    headings: np.ndarray
    wheels: np.ndarray
    stopped: np.ndarray
    energy: np.ndarray
    alive: np.ndarray
    charging: np.ndarray
    station: Optional[np.ndarray] = None
    tick: int = 0
    diverged: bool = False
    history: Optional[TrialHistory] = None

    def __post_init__(self):
        if self.history is None:
            self.history = TrialHistory.allocate(self.config.steps, self.alive.shape)
            self.record()

    @classmethod
    def from_positions(cls, config: SimConfig, positions, headings=None) -> "WorldState":
        positions = np.array(positions, dtype=float)
        if positions.ndim != 3:
            positions = positions.reshape(-1, 2)
        shape = positions.shape[:-1]
        if headings is None:
            headings = np.zeros(shape)
        return cls(
            config=config,
            positions=positions,
            headings=np.array(headings, dtype=float).reshape(shape),
            wheels=np.zeros(shape + (2,)),
            stopped=np.zeros(shape, dtype=bool),
            energy=np.full(shape, config.energy.e_max),
            alive=np.ones(shape, dtype=bool),
            charging=np.zeros(shape, dtype=bool),
            station=config.station_position if config.energy_enabled else None,
        )

    @property
    def n_robots(self) -> int:
        return self.positions.shape[-2]

    @property
    def batched(self) -> bool:
        return self.positions.ndim == 3

    @property
    def n_trials(self) -> int:
        return self.positions.shape[0] if self.batched else 1

    @property
    def robots(self) -> List[RobotState]:
        return [
            RobotState(
                position=(float(p[0]), float(p[1])),
                heading=float(h),
                wheels=(float(w[0]), float(w[1])),
                stopped=bool(s),
                energy=float(e),
                alive=bool(a),
            )
            for p, h, w, s, e, a in zip(
                self.positions, self.headings, self.wheels, self.stopped, self.energy, self.alive
            )
        ]

    def centre_of_mass(self) -> np.ndarray:
        alive = self.positions[self.alive]
        if len(alive) == 0:
            return self.positions.mean(axis=0)
        return alive.mean(axis=0)

    def record(self) -> None:
        h, t = self.history, self.tick
        h.positions[t] = self.positions
        h.headings[t] = self.headings
        h.energy[t] = self.energy
        h.alive[t] = self.alive
        h.speeds[t] = np.abs(self.wheels.mean(axis=-1))
        reference = self.config.station_position if self.station is None else self.station
        h.station_distance[t] = np.linalg.norm(self.positions - reference, axis=-1)
        h.charging[t] = self.charging

    def trial(self, index: int) -> "WorldState":
        """Single-trial view of a batched world.

        A trial whose robots all died ends at that tick, as it would have
        when simulated alone.
        """
        if not self.batched:
            return self
        history = self.history.select(index)
        extinct = np.flatnonzero(~history.alive[1:self.tick + 1].any(axis=-1))
        end = int(extinct[0]) + 1 if len(extinct) else self.tick
        return WorldState(
            config=self.config,
            positions=self.positions[index].copy(),
            headings=self.headings[index].copy(),
            wheels=self.wheels[index].copy(),
            stopped=self.stopped[index].copy(),
            energy=self.energy[index].copy(),
            alive=self.alive[index].copy(),
            charging=self.charging[index].copy(),
            station=self.station,
            tick=end,
            diverged=self.diverged,
            history=history,
        )


def _placement(config: SimConfig, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    low, high = config.radius, config.arena_size - config.radius
    positions: List[np.ndarray] = []
    rejections = 0
    while len(positions) < config.swarm_size:
        candidate = rng.uniform(low, high, size=2)
        if all(np.hypot(*(candidate - p)) >= config.min_separation for p in positions):
            positions.append(candidate)
            continue
        rejections += 1
        if rejections > config.max_placement_rejections:
            logger.warning("Placement failed", swarm_size=config.swarm_size, rejections=rejections)
            raise ConfigurationError(
                "arena too crowded for the requested separation",
                [f"swarm_size={config.swarm_size}", f"min_separation={config.min_separation}"],
            )
    headings = rng.uniform(0.0, 2.0 * math.pi, size=config.swarm_size)
    return np.array(positions), headings


def place_robots(config: SimConfig, seed: int) -> WorldState:
    """Uniform random placement with pairwise spacing ≥ min_separation (rejection sampling)"""
    positions, headings = _placement(config, np.random.default_rng(seed))
    return WorldState.from_positions(config, positions, headings)


def place_swarms(config: SimConfig, seeds: Sequence[int]) -> WorldState:
    """One batched world holding an independent placement per seed"""
    placements = [_placement(config, np.random.default_rng(seed)) for seed in seeds]
    return WorldState.from_positions(
        config, np.stack([p for p, _ in placements]), np.stack([h for _, h in placements])
    )


@dataclass
class SensorSuite:
    """Normalised readings for every robot; 1.0 means nothing sensed"""
    obstacle: np.ndarray          # (..., N, 8)
    robot: np.ndarray             # (..., N, 8)
    count: np.ndarray             # (..., N)
    station: Optional[np.ndarray] = None   # (..., N, 8)
    charging: Optional[np.ndarray] = None  # (..., N)
    energy: Optional[np.ndarray] = None    # (..., N)

    def as_inputs(self) -> np.ndarray:
        """Network input rows: 17 values for aggregation, 26 with the resource sensors"""
        if self.station is None:
            return np.concatenate([self.obstacle, self.robot, self.count[..., None]], axis=-1)
        return np.concatenate([
            self.obstacle, self.robot, self.station,
            self.charging[..., None].astype(float), self.energy[..., None],
        ], axis=-1)


def _sectors(origin_headings: np.ndarray, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Sector index (0..7) of a relative vector; sector i is centred at heading + i·45°"""
    bearing = np.arctan2(dy, dx) - origin_headings
    return (np.floor(np.mod(bearing + SECTOR_WIDTH / 2.0, 2.0 * math.pi) / SECTOR_WIDTH).astype(int)) % N_SECTORS


def _wall_distances(config: SimConfig, positions: np.ndarray, headings: np.ndarray) -> np.ndarray:
    """Ray length from each centre to the walls along each sector centreline (..., N, 8)"""
    angles = headings[..., None] + np.arange(N_SECTORS) * SECTOR_WIDTH
    c, s = np.cos(angles), np.sin(angles)
    x, y = positions[..., 0:1], positions[..., 1:2]
    side = config.arena_size
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(c > 1e-12, (side - x) / c, np.where(c < -1e-12, -x / c, np.inf))
        ty = np.where(s > 1e-12, (side - y) / s, np.where(s < -1e-12, -y / s, np.inf))
    return np.minimum(tx, ty)


def _nearest_by_sector(mask: np.ndarray, sectors: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Smallest masked value per sector along the last axis; 1.0 where a sector is empty"""
    onehot = sectors[..., None] == np.arange(N_SECTORS)
    return np.where(onehot & mask[..., None], values[..., None], 1.0).min(axis=-2)


def sense(world: WorldState) -> SensorSuite:
    """Sensor readings for all robots (dead robots are invisible and read nothing)"""
    cfg = world.config
    n = world.n_robots
    pos, alive, headings = world.positions, world.alive, world.headings
    # rel[..., i, j] points from robot i to robot j
    rel = pos[..., None, :, :] - pos[..., :, None, :]
    dist = np.hypot(rel[..., 0], rel[..., 1])
    sector = _sectors(headings[..., None], rel[..., 0], rel[..., 1])
    visible = alive[..., :, None] & alive[..., None, :] & ~np.eye(n, dtype=bool)

    near = visible & (dist < cfg.robot_range)
    robot = _nearest_by_sector(near, sector, dist / cfg.robot_range)

    close = visible & (dist < cfg.obstacle_range)
    obstacle = _nearest_by_sector(close, sector, dist / cfg.obstacle_range)
    walls = _wall_distances(cfg, pos, headings)
    obstacle = np.where(walls < cfg.obstacle_range, np.minimum(obstacle, walls / cfg.obstacle_range), obstacle)

    neighbours = (near.sum(axis=-1) + (1 if cfg.count_includes_self else 0)) * alive
    count = np.minimum(1.0, neighbours / cfg.swarm_size)

    if not cfg.energy_enabled:
        suite = SensorSuite(obstacle=obstacle, robot=robot, count=count)
    else:
        offset = cfg.station_position - pos
        station_dist = np.hypot(offset[..., 0], offset[..., 1])
        in_range = alive & (station_dist < cfg.station_range)
        station_sector = _sectors(headings, offset[..., 0], offset[..., 1])
        station = _nearest_by_sector(
            in_range[..., None], station_sector[..., None], (station_dist / cfg.station_range)[..., None]
        )
        suite = SensorSuite(
            obstacle=obstacle,
            robot=robot,
            count=count,
            station=station,
            charging=world.charging.copy(),
            energy=world.energy / cfg.energy.e_max,
        )

    dead = ~alive
    if dead.any():
        suite.obstacle[dead] = 1.0
        suite.robot[dead] = 1.0
        if suite.station is not None:
            suite.station[dead] = 1.0
    return suite


def actuate(outputs, max_speed: float = 0.12) -> Tuple[np.ndarray, np.ndarray]:
    """Map (left, right, stop) outputs to wheel speeds and stopped flags"""
    o = np.asarray(outputs, dtype=float)
    single = o.ndim == 1
    if single:
        o = o[None, :]
    wheels = (2.0 * o[..., :2] - 1.0) * max_speed
    stopped = o[..., 2] > 0.5
    wheels[stopped] = 0.0
    if single:
        return wheels[0], stopped[0]
    return wheels, stopped


def _overlapping(positions: np.ndarray, alive: np.ndarray, diameter: float) -> np.ndarray:
    """Per trial: does any pair of live robots overlap"""
    n = positions.shape[-2]
    rel = positions[..., None, :, :] - positions[..., :, None, :]
    dist = np.hypot(rel[..., 0], rel[..., 1])
    pairs = alive[..., :, None] & alive[..., None, :] & ~np.eye(n, dtype=bool)
    return ((dist < diameter - 1e-12) & pairs).any(axis=(-2, -1))


def resolve_collisions(world: WorldState) -> WorldState:
    """Push overlapping live robots apart along the contact normal, then clamp to walls.

    Runs ``collision_iterations`` relaxation passes and keeps relaxing
    (bounded) while any overlap is left. Pairs are visited in index order;
    each visit updates every trial of a batched world at once.
    """
    cfg = world.config
    diameter, radius = cfg.robot_diameter, cfg.radius
    pos, alive = world.positions, world.alive
    n = world.n_robots
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    for _ in range(cfg.collision_iterations * 20):
        pending = _overlapping(pos, alive, diameter)
        if not pending.any():
            break
        for i, j in pairs:
            delta = pos[..., j, :] - pos[..., i, :]
            d = np.hypot(delta[..., 0:1], delta[..., 1:2])
            both = np.asarray(pending & alive[..., i] & alive[..., j])[..., None]
            hit = both & (d < diameter)
            if not hit.any():
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                normal = np.where(d > 0.0, delta / d, UNIT_X)
            push = np.where(hit, (diameter - d) / 2.0, 0.0)
            pos[..., i, :] -= normal * push
            pos[..., j, :] += normal * push
        np.clip(pos, radius, cfg.arena_size - radius, out=pos)
    np.clip(pos, radius, cfg.arena_size - radius, out=pos)
    return world


def update_energy(world: WorldState) -> WorldState:
    """Drain every live robot, charge the unique eligible occupant of the station"""
    cfg = world.config
    model = cfg.energy
    alive = world.alive
    drain = model.drain(world.wheels, cfg.max_speed)
    station = cfg.station_position if world.station is None else world.station
    d_station = np.linalg.norm(world.positions - station, axis=-1)
    eligible = alive & (d_station <= model.station_radius) & np.all(world.wheels == 0.0, axis=-1)

    # nearest eligible robot per trial; ties go to the lower index
    nearest = np.expand_dims(np.argmin(np.where(eligible, d_station, np.inf), axis=-1), -1)
    charging = np.zeros_like(eligible)
    np.put_along_axis(charging, nearest, True, axis=-1)
    charging &= eligible

    delta = (charging * model.charge_rate - drain) * cfg.dt
    updated = np.clip(world.energy + delta, 0.0, model.e_max)
    world.energy = np.where(alive, updated, world.energy)
    died = alive & (world.energy <= 0.0)
    if died.any():
        world.alive = alive & ~died
        world.energy[died] = 0.0
    world.charging = charging & world.alive
    return world


def step(world: WorldState, outputs) -> WorldState:
    """Advance one tick: actuate, integrate, collide, drain/charge, record"""
    cfg = world.config
    shape = world.alive.shape
    wheels, stopped = actuate(np.asarray(outputs, dtype=float).reshape(shape + (3,)), cfg.max_speed)
    dead = ~world.alive
    wheels[dead] = 0.0
    stopped[dead] = False
    world.wheels, world.stopped = wheels, stopped

    v = wheels.mean(axis=-1)
    omega = (wheels[..., 1] - wheels[..., 0]) / cfg.robot_diameter
    heading = world.headings
    direction = np.stack([np.cos(heading), np.sin(heading)], axis=-1)
    world.positions = world.positions + (v * cfg.dt)[..., None] * direction
    world.headings = np.mod(heading + omega * cfg.dt, 2.0 * math.pi)

    resolve_collisions(world)
    if cfg.energy_enabled:
        update_energy(world)

    world.tick += 1
    if not (np.isfinite(world.positions).all() and np.isfinite(world.energy).all()):
        world.diverged = True
    if world.tick <= cfg.steps:
        world.record()
    return world


def write_trajectory(world: WorldState, path: Path) -> Path:
    """Per-tick log (tick, robot, x, y, heading, energy, alive) as gzip CSV"""
    if world.batched:
        raise ConfigurationError("trajectory logs are written per trial; select one with WorldState.trial")
    h = world.history
    rows = (
        [t, i, float(h.positions[t, i, 0]), float(h.positions[t, i, 1]),
         float(h.headings[t, i]), float(h.energy[t, i]), int(h.alive[t, i])]
        for t in range(min(world.tick, world.config.steps) + 1)
        for i in range(world.n_robots)
    )
    return write_csv_gz(path, ["tick", "robot", "x", "y", "heading", "energy", "alive"], rows)
