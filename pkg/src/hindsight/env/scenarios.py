"""Scenario registry: base worlds plus scripted perturbations.

A scenario is a named base world with at most one perturbation applied at
reset time: removing an object, moving it, or walling off its approach
cells. Worlds and scenarios ship as text files (see worldfile) and can be
extended with user directories.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path

from .world import Observation, Tile, WorldGrid
from .worldfile import (
    TILE_NAMES,
    WorldFileError,
    parse_scenario_text,
    parse_world,
    world_name,
)


class PerturbationKind(Enum):
    REMOVE_NONESSENTIAL = "remove-nonessential"
    MOVE_ESSENTIAL = "move-essential"
    OBSTRUCT_ESSENTIAL = "obstruct-essential"
    REMOVE_ESSENTIAL = "remove-essential"


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Perturbation:
    kind: PerturbationKind
    target: Tile
    destination: tuple[int, int] | None = None  # moves only

    def apply(self, world: WorldGrid) -> WorldGrid:
        world = world.copy()
        cells = world.find_tiles(self.target)
        if not cells:
            raise ScenarioError(f"perturbation target {self.target.name} absent from base world")
        if self.kind in (PerturbationKind.REMOVE_NONESSENTIAL, PerturbationKind.REMOVE_ESSENTIAL):
            for x, y in cells:
                world.tiles[y, x] = Tile.FLOOR
        elif self.kind == PerturbationKind.MOVE_ESSENTIAL:
            if len(cells) != 1:
                raise ScenarioError(f"move target {self.target.name} occupies {len(cells)} cells; need exactly 1")
            if self.destination is None:
                raise ScenarioError("move perturbation requires a destination")
            dx, dy = self.destination
            if not world.is_walkable(dx, dy) or (dx, dy) == world.agent_pos:
                raise ScenarioError(f"move destination {self.destination} is not a free floor cell")
            x, y = cells[0]
            world.tiles[y, x] = Tile.FLOOR
            world.tiles[dy, dx] = self.target
        elif self.kind == PerturbationKind.OBSTRUCT_ESSENTIAL:
            for x, y in cells:
                for nx, ny in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
                    if world.is_walkable(nx, ny) and (nx, ny) != world.agent_pos:
                        world.tiles[ny, nx] = Tile.WALL
        return world


@dataclass(frozen=True)
class Scenario:
    id: str
    base_world: str
    perturbation: Perturbation | None = None


class ScenarioRegistry:
    """Resolves scenario ids and base world names to world states."""

    def __init__(self, extra_dirs: list[Path] | None = None):
        self._worlds: dict[str, str] = {}
        self._scenarios: dict[str, Scenario] = {}
        package_dir = resources.files("hindsight").joinpath("worlds")
        self._load_dir(Path(str(package_dir)))
        for directory in extra_dirs or []:
            self._load_dir(Path(directory))

    def _load_dir(self, directory: Path) -> None:
        if not directory.is_dir():
            return
        for path in sorted(directory.glob("*.world")):
            text = path.read_text()
            self._worlds[world_name(text)] = text
        for path in sorted(directory.glob("*.scenario")):
            self.register_scenario_text(path.read_text())

    def register_scenario_text(self, text: str) -> Scenario:
        fields = parse_scenario_text(text)
        kind = fields["kind"]
        if kind == "none":
            scenario = Scenario(id=fields["name"], base_world=fields["base"])
        else:
            try:
                pkind = PerturbationKind(kind)
            except ValueError as exc:
                raise WorldFileError(f"unknown perturbation kind {kind!r}") from exc
            target_name = fields.get("target", "").lower()
            if target_name not in TILE_NAMES:
                raise WorldFileError(f"unknown perturbation target {target_name!r}")
            destination = None
            if "to" in fields:
                x, y = (int(p) for p in fields["to"].split(","))
                destination = (x, y)
            scenario = Scenario(
                id=fields["name"],
                base_world=fields["base"],
                perturbation=Perturbation(pkind, TILE_NAMES[target_name], destination),
            )
        self._scenarios[scenario.id] = scenario
        return scenario

    def world_names(self) -> list[str]:
        return sorted(self._worlds)

    def scenario_ids(self) -> list[str]:
        return sorted(self._scenarios)

    def base_world(self, name: str) -> WorldGrid:
        if name not in self._worlds:
            raise ScenarioError(f"unknown world {name!r}; known: {self.world_names()}")
        return parse_world(self._worlds[name])

    def scenario(self, scenario_id: str) -> Scenario:
        if scenario_id in self._scenarios:
            return self._scenarios[scenario_id]
        # Bare world names act as unperturbed scenarios.
        if scenario_id in self._worlds:
            return Scenario(id=scenario_id, base_world=scenario_id)
        raise ScenarioError(f"unknown scenario {scenario_id!r}; known: {self.scenario_ids()}")


def reset(scenario: Scenario, seed: int, registry: ScenarioRegistry) -> tuple[WorldGrid, Observation]:
    """Build the initial world for a scenario. Deterministic: the seed is part
    of the episode identity but the layout itself has no random elements."""
    del seed  # reserved for randomized layouts; current worlds are fixed
    world = registry.base_world(scenario.base_world)
    if scenario.perturbation is not None:
        world = scenario.perturbation.apply(world)
    return world, world.observe()
