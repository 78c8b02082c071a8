"""Kitchen gridworld: tiles, grid state, and deterministic step dynamics.

The world is a dense grid of tile ids. The agent walks on floor, faces one
of four directions, and interacts with the tile directly in front of it:
ingredient sources add to the inventory, appliances advance the recipe when
the required ingredients are held. Everything is deterministic.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np


class Tile(IntEnum):
    FLOOR = 0
    WALL = 1
    COUNTER = 2
    STOVE = 3
    MICROWAVE = 4
    COFFEE_MACHINE = 5
    PALLET = 6
    COW = 7
    LAVA_POOL = 8
    WATER = 9
    COFFEE_BUSH = 10
    SUGAR_CANE = 11
    MUG_SHELF = 12
    ICE_BOX = 13
    HONEY_HIVE = 14
    TABLE = 15


#: Number of tile kinds placeable in a world.
N_TILE_KINDS = len(Tile)

#: Distinguished id for observation cells outside the world bounds.
OUT_OF_BOUNDS = N_TILE_KINDS

#: Total tile classes an observation cell can take (world tiles + out-of-bounds).
N_TILE_CLASSES = N_TILE_KINDS + 1


class Ingredient(IntEnum):
    MILK = 0
    LAVA = 1
    WATER = 2
    BEANS = 3
    SUGAR = 4
    MUG = 5
    ICE = 6
    HONEY = 7


N_INGREDIENTS = len(Ingredient)

#: Which tile yields which ingredient when interacted with.
SOURCE_YIELDS = {
    Tile.COW: Ingredient.MILK,
    Tile.LAVA_POOL: Ingredient.LAVA,
    Tile.WATER: Ingredient.WATER,
    Tile.COFFEE_BUSH: Ingredient.BEANS,
    Tile.SUGAR_CANE: Ingredient.SUGAR,
    Tile.MUG_SHELF: Ingredient.MUG,
    Tile.ICE_BOX: Ingredient.ICE,
    Tile.HONEY_HIVE: Ingredient.HONEY,
}

#: Tiles a recipe step may target.
APPLIANCES = (Tile.STOVE, Tile.MICROWAVE, Tile.COFFEE_MACHINE)


class Action(IntEnum):
    MOVE_NORTH = 0
    MOVE_SOUTH = 1
    MOVE_EAST = 2
    MOVE_WEST = 3
    INTERACT = 4
    NOOP = 5


N_ACTIONS = len(Action)

#: Extra action slot marking "no predecessor action" in reversed replay data.
NO_PREDECESSOR = N_ACTIONS

#: One-hot width for action inputs to the models (real actions + marker).
N_ACTION_INPUTS = N_ACTIONS + 1


class Facing(IntEnum):
    NORTH = 0
    SOUTH = 1
    EAST = 2
    WEST = 3


N_FACINGS = len(Facing)

#: (dx, dy) displacement per facing; north is decreasing y.
FACING_DELTA = {
    Facing.NORTH: (0, -1),
    Facing.SOUTH: (0, 1),
    Facing.EAST: (1, 0),
    Facing.WEST: (-1, 0),
}

MOVE_FACING = {
    Action.MOVE_NORTH: Facing.NORTH,
    Action.MOVE_SOUTH: Facing.SOUTH,
    Action.MOVE_EAST: Facing.EAST,
    Action.MOVE_WEST: Facing.WEST,
}


class EpisodeDone(RuntimeError):
    """Raised when stepping a world whose episode already terminated."""


@dataclass(frozen=True)
class RecipeStep:
    ingredients: tuple[Ingredient, ...]
    appliance: Tile
    reward: float = 1.0


@dataclass(frozen=True)
class Recipe:
    """Ordered appliance steps; finishing the last one ends the episode."""

    steps: tuple[RecipeStep, ...]
    completion_bonus: float = 10.0

    def __post_init__(self):
        for step in self.steps:
            if step.appliance not in APPLIANCES:
                raise ValueError(f"recipe step targets non-appliance tile {step.appliance!r}")

    def __len__(self) -> int:
        return len(self.steps)

    def total_reward(self) -> float:
        return sum(s.reward for s in self.steps) + self.completion_bonus


@dataclass(frozen=True)
class Observation:
    """Egocentric view: tile window centered on the agent, inventory, facing."""

    window: np.ndarray  # (win, win) int16 tile classes, OUT_OF_BOUNDS beyond the map
    inventory: np.ndarray  # (N_INGREDIENTS,) int16 counts
    facing: int

    def __eq__(self, other) -> bool:
        if not isinstance(other, Observation):
            return NotImplemented
        return (
            self.facing == other.facing
            and np.array_equal(self.window, other.window)
            and np.array_equal(self.inventory, other.inventory)
        )

    def __hash__(self) -> int:
        return hash((self.window.tobytes(), self.inventory.tobytes(), self.facing))


@dataclass
class WorldGrid:
    """Full mutable world state, including recipe progress and step budget."""

    width: int
    height: int
    tiles: np.ndarray  # (height, width) int16
    agent_pos: tuple[int, int]  # (x, y)
    agent_facing: Facing
    recipe: Recipe
    inventory: np.ndarray = field(default_factory=lambda: np.zeros(N_INGREDIENTS, dtype=np.int16))
    recipe_progress: int = 0
    window_size: int = 7
    max_steps: int = 200
    max_inventory: int = 9
    steps_taken: int = 0
    done: bool = False  # recipe completed; time truncation is tracked via steps_taken

    @property
    def truncated(self) -> bool:
        return not self.done and self.steps_taken >= self.max_steps

    def __post_init__(self):
        self.tiles = np.asarray(self.tiles, dtype=np.int16)
        if self.tiles.shape != (self.height, self.width):
            raise ValueError(f"tiles shape {self.tiles.shape} != (height={self.height}, width={self.width})")
        if self.window_size % 2 != 1:
            raise ValueError("window_size must be odd")
        x, y = self.agent_pos
        if not self.in_bounds(x, y):
            raise ValueError(f"agent_pos {self.agent_pos} outside {self.width}x{self.height} grid")
        if self.tiles[y, x] != Tile.FLOOR:
            raise ValueError(f"agent_pos {self.agent_pos} is on blocking tile {Tile(self.tiles[y, x]).name}")

    def copy(self) -> "WorldGrid":
        clone = copy.copy(self)
        clone.tiles = self.tiles.copy()
        clone.inventory = self.inventory.copy()
        return clone

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def tile_at(self, x: int, y: int) -> int:
        return int(self.tiles[y, x]) if self.in_bounds(x, y) else OUT_OF_BOUNDS

    def is_walkable(self, x: int, y: int) -> bool:
        return self.in_bounds(x, y) and self.tiles[y, x] == Tile.FLOOR

    def facing_cell(self) -> tuple[int, int]:
        dx, dy = FACING_DELTA[self.agent_facing]
        return self.agent_pos[0] + dx, self.agent_pos[1] + dy

    def find_tiles(self, kind: Tile) -> list[tuple[int, int]]:
        ys, xs = np.nonzero(self.tiles == int(kind))
        return [(int(x), int(y)) for x, y in zip(xs, ys)]

    def current_step(self) -> RecipeStep | None:
        if self.recipe_progress >= len(self.recipe):
            return None
        return self.recipe.steps[self.recipe_progress]

    def observe(self) -> Observation:
        half = self.window_size // 2
        ax, ay = self.agent_pos
        window = np.full((self.window_size, self.window_size), OUT_OF_BOUNDS, dtype=np.int16)
        for wy in range(self.window_size):
            for wx in range(self.window_size):
                x, y = ax + wx - half, ay + wy - half
                if self.in_bounds(x, y):
                    window[wy, wx] = self.tiles[y, x]
        return Observation(window=window, inventory=self.inventory.copy(), facing=int(self.agent_facing))

    def state_key(self) -> tuple:
        """Dynamics-relevant identity: position, facing, inventory, progress, terminal flag.

        Excludes the step counter so that tabular dynamics are time-invariant.
        """
        return (
            self.agent_pos,
            int(self.agent_facing),
            tuple(int(c) for c in self.inventory),
            self.recipe_progress,
            self.done,
        )


def step(world: WorldGrid, action: Action | int) -> tuple[WorldGrid, Observation, float, bool]:
    """Apply one action; returns (new world, observation, reward, continue).

    Movement is turn-first: a move action toward a direction the agent is not
    facing turns it in place; moving while already facing advances one cell if
    the target is floor, else stays put. Interacting with a source gathers its
    ingredient (capped at max_inventory); interacting with the current recipe
    step's appliance while holding its ingredients consumes them and grants
    the step reward, plus the completion bonus on the final step.
    continue=False on completion or once max_steps is reached.
    """
    if world.done or world.truncated:
        raise EpisodeDone("step() called on a terminated episode")
    action = Action(action)
    world = world.copy()
    reward = 0.0

    if action in MOVE_FACING:
        facing = MOVE_FACING[action]
        if world.agent_facing != facing:
            world.agent_facing = facing
        else:
            dx, dy = FACING_DELTA[facing]
            nx, ny = world.agent_pos[0] + dx, world.agent_pos[1] + dy
            if world.is_walkable(nx, ny):
                world.agent_pos = (nx, ny)
    elif action == Action.INTERACT:
        tx, ty = world.facing_cell()
        target = world.tile_at(tx, ty)
        if target in SOURCE_YIELDS:
            ing = SOURCE_YIELDS[Tile(target)]
            if world.inventory[ing] < world.max_inventory:
                world.inventory[ing] += 1
        else:
            rstep = world.current_step()
            if rstep is not None and target == rstep.appliance and all(
                world.inventory[i] >= 1 for i in rstep.ingredients
            ):
                for i in rstep.ingredients:
                    world.inventory[i] -= 1
                reward += rstep.reward
                world.recipe_progress += 1
                if world.recipe_progress == len(world.recipe):
                    reward += world.recipe.completion_bonus
                    world.done = True
    # NOOP: nothing changes except the step counter.

    world.steps_taken += 1
    cont = not world.done and not world.truncated
    return world, world.observe(), reward, cont
