"""Parsing for world and scenario definition files.

World files are key-value lines followed by an ASCII tile map::

    name = micro-kitchen
    window = 5
    agent = 2,4 N
    max_steps = 60
    recipe = milk @ stove : 1
    recipe = beans+water @ coffee-machine : 1
    bonus = 10
    map =
    .....
    .c.S.
    .....
    ..P..
    .....

Map characters: ``.`` floor, ``#`` wall, ``C`` counter, ``S`` stove,
``M`` microwave, ``K`` coffee-machine, ``P`` pallet, ``c`` cow,
``L`` lava-pool, ``w`` water, ``B`` coffee-bush, ``G`` sugar-cane,
``U`` mug-shelf, ``I`` ice-box, ``H`` honey-hive, ``T`` table.

Scenario files are key-value only::

    name = micro-move-cow
    base = micro-kitchen
    kind = move-essential
    target = cow
    to = 0,0

``kind`` is one of remove-nonessential, move-essential, obstruct-essential,
remove-essential, or none (unperturbed). ``to`` is required for moves only.
Lines starting with ``#`` and blank lines before the map are ignored.
"""
from __future__ import annotations

import numpy as np

from .world import Facing, Ingredient, Recipe, RecipeStep, Tile, WorldGrid

TILE_CHARS = {
    ".": Tile.FLOOR,
    "#": Tile.WALL,
    "C": Tile.COUNTER,
    "S": Tile.STOVE,
    "M": Tile.MICROWAVE,
    "K": Tile.COFFEE_MACHINE,
    "P": Tile.PALLET,
    "c": Tile.COW,
    "L": Tile.LAVA_POOL,
    "w": Tile.WATER,
    "B": Tile.COFFEE_BUSH,
    "G": Tile.SUGAR_CANE,
    "U": Tile.MUG_SHELF,
    "I": Tile.ICE_BOX,
    "H": Tile.HONEY_HIVE,
    "T": Tile.TABLE,
}
CHAR_FOR_TILE = {tile: char for char, tile in TILE_CHARS.items()}

TILE_NAMES = {t.name.lower().replace("_", "-"): t for t in Tile}
INGREDIENT_NAMES = {i.name.lower(): i for i in Ingredient}
FACING_NAMES = {"N": Facing.NORTH, "S": Facing.SOUTH, "E": Facing.EAST, "W": Facing.WEST}


class WorldFileError(ValueError):
    pass


def _parse_keyvals(text: str) -> tuple[dict[str, list[str]], list[str]]:
    """Split into key-value pairs and the trailing map block (if any)."""
    pairs: dict[str, list[str]] = {}
    map_lines: list[str] = []
    in_map = False
    for raw in text.splitlines():
        if in_map:
            if raw.strip():
                map_lines.append(raw.strip())
            continue
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise WorldFileError(f"expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "map":
            if value:
                raise WorldFileError("map must start on the line after 'map ='")
            in_map = True
            continue
        pairs.setdefault(key, []).append(value)
    return pairs, map_lines


def _single(pairs: dict[str, list[str]], key: str, default: str | None = None) -> str:
    values = pairs.get(key)
    if not values:
        if default is None:
            raise WorldFileError(f"missing required key {key!r}")
        return default
    if len(values) > 1:
        raise WorldFileError(f"key {key!r} given {len(values)} times")
    return values[0]


def _parse_xy(text: str) -> tuple[int, int]:
    try:
        x, y = (int(p) for p in text.split(","))
    except ValueError as exc:
        raise WorldFileError(f"expected 'x,y', got {text!r}") from exc
    return x, y


def _parse_recipe_step(text: str) -> RecipeStep:
    # "milk+lava @ stove : 1" — the reward suffix is optional.
    head, _, reward_part = text.partition(":")
    reward = float(reward_part.strip()) if reward_part.strip() else 1.0
    ing_part, sep, appliance_part = head.partition("@")
    if not sep:
        raise WorldFileError(f"recipe step {text!r} missing '@ appliance'")
    ingredients = []
    for name in ing_part.strip().split("+"):
        name = name.strip().lower()
        if name not in INGREDIENT_NAMES:
            raise WorldFileError(f"unknown ingredient {name!r}")
        ingredients.append(INGREDIENT_NAMES[name])
    appliance_name = appliance_part.strip().lower()
    if appliance_name not in TILE_NAMES:
        raise WorldFileError(f"unknown appliance {appliance_name!r}")
    return RecipeStep(tuple(ingredients), TILE_NAMES[appliance_name], reward)


def parse_world(text: str) -> WorldGrid:
    pairs, map_lines = _parse_keyvals(text)
    if not map_lines:
        raise WorldFileError("world file has no map block")
    height = len(map_lines)
    width = len(map_lines[0])
    tiles = np.zeros((height, width), dtype=np.int16)
    for y, line in enumerate(map_lines):
        if len(line) != width:
            raise WorldFileError(f"map row {y} has length {len(line)}, expected {width}")
        for x, char in enumerate(line):
            if char not in TILE_CHARS:
                raise WorldFileError(f"unknown map character {char!r} at {x},{y}")
            tiles[y, x] = TILE_CHARS[char]

    agent_spec = _single(pairs, "agent").split()
    if len(agent_spec) != 2 or agent_spec[1] not in FACING_NAMES:
        raise WorldFileError(f"agent must be 'x,y N|S|E|W', got {pairs['agent'][0]!r}")
    steps = tuple(_parse_recipe_step(s) for s in pairs.get("recipe", []))
    if not steps:
        # Worlds without a recipe (corridors, enumeration templates) are allowed;
        # they simply never terminate by completion.
        recipe = Recipe(steps=(), completion_bonus=0.0)
    else:
        recipe = Recipe(steps=steps, completion_bonus=float(_single(pairs, "bonus", "10")))

    return WorldGrid(
        width=width,
        height=height,
        tiles=tiles,
        agent_pos=_parse_xy(agent_spec[0]),
        agent_facing=FACING_NAMES[agent_spec[1]],
        recipe=recipe,
        window_size=int(_single(pairs, "window", "7")),
        max_steps=int(_single(pairs, "max_steps", "200")),
        max_inventory=int(_single(pairs, "max_inventory", "9")),
    )


def world_name(text: str) -> str:
    pairs, _ = _parse_keyvals(text)
    return _single(pairs, "name")


def world_to_text(world: WorldGrid, name: str) -> str:
    """Serialize a world back to the file format (used by world editing)."""
    facing_char = {v: k for k, v in FACING_NAMES.items()}[Facing(world.agent_facing)]
    lines = [
        f"name = {name}",
        f"window = {world.window_size}",
        f"agent = {world.agent_pos[0]},{world.agent_pos[1]} {facing_char}",
        f"max_steps = {world.max_steps}",
        f"max_inventory = {world.max_inventory}",
    ]
    for step in world.recipe.steps:
        ings = "+".join(i.name.lower() for i in step.ingredients)
        appliance = step.appliance.name.lower().replace("_", "-")
        lines.append(f"recipe = {ings} @ {appliance} : {step.reward:g}")
    if world.recipe.steps:
        lines.append(f"bonus = {world.recipe.completion_bonus:g}")
    lines.append("map =")
    for y in range(world.height):
        lines.append("".join(CHAR_FOR_TILE[Tile(world.tiles[y, x])] for x in range(world.width)))
    return "\n".join(lines) + "\n"


def parse_scenario_text(text: str) -> dict[str, str]:
    pairs, map_lines = _parse_keyvals(text)
    if map_lines:
        raise WorldFileError("scenario files must not contain a map block")
    out = {key: _single(pairs, key) for key in pairs}
    for required in ("name", "base", "kind"):
        if required not in out:
            raise WorldFileError(f"scenario file missing {required!r}")
    return out
