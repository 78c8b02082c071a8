"""Shortest-path scripted play and exhaustive state enumeration.

The solver plans breadth-first over a fixed topology (its construction
world's tiles) while reading the live agent pose, inventory, and recipe
progress from the state it is asked about. Built against the unperturbed
world it provides the reference "optimal solution" actions used both for
training demonstrations and as counterfactual actions in explanations.
"""
from __future__ import annotations

from collections import deque

from .world import (
    Action,
    FACING_DELTA,
    Facing,
    MOVE_FACING,
    SOURCE_YIELDS,
    Tile,
    WorldGrid,
    step,
)

MOVE_FOR_FACING = {facing: action for action, facing in MOVE_FACING.items()}
# Fixed expansion order keeps plans deterministic.
MOVE_ORDER = (Action.MOVE_NORTH, Action.MOVE_SOUTH, Action.MOVE_EAST, Action.MOVE_WEST)


class Unsolvable(RuntimeError):
    """The current recipe step has no reachable target on the planning topology."""


class EnumerationBound(RuntimeError):
    pass


def _adjacent_goals(topology: WorldGrid, kind: Tile) -> list[tuple[tuple[int, int], Facing]]:
    """Floor cells next to a `kind` tile, with the facing that looks at it."""
    goals = []
    for tx, ty in topology.find_tiles(kind):
        for action in MOVE_ORDER:
            facing = MOVE_FACING[action]
            dx, dy = FACING_DELTA[facing]
            # Stand opposite the facing delta so the facing looks at (tx, ty).
            sx, sy = tx - dx, ty - dy
            if topology.is_walkable(sx, sy):
                goals.append(((sx, sy), facing))
    return goals


class ScriptedSolver:
    """Greedy shortest-path completion of the recipe on a fixed topology."""

    def __init__(self, topology: WorldGrid):
        self.topology = topology.copy()
        self.recipe = topology.recipe

    def _current_target(self, world: WorldGrid) -> Tile | None:
        """Tile kind to reach next: a missing ingredient's source, else the appliance."""
        if world.recipe_progress >= len(self.recipe):
            return None
        rstep = self.recipe.steps[world.recipe_progress]
        for ingredient in rstep.ingredients:
            if world.inventory[ingredient] < 1:
                for source, yields in SOURCE_YIELDS.items():
                    if yields == ingredient:
                        return source
        return rstep.appliance

    def next_action(self, world: WorldGrid) -> Action:
        target = self._current_target(world)
        if target is None:
            return Action.NOOP
        goals = _adjacent_goals(self.topology, target)
        if not goals:
            raise Unsolvable(f"no reachable {target.name} on the planning topology")
        goal_cells = {cell: facing for cell, facing in goals}

        pos = world.agent_pos
        if pos in goal_cells:
            facing = goal_cells[pos]
            if world.agent_facing == facing:
                return Action.INTERACT
            # Turning in place: a move toward the (blocking) target cell.
            return MOVE_FOR_FACING[facing]

        # BFS from the agent cell over topology floor; the agent's own cell is
        # allowed even if blocked on the topology (e.g. it stands where a
        # removed appliance used to be).
        parent_action: dict[tuple[int, int], Action] = {}
        queue = deque([pos])
        seen = {pos}
        found = None
        while queue:
            cx, cy = queue.popleft()
            if (cx, cy) in goal_cells and (cx, cy) != pos:
                found = (cx, cy)
                break
            for action in MOVE_ORDER:
                dx, dy = FACING_DELTA[MOVE_FACING[action]]
                nxt = (cx + dx, cy + dy)
                if nxt in seen or not self.topology.is_walkable(*nxt):
                    continue
                seen.add(nxt)
                parent_action[nxt] = action
                queue.append(nxt)
        if found is None:
            raise Unsolvable(f"no path to any {target.name} from {pos}")

        # Walk back to the first step out of the start cell.
        cell = found
        first = parent_action[cell]
        while True:
            action = parent_action[cell]
            dx, dy = FACING_DELTA[MOVE_FACING[action]]
            cell = (cell[0] - dx, cell[1] - dy)
            if cell == pos:
                first = action
                break
        return first

    def full_solution(self, world: WorldGrid, limit: int | None = None) -> list[Action]:
        """Action sequence completing the recipe by simulated play from `world`."""
        limit = limit if limit is not None else world.max_steps
        sim = world.copy()
        sim.max_steps = limit + 1
        actions: list[Action] = []
        while not sim.done and len(actions) < limit:
            action = self.next_action(sim)
            sim, _, _, _ = step(sim, action)
            actions.append(action)
        if not sim.done:
            raise Unsolvable(f"scripted play did not finish the recipe within {limit} steps")
        return actions


def scripted_optimal_action(world: WorldGrid) -> Action:
    """Next action of the shortest-path solution planned on the world as given."""
    return ScriptedSolver(world).next_action(world)


def apply_dynamics(world: WorldGrid, action: Action) -> WorldGrid:
    """Time-invariant transition: step once, discarding the step counter."""
    nxt, _, _, _ = step(world, action)
    nxt.steps_taken = 0
    return nxt


def enumerate_states(template: WorldGrid, max_inventory: int = 3, bound: int = 10**6) -> list[WorldGrid]:
    """All states reachable from the template's initial state under any action
    sequence. Inventory is capped at max_inventory; completed-recipe states are
    absorbing and not expanded. Raises EnumerationBound past `bound` states."""
    start = template.copy()
    start.max_inventory = max_inventory
    start.steps_taken = 0
    start.max_steps = 10**9  # enumeration explores dynamics, not the time budget

    states: list[WorldGrid] = []
    seen: set[tuple] = set()
    queue = deque([start])
    seen.add(start.state_key())
    while queue:
        world = queue.popleft()
        states.append(world)
        if len(states) > bound:
            raise EnumerationBound(f"state count exceeds bound {bound}")
        if world.done:
            continue
        for action in Action:
            nxt = apply_dynamics(world, action)
            nxt.max_steps = 10**9
            key = nxt.state_key()
            if key not in seen:
                seen.add(key)
                queue.append(nxt)
    return states
