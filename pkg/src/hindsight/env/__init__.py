"""Deterministic kitchen gridworld with scripted perturbation scenarios."""
from .render import gif_bytes, png_bytes, render, render_observation
from .scenarios import (
    Perturbation,
    PerturbationKind,
    Scenario,
    ScenarioError,
    ScenarioRegistry,
    reset,
)
from .scripted import (
    EnumerationBound,
    ScriptedSolver,
    Unsolvable,
    apply_dynamics,
    enumerate_states,
    scripted_optimal_action,
)
from .world import (
    Action,
    EpisodeDone,
    Facing,
    Ingredient,
    N_ACTIONS,
    N_ACTION_INPUTS,
    N_FACINGS,
    N_INGREDIENTS,
    N_TILE_CLASSES,
    NO_PREDECESSOR,
    Observation,
    OUT_OF_BOUNDS,
    Recipe,
    RecipeStep,
    Tile,
    WorldGrid,
    step,
)
from .worldfile import WorldFileError, parse_world, world_to_text

__all__ = [
    "Action",
    "EnumerationBound",
    "EpisodeDone",
    "Facing",
    "Ingredient",
    "N_ACTIONS",
    "N_ACTION_INPUTS",
    "N_FACINGS",
    "N_INGREDIENTS",
    "N_TILE_CLASSES",
    "NO_PREDECESSOR",
    "Observation",
    "OUT_OF_BOUNDS",
    "Perturbation",
    "PerturbationKind",
    "Recipe",
    "RecipeStep",
    "Scenario",
    "ScenarioError",
    "ScenarioRegistry",
    "ScriptedSolver",
    "Tile",
    "Unsolvable",
    "WorldFileError",
    "WorldGrid",
    "apply_dynamics",
    "enumerate_states",
    "gif_bytes",
    "parse_world",
    "png_bytes",
    "render",
    "render_observation",
    "reset",
    "scripted_optimal_action",
    "step",
    "world_to_text",
]
