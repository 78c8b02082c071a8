"""Sprite rendering of worlds and observations to PIL images.

Sprites are generated procedurally from fixed arithmetic patterns, so the
raster bytes for a given world state are identical across runs and machines.
"""
from __future__ import annotations

import io

import numpy as np
from PIL import Image

from .world import Facing, N_TILE_CLASSES, Observation, OUT_OF_BOUNDS, Tile, WorldGrid

SPRITE_SIZE = 16

_BASE_COLORS = {
    Tile.FLOOR: (232, 228, 220),
    Tile.WALL: (70, 70, 78),
    Tile.COUNTER: (196, 164, 120),
    Tile.STOVE: (52, 52, 56),
    Tile.MICROWAVE: (176, 180, 188),
    Tile.COFFEE_MACHINE: (88, 56, 36),
    Tile.PALLET: (168, 128, 72),
    Tile.COW: (244, 244, 240),
    Tile.LAVA_POOL: (216, 84, 24),
    Tile.WATER: (64, 120, 208),
    Tile.COFFEE_BUSH: (56, 128, 56),
    Tile.SUGAR_CANE: (176, 212, 144),
    Tile.MUG_SHELF: (228, 212, 184),
    Tile.ICE_BOX: (196, 232, 240),
    Tile.HONEY_HIVE: (228, 176, 48),
    Tile.TABLE: (140, 96, 56),
}
_ACCENT_COLORS = {
    Tile.WALL: (46, 46, 52),
    Tile.COUNTER: (168, 136, 92),
    Tile.STOVE: (200, 60, 40),
    Tile.MICROWAVE: (60, 64, 76),
    Tile.COFFEE_MACHINE: (150, 108, 72),
    Tile.PALLET: (120, 88, 44),
    Tile.COW: (40, 36, 36),
    Tile.LAVA_POOL: (252, 180, 52),
    Tile.WATER: (120, 168, 232),
    Tile.COFFEE_BUSH: (30, 72, 30),
    Tile.SUGAR_CANE: (120, 168, 88),
    Tile.MUG_SHELF: (150, 122, 88),
    Tile.ICE_BOX: (140, 192, 208),
    Tile.HONEY_HIVE: (160, 116, 24),
    Tile.TABLE: (104, 68, 36),
}
_OOB_COLOR = (24, 22, 30)
_AGENT_COLOR = (200, 30, 60)


def _tile_sprite(tile_class: int) -> np.ndarray:
    sprite = np.zeros((SPRITE_SIZE, SPRITE_SIZE, 3), dtype=np.uint8)
    if tile_class == OUT_OF_BOUNDS:
        sprite[:, :] = _OOB_COLOR
        return sprite
    tile = Tile(tile_class)
    sprite[:, :] = _BASE_COLORS[tile]
    accent = _ACCENT_COLORS.get(tile)
    if accent is None:
        return sprite
    yy, xx = np.mgrid[0:SPRITE_SIZE, 0:SPRITE_SIZE]
    if tile in (Tile.WALL, Tile.COUNTER, Tile.TABLE):
        mask = ((xx // 4) + (yy // 4)) % 2 == 0
    elif tile == Tile.STOVE:
        mask = ((xx - 4) % 8 < 3) & ((yy - 4) % 8 < 3) & (xx >= 2) & (yy >= 2)
    elif tile == Tile.MICROWAVE:
        mask = (xx >= 3) & (xx < 11) & (yy >= 4) & (yy < 12)
    elif tile in (Tile.PALLET, Tile.SUGAR_CANE):
        mask = (xx % 4) < 2
    elif tile == Tile.COW:
        mask = ((xx * 7 + yy * 3) % 13) < 4
    elif tile in (Tile.LAVA_POOL, Tile.WATER):
        mask = ((xx * 3 + yy * 5) % 11) < 3
    elif tile == Tile.COFFEE_BUSH:
        mask = ((xx * 5 + yy * 7) % 9) < 2
    elif tile == Tile.MUG_SHELF:
        mask = ((yy % 6) < 2) | ((xx % 5) == 0)
    elif tile == Tile.ICE_BOX:
        mask = (xx + yy) % 6 < 2
    elif tile == Tile.HONEY_HIVE:
        mask = (yy % 4) < 1
    else:
        mask = np.zeros_like(xx, dtype=bool)
    sprite[mask] = accent
    return sprite


def _agent_masks() -> dict[Facing, np.ndarray]:
    """Facing-marker triangles drawn over the agent's cell."""
    s = SPRITE_SIZE
    yy, xx = np.mgrid[0:s, 0:s]
    cx = (s - 1) / 2.0
    masks = {}
    masks[Facing.NORTH] = (yy >= 3) & (yy <= 11) & (np.abs(xx - cx) <= (yy - 3) * 0.6)
    masks[Facing.SOUTH] = (yy >= 4) & (yy <= 12) & (np.abs(xx - cx) <= (12 - yy) * 0.6)
    masks[Facing.EAST] = (xx >= 4) & (xx <= 12) & (np.abs(yy - cx) <= (12 - xx) * 0.6)
    masks[Facing.WEST] = (xx >= 3) & (xx <= 11) & (np.abs(yy - cx) <= (xx - 3) * 0.6)
    return masks


_SPRITES = np.stack([_tile_sprite(c) for c in range(N_TILE_CLASSES)])
_AGENT_MASKS = _agent_masks()


def _assemble(tile_grid: np.ndarray) -> np.ndarray:
    h, w = tile_grid.shape
    cells = _SPRITES[tile_grid]  # (h, w, S, S, 3)
    return cells.transpose(0, 2, 1, 3, 4).reshape(h * SPRITE_SIZE, w * SPRITE_SIZE, 3)


def _draw_agent(pixels: np.ndarray, cell_x: int, cell_y: int, facing: Facing) -> None:
    x0, y0 = cell_x * SPRITE_SIZE, cell_y * SPRITE_SIZE
    patch = pixels[y0 : y0 + SPRITE_SIZE, x0 : x0 + SPRITE_SIZE]
    patch[_AGENT_MASKS[facing]] = _AGENT_COLOR


def render(world: WorldGrid, mode: str = "full-grid") -> Image.Image:
    """Raster the world ('full-grid') or the agent's window ('agent-window')."""
    if mode == "full-grid":
        pixels = _assemble(world.tiles)
        _draw_agent(pixels, world.agent_pos[0], world.agent_pos[1], Facing(world.agent_facing))
    elif mode == "agent-window":
        return render_observation(world.observe())
    else:
        raise ValueError(f"unknown render mode {mode!r}")
    return Image.fromarray(pixels)


def render_observation(obs: Observation) -> Image.Image:
    """Raster an egocentric window; the agent marker sits at the center cell.

    Works for both real observations and decoded ones, which is how expected
    (counterfactual) states become images.
    """
    pixels = _assemble(np.asarray(obs.window, dtype=np.int64))
    center = obs.window.shape[0] // 2
    _draw_agent(pixels, center, center, Facing(obs.facing))
    return Image.fromarray(pixels)


def png_bytes(image: Image.Image) -> bytes:
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


def gif_bytes(frames: list[Image.Image], frame_ms: int = 120) -> bytes:
    """Animated GIF for episode playback; encoding is deterministic."""
    if not frames:
        raise ValueError("no frames to encode")
    buf = io.BytesIO()
    frames[0].save(
        buf,
        format="GIF",
        save_all=True,
        append_images=frames[1:],
        duration=frame_ms,
        loop=0,
    )
    return buf.getvalue()
