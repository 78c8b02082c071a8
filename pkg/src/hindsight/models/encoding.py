"""Symbolic observation vectorization for the world models.

Observations are one-hot encoded: every window cell over the tile classes
(including out-of-bounds), inventory counts bucketized to 0/1/2/3+, and the
facing direction. The decoder predicts logits with the same structure, so a
decoded observation is renderable by the env's sprite renderer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from ..env import N_FACINGS, N_INGREDIENTS, N_TILE_CLASSES, Observation, WorldGrid


@dataclass(frozen=True)
class ObsSpec:
    window: int
    n_tile_classes: int = N_TILE_CLASSES
    n_ingredients: int = N_INGREDIENTS
    inventory_buckets: int = 4
    n_facings: int = N_FACINGS

    @classmethod
    def for_world(cls, world: WorldGrid) -> "ObsSpec":
        return cls(window=world.window_size)

    @property
    def n_cells(self) -> int:
        return self.window * self.window

    @property
    def tile_size(self) -> int:
        return self.n_cells * self.n_tile_classes

    @property
    def inventory_size(self) -> int:
        return self.n_ingredients * self.inventory_buckets

    @property
    def vec_size(self) -> int:
        return self.tile_size + self.inventory_size + self.n_facings

    def bucketize(self, inventories: torch.Tensor) -> torch.Tensor:
        return inventories.clamp(0, self.inventory_buckets - 1)

    def encode_arrays(
        self,
        windows: np.ndarray,
        inventories: np.ndarray,
        facings: np.ndarray,
        dtype: torch.dtype = torch.float32,
    ) -> torch.Tensor:
        """One-hot feature vector for observation arrays of any batch shape."""
        win = torch.as_tensor(np.ascontiguousarray(windows), dtype=torch.long)
        inv = self.bucketize(torch.as_tensor(np.ascontiguousarray(inventories), dtype=torch.long))
        fac = torch.as_tensor(np.ascontiguousarray(facings), dtype=torch.long)
        batch_shape = fac.shape
        tiles = F.one_hot(win.reshape(*batch_shape, -1), self.n_tile_classes)
        invs = F.one_hot(inv, self.inventory_buckets)
        facs = F.one_hot(fac, self.n_facings)
        parts = [
            tiles.reshape(*batch_shape, self.tile_size),
            invs.reshape(*batch_shape, self.inventory_size),
            facs.reshape(*batch_shape, self.n_facings),
        ]
        return torch.cat(parts, dim=-1).to(dtype)

    def obs_to_vec(self, obs: Observation, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        return self.encode_arrays(
            obs.window[None], obs.inventory[None], np.array([obs.facing]), dtype=dtype
        )

    def split_logits(self, flat: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Split a (..., vec_size) logit tensor into tile, inventory, facing logits."""
        tiles = flat[..., : self.tile_size].reshape(*flat.shape[:-1], self.n_cells, self.n_tile_classes)
        inv = flat[..., self.tile_size : self.tile_size + self.inventory_size].reshape(
            *flat.shape[:-1], self.n_ingredients, self.inventory_buckets
        )
        facing = flat[..., self.tile_size + self.inventory_size :]
        return tiles, inv, facing

    def reconstruction_loss(self, flat_logits: torch.Tensor, windows, inventories, facings) -> torch.Tensor:
        """Summed cross-entropy over all observation components, mean over batch.

        Facing and inventory are single terms against dozens of tile cells, so
        they carry a small multiplier to keep their decoded modes as sharp as
        the tiles'.
        """
        tiles, inv, facing = self.split_logits(flat_logits)
        win_t = torch.as_tensor(np.ascontiguousarray(windows), dtype=torch.long).reshape(*facing.shape[:-1], -1)
        inv_t = self.bucketize(torch.as_tensor(np.ascontiguousarray(inventories), dtype=torch.long))
        fac_t = torch.as_tensor(np.ascontiguousarray(facings), dtype=torch.long)
        loss = -(
            torch.log_softmax(tiles, dim=-1).gather(-1, win_t.unsqueeze(-1)).squeeze(-1).sum(-1)
            + 2.0 * torch.log_softmax(inv, dim=-1).gather(-1, inv_t.unsqueeze(-1)).squeeze(-1).sum(-1)
            + 3.0 * torch.log_softmax(facing, dim=-1).gather(-1, fac_t.unsqueeze(-1)).squeeze(-1)
        )
        return loss.mean()

    def decode_observation(self, flat_logits: torch.Tensor) -> Observation:
        """Greedy (argmax) observation from a single flat logit vector."""
        if flat_logits.dim() != 1:
            flat_logits = flat_logits.reshape(-1)
        tiles, inv, facing = self.split_logits(flat_logits.unsqueeze(0))
        window = tiles.argmax(-1).reshape(self.window, self.window).cpu().numpy().astype(np.int16)
        inventory = inv.argmax(-1).reshape(self.n_ingredients).cpu().numpy().astype(np.int16)
        return Observation(window=window, inventory=inventory, facing=int(facing.argmax(-1)))

    def tile_accuracy(self, flat_logits: torch.Tensor, windows: np.ndarray) -> float:
        """Fraction of window cells whose argmax matches the target tiles."""
        tiles, _, _ = self.split_logits(flat_logits)
        pred = tiles.argmax(-1)
        target = torch.as_tensor(np.ascontiguousarray(windows), dtype=torch.long).reshape(pred.shape)
        return float((pred == target).float().mean())

    def observation_equal(self, a: Observation, b: Observation) -> bool:
        """Equality at the model-visible level (inventory compared bucketized)."""
        return (
            np.array_equal(a.window, b.window)
            and a.facing == b.facing
            and np.array_equal(
                np.minimum(a.inventory, self.inventory_buckets - 1),
                np.minimum(b.inventory, self.inventory_buckets - 1),
            )
        )
