"""Forward and reverse world models, observation encoding, checkpoints."""
from .checkpoint import CheckpointError, load_model, read_checkpoint, save_model
from .encoding import ObsSpec
from .nets import LatentSpec, ModelError, categorical_kl, kl_balance, sample_latent
from .reverse import CounterfactualState, ReverseWorldModel, generate_prior_state
from .worldmodel import ForwardWorldModel, ImaginedRollout, WorldModelConfig

__all__ = [
    "CheckpointError",
    "CounterfactualState",
    "ForwardWorldModel",
    "ImaginedRollout",
    "LatentSpec",
    "ModelError",
    "ObsSpec",
    "ReverseWorldModel",
    "WorldModelConfig",
    "categorical_kl",
    "generate_prior_state",
    "kl_balance",
    "load_model",
    "read_checkpoint",
    "sample_latent",
    "save_model",
]
