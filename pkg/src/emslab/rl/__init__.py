from .ddpg import AgentConfig, DdpgAgent, act, ddpg_update, load_checkpoint, save_checkpoint, soft_update
from .mlp import Adam, Mlp, backward, forward
from .per import PerBuffer, SumTree, Transition, per_insert, per_sample, per_update

__all__ = [
    "Adam", "AgentConfig", "DdpgAgent", "Mlp", "PerBuffer", "SumTree", "Transition",
    "act", "backward", "ddpg_update", "forward", "load_checkpoint", "per_insert",
    "per_sample", "per_update", "save_checkpoint", "soft_update",
]
