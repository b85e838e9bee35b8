"""DDPG agent with an MC-dropout critic, target networks and prioritized replay."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ..errors import CheckpointError, ShapeError, TrainingDivergence
from .mlp import Adam, Mlp
from .per import Transition

OBS_DIM = 4
CHECKPOINT_FORMAT = "emslab-ddpg"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 64
    buffer_capacity: int = 2 ** 17
    alpha_per: float = 0.6
    beta_per_start: float = 0.4
    beta_per_end: float = 1.0
    epsilon_per: float = 1e-3
    noise_sigma: float = 0.3
    noise_decay: float = 0.95
    mc_passes: int = 4
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    dropout_rate: float = 0.1
    actor_hidden: tuple[int, ...] = (100, 100)
    critic_hidden: tuple[int, ...] = (100, 100, 50)
    reward_scale: float = 1.0
    # L2 penalty on the part of the actor's pre-tanh output beyond +-actor_preact_free;
    # keeps the policy out of the flat tails of tanh where its gradient vanishes
    actor_preact_l2: float = 0.0
    actor_preact_free: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "actor_hidden", tuple(int(x) for x in self.actor_hidden))
        object.__setattr__(self, "critic_hidden", tuple(int(x) for x in self.critic_hidden))
        if not 0 < self.gamma < 1 or not 0 < self.tau <= 1:
            raise ValueError("gamma must lie in (0, 1) and tau in (0, 1]")
        if self.mc_passes < 1 or self.batch_size < 1:
            raise ValueError("mc_passes and batch_size must be >= 1")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AgentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown agent setting(s): {', '.join(sorted(unknown))}")
        return cls(**d)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["actor_hidden"] = list(self.actor_hidden)
        d["critic_hidden"] = list(self.critic_hidden)
        return d


def soft_update(target: Mlp, online: Mlp, tau: float) -> None:
    for t, o in zip(target.params, online.params):
        t *= 1.0 - tau
        t += tau * o


class DdpgAgent:
    def __init__(self, config: AgentConfig | None = None, seed: int = 0):
        self.config = cfg = config or AgentConfig()
        self.rng = np.random.default_rng(seed)
        self.actor = Mlp.init([OBS_DIM, *cfg.actor_hidden, 1], self.rng, out_activation="tanh")
        self.critic = Mlp.init([OBS_DIM + 1, *cfg.critic_hidden, 1], self.rng,
                               out_activation="linear", dropout_rate=cfg.dropout_rate)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.actor_opt = Adam(self.actor.params, cfg.actor_lr)
        self.critic_opt = Adam(self.critic.params, cfg.critic_lr)
        self.noise_sigma = cfg.noise_sigma
        self.updates = 0

    @property
    def gamma(self) -> float:
        return self.config.gamma

    @property
    def tau(self) -> float:
        return self.config.tau

    @property
    def mc_passes(self) -> int:
        return self.config.mc_passes

    def greedy(self, obs) -> np.ndarray:
        """Deterministic actor output mapped to [0, 1]; accepts one obs or a batch."""
        return 0.5 * (self.actor.forward(obs) + 1.0)

    def act(self, obs, explore: bool = False, rng: np.random.Generator | None = None) -> float:
        u = float(self.greedy(np.asarray(obs, dtype=float))[0])
        if explore and self.noise_sigma > 0:
            u += (rng or self.rng).normal(0.0, self.noise_sigma)
        return min(max(u, 0.0), 1.0)

    def decay_noise(self) -> None:
        self.noise_sigma *= self.config.noise_decay

    def target_q(self, next_states: np.ndarray) -> np.ndarray:
        """Target critic averaged over ``mc_passes`` dropout passes at the target actor's action."""
        a_next = 0.5 * (self.target_actor.forward(next_states) + 1.0)
        x = np.hstack([next_states, a_next])
        q = np.zeros((len(next_states), 1))
        for _ in range(self.mc_passes):
            q += self.target_critic.forward(x, dropout=True, rng=self.rng)
        return q[:, 0] / self.mc_passes

    def update(self, batch: Sequence[Transition], is_weights=None, train_actor: bool = True):
        """One critic and actor gradient step; returns (critic_loss, actor_loss, |td|)."""
        cfg = self.config
        n = len(batch)
        if n == 0:
            raise ValueError("empty batch")
        s = np.array([t.state for t in batch], dtype=float)
        a = np.array([[t.action] for t in batch], dtype=float)
        r = np.array([t.reward for t in batch], dtype=float) * cfg.reward_scale
        s2 = np.array([t.next_state for t in batch], dtype=float)
        done = np.array([t.done for t in batch], dtype=float)
        w = np.ones(n) if is_weights is None else np.asarray(is_weights, dtype=float)

        y = r + cfg.gamma * (1.0 - done) * self.target_q(s2)
        q = self.critic.forward(np.hstack([s, a]), dropout=True, rng=self.rng)[:, 0]
        td = y - q
        critic_loss = float(np.mean(w * td * td))
        grads, _ = self.critic.backward((-2.0 * w * td / n)[:, None])
        self._check(critic_loss, grads, "critic")
        self.critic_opt.step(self.critic.params, grads)

        actor_loss = 0.0
        if train_actor:
            y_pi = self.actor.forward(s)
            a_pi = 0.5 * (y_pi + 1.0)
            q_pi = self.critic.forward(np.hstack([s, a_pi]))
            z = self.actor.last_preactivation
            excess = np.sign(z) * np.maximum(np.abs(z) - cfg.actor_preact_free, 0.0)
            actor_loss = float(-np.mean(q_pi) + cfg.actor_preact_l2 * np.mean(excess * excess))
            _, g_in = self.critic.backward(np.full((n, 1), -1.0 / n))
            a_grads, _ = self.actor.backward(0.5 * g_in[:, -1:], cfg.actor_preact_l2 * 2.0 * excess / n)
            self._check(actor_loss, a_grads, "actor")
            self.actor_opt.step(self.actor.params, a_grads)

        soft_update(self.target_critic, self.critic, cfg.tau)
        soft_update(self.target_actor, self.actor, cfg.tau)
        self.updates += 1
        return critic_loss, actor_loss, np.abs(td)

    @staticmethod
    def _check(loss: float, grads, which: str) -> None:
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
            raise TrainingDivergence(f"{which} loss became non-finite ({loss})")

    # -- persistence ----------------------------------------------------

    def state_dict(self) -> dict[str, Any]:
        nets = {}
        for name in ("actor", "critic", "target_actor", "target_critic"):
            net: Mlp = getattr(self, name)
            nets[name] = {
                "layer_sizes": list(net.layer_sizes),
                "out_activation": net.out_activation,
                "dropout_rate": net.dropout_rate,
                "weights": [w.tolist() for w in net.weights],
                "biases": [b.tolist() for b in net.biases],
            }
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "nets": nets,
            "optim": {"actor": self.actor_opt.state(), "critic": self.critic_opt.state()},
            "rng": self.rng.bit_generator.state,
            "noise_sigma": self.noise_sigma,
            "updates": self.updates,
        }

    @classmethod
    def from_state_dict(cls, d: dict[str, Any]) -> "DdpgAgent":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError("not an emslab agent checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {d.get('version')}")
        agent = cls(AgentConfig.from_dict(d["config"]))
        for name, spec in d["nets"].items():
            net: Mlp = getattr(agent, name)
            if list(spec["layer_sizes"]) != list(net.layer_sizes):
                raise ShapeError(f"{name}: checkpoint layers {spec['layer_sizes']} != {net.layer_sizes}")
            weights = [np.array(w, dtype=float) for w in spec["weights"]]
            biases = [np.array(b, dtype=float) for b in spec["biases"]]
            setattr(agent, name, Mlp(list(spec["layer_sizes"]), weights, biases,
                                     spec["out_activation"], spec["dropout_rate"]))
        agent.actor_opt = Adam(agent.actor.params, agent.config.actor_lr)
        agent.critic_opt = Adam(agent.critic.params, agent.config.critic_lr)
        agent.actor_opt.load_state(d["optim"]["actor"])
        agent.critic_opt.load_state(d["optim"]["critic"])
        agent.rng.bit_generator.state = d["rng"]
        agent.noise_sigma = float(d["noise_sigma"])
        agent.updates = int(d["updates"])
        return agent


def save_checkpoint(agent: DdpgAgent, path, meta: dict | None = None) -> None:
    d = agent.state_dict()
    d["meta"] = meta or {}
    Path(path).write_text(json.dumps(d, sort_keys=True), encoding="utf-8")


def load_checkpoint(path) -> tuple[DdpgAgent, dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc})") from None
    return DdpgAgent.from_state_dict(d), d.get("meta", {})


def act(agent: DdpgAgent, obs, explore: bool, rng: np.random.Generator | None = None) -> float:
    return agent.act(obs, explore, rng)


def ddpg_update(agent: DdpgAgent, batch: Sequence[Transition], is_weights=None):
    return agent.update(batch, is_weights)
