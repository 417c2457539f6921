"""Toy trajectory-generation pipeline on synthetic scenes.

Forward pass: tokenize the scene (tokens carry shape and velocity features
only, never absolute pose), run interaction blocks (agent self-attention per
timestep, map self-attention, then agent-to-map cross-attention, each an
attention sub-block with a residual two-layer feed-forward), add a sinusoidal
temporal encoding and run causal self-attention along each agent's token
sequence, and decode per-step logits over the discrete action grid.

Rollout closes the loop: decode a distribution for the newest step, pick an
action (greedy or seeded sampling), advance each agent with the kinematic
update, re-tokenize, repeat. The attention sub-blocks compute
``tokens + FFN(W_o @ attention(tokens))``, so a zero-weight FFN makes a block
the identity regardless of the projections.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .attention import (
    IntraHeadSplit,
    PoseSet,
    QKVSet,
    RPEEncoders,
    Variant,
    mhca,
    mhsa,
    mhsa_causal,
)
from .errors import ConfigurationError, DimensionMismatchError, InvalidArgumentError
from .kinematics import ActionGrid, AgentState, ControlAction, kinematic_step
from .rotary import FrequencySchedule
from .scene import Scene

__all__ = [
    "PipelineConfig",
    "BlockWeights",
    "InteractionBlockWeights",
    "PipelineWeights",
    "SceneTokens",
    "ActionDistribution",
    "sinusoidal_position_encoding",
    "tokenize_scene",
    "interaction_step",
    "temporal_step",
    "decode_actions",
    "forward",
    "ConstantActionPolicy",
    "PipelinePolicy",
    "RolloutResult",
    "rollout",
    "replay_actions",
    "write_trajectory_csv",
    "AGENT_FEATURE_WIDTH",
    "ROLLOUT_SOFT_LIMIT_S",
]

AGENT_FEATURE_WIDTH = 2      # [speed, 1.0]
ROLLOUT_SOFT_LIMIT_S = 8.0   # longer horizons warn but proceed


@dataclass
class PipelineConfig:
    d_model: int = 64
    n_heads: int = 2
    d_k: int = 16                # rotary pairs per head; QK width 2*d_k
    d_v: int = 32
    n_blocks: int = 2
    ffn_hidden: int = 64
    variant: Variant = Variant.DROPE_HBH
    split: IntraHeadSplit | None = None
    grid: ActionGrid = field(default_factory=ActionGrid.default)

    def __post_init__(self):
        if self.d_model <= 0 or self.d_model % 2 != 0:
            raise ConfigurationError(f"d_model must be a positive even int, got {self.d_model}")
        if self.n_blocks < 1:
            raise ConfigurationError("need at least one interaction block")
        if self.variant is Variant.DROPE_HBH and self.n_heads < 2:
            raise ConfigurationError("head-by-head integration needs at least 2 heads")
        if self.variant is Variant.DROPE_IH and self.split is None:
            self.split = IntraHeadSplit.balanced(self.d_k)

    @property
    def sched(self) -> FrequencySchedule:
        return FrequencySchedule.default(self.d_k)

    @property
    def n_actions(self) -> int:
        return self.grid.n_actions


def _dense(rng, n_in: int, n_out: int) -> np.ndarray:
    return rng.standard_normal((n_in, n_out)) / math.sqrt(n_in)


@dataclass
class BlockWeights:
    """Projections and feed-forward weights for one attention sub-block."""

    w_q: np.ndarray    # (d_model, H, 2*d_k)
    w_k: np.ndarray    # (d_model, H, 2*d_k)
    w_v: np.ndarray    # (d_model, H, d_v)
    w_o: np.ndarray    # (H*d_v, d_model)
    ffn_w1: np.ndarray
    ffn_b1: np.ndarray
    ffn_w2: np.ndarray
    ffn_b2: np.ndarray
    enc: RPEEncoders | None = None   # pairwise-encoder variant only

    @classmethod
    def seeded(cls, config: PipelineConfig, rng) -> "BlockWeights":
        d, h = config.d_model, config.n_heads
        width, d_v = 2 * config.d_k, config.d_v
        return cls(
            w_q=_dense(rng, d, h * width).reshape(d, h, width),
            w_k=_dense(rng, d, h * width).reshape(d, h, width),
            w_v=_dense(rng, d, h * d_v).reshape(d, h, d_v),
            w_o=_dense(rng, h * d_v, d),
            ffn_w1=_dense(rng, d, config.ffn_hidden),
            ffn_b1=np.zeros(config.ffn_hidden),
            ffn_w2=_dense(rng, config.ffn_hidden, d),
            ffn_b2=np.zeros(d),
            enc=(
                RPEEncoders.seeded(config.d_k, d_v, seed=int(rng.integers(2**31)))
                if config.variant is Variant.RPE
                else None
            ),
        )

    @classmethod
    def identity(cls, config: PipelineConfig) -> "BlockWeights":
        """Identity QKV/output projections with a zero feed-forward."""
        d, h = config.d_model, config.n_heads
        width, d_v = 2 * config.d_k, config.d_v
        if h * width != d or h * d_v != d:
            raise ConfigurationError(
                "identity projections need H*2*d_k == H*d_v == d_model"
            )
        return cls(
            w_q=np.eye(d).reshape(d, h, width),
            w_k=np.eye(d).reshape(d, h, width),
            w_v=np.eye(d).reshape(d, h, d_v),
            w_o=np.eye(d),
            ffn_w1=np.zeros((d, config.ffn_hidden)),
            ffn_b1=np.zeros(config.ffn_hidden),
            ffn_w2=np.zeros((config.ffn_hidden, d)),
            ffn_b2=np.zeros(d),
        )


@dataclass
class InteractionBlockWeights:
    agent_sa: BlockWeights
    map_sa: BlockWeights
    cross: BlockWeights


@dataclass
class PipelineWeights:
    """All learnable arrays of the pipeline, explicit and seed-reproducible."""

    agent_w1: np.ndarray   # (AGENT_FEATURE_WIDTH, d_model)
    agent_b1: np.ndarray
    agent_w2: np.ndarray   # (d_model, d_model)
    agent_b2: np.ndarray
    map_point_w: np.ndarray  # (2, d_model), applied per local-frame point
    map_point_b: np.ndarray
    map_out_w: np.ndarray    # (d_model, d_model), after mean pooling
    map_out_b: np.ndarray
    blocks: list
    temporal: BlockWeights
    dec_w1: np.ndarray     # (d_model, ffn_hidden)
    dec_b1: np.ndarray
    dec_w2: np.ndarray     # (ffn_hidden, n_actions)
    dec_b2: np.ndarray

    @classmethod
    def seeded(cls, config: PipelineConfig, seed: int = 0) -> "PipelineWeights":
        rng = np.random.default_rng(seed)
        d = config.d_model
        return cls(
            agent_w1=_dense(rng, AGENT_FEATURE_WIDTH, d),
            agent_b1=np.zeros(d),
            agent_w2=_dense(rng, d, d),
            agent_b2=np.zeros(d),
            map_point_w=_dense(rng, 2, d),
            map_point_b=np.zeros(d),
            map_out_w=_dense(rng, d, d),
            map_out_b=np.zeros(d),
            blocks=[
                InteractionBlockWeights(
                    agent_sa=BlockWeights.seeded(config, rng),
                    map_sa=BlockWeights.seeded(config, rng),
                    cross=BlockWeights.seeded(config, rng),
                )
                for _ in range(config.n_blocks)
            ],
            temporal=BlockWeights.seeded(config, rng),
            dec_w1=_dense(rng, d, config.ffn_hidden),
            dec_b1=np.zeros(config.ffn_hidden),
            dec_w2=_dense(rng, config.ffn_hidden, config.n_actions),
            dec_b2=np.zeros(config.n_actions),
        )


@dataclass
class SceneTokens:
    """Pose-free token banks plus the stripped global poses."""

    agent_tokens: np.ndarray     # (n_agents, n_steps, d_model)
    map_tokens: np.ndarray       # (n_segments, d_model)
    agent_positions: np.ndarray  # (n_agents, n_steps, 2)
    agent_headings: np.ndarray   # (n_agents, n_steps)
    map_poses: PoseSet

    def agent_poses(self, step: int) -> PoseSet:
        return PoseSet(self.agent_positions[:, step], self.agent_headings[:, step])


def tokenize_scene(scene: Scene, weights: PipelineWeights, config: PipelineConfig) -> SceneTokens:
    """Encode agents and map segments into pose-free feature tokens.

    Agent tokens see only speed (plus a constant channel); map tokens see
    only the anchor-frame shape. The global poses ride along separately for
    the attention embeddings.
    """
    if scene.n_agents == 0 or scene.n_steps == 0 or not scene.segments:
        raise InvalidArgumentError("the scene needs agents, steps, and map segments")
    speeds = scene.agent_states[:, :, 3]
    feats = np.stack([speeds, np.ones_like(speeds)], axis=-1)
    agent_tokens = (
        np.tanh(feats @ weights.agent_w1 + weights.agent_b1) @ weights.agent_w2
        + weights.agent_b2
    )
    map_tokens = np.empty((len(scene.segments), config.d_model))
    for index, segment in enumerate(scene.segments):
        point_feats = np.tanh(segment.local_shape @ weights.map_point_w + weights.map_point_b)
        map_tokens[index] = point_feats.mean(axis=0) @ weights.map_out_w + weights.map_out_b
    return SceneTokens(
        agent_tokens=agent_tokens,
        map_tokens=map_tokens,
        agent_positions=scene.agent_states[:, :, :2].copy(),
        agent_headings=scene.agent_states[:, :, 2].copy(),
        map_poses=scene.map_poses(),
    )


def _project_qkv(tokens: np.ndarray, bw: BlockWeights) -> QKVSet:
    return QKVSet(
        q=np.einsum("nd,dhw->nhw", tokens, bw.w_q),
        k=np.einsum("nd,dhw->nhw", tokens, bw.w_k),
        v=np.einsum("nd,dhw->nhw", tokens, bw.w_v),
    )


def _ffn(x: np.ndarray, bw: BlockWeights) -> np.ndarray:
    return np.tanh(x @ bw.ffn_w1 + bw.ffn_b1) @ bw.ffn_w2 + bw.ffn_b2


def _self_block(tokens, poses, bw, config) -> np.ndarray:
    qkv = _project_qkv(tokens, bw)
    out = mhsa(
        qkv, poses, config.variant,
        sched=config.sched, enc=bw.enc, split=config.split,
    )
    return tokens + _ffn(out.merged @ bw.w_o, bw)


def _cross_block(tokens, poses, kv_tokens, kv_poses, bw, config) -> np.ndarray:
    queries = _project_qkv(tokens, bw)
    keysvals = _project_qkv(kv_tokens, bw)
    out = mhca(
        queries, keysvals, poses, kv_poses, config.variant,
        sched=config.sched, enc=bw.enc, split=config.split,
    )
    return tokens + _ffn(out.merged @ bw.w_o, bw)


def interaction_step(
    tokens: SceneTokens, block: InteractionBlockWeights, config: PipelineConfig
) -> SceneTokens:
    """One interaction block: agents per step, the map once, then agents to map."""
    agent_tokens = tokens.agent_tokens.copy()
    n_steps = agent_tokens.shape[1]
    for t in range(n_steps):
        agent_tokens[:, t] = _self_block(
            agent_tokens[:, t], tokens.agent_poses(t), block.agent_sa, config
        )
    map_tokens = _self_block(tokens.map_tokens, tokens.map_poses, block.map_sa, config)
    for t in range(n_steps):
        agent_tokens[:, t] = _cross_block(
            agent_tokens[:, t], tokens.agent_poses(t),
            map_tokens, tokens.map_poses, block.cross, config,
        )
    return replace(tokens, agent_tokens=agent_tokens, map_tokens=map_tokens)


def sinusoidal_position_encoding(n_steps: int, d_model: int) -> np.ndarray:
    positions = np.arange(n_steps, dtype=np.float64)[:, None]
    scales = np.exp(
        -math.log(10000.0) * np.arange(0, d_model, 2, dtype=np.float64) / d_model
    )[None, :]
    encoding = np.empty((n_steps, d_model))
    encoding[:, 0::2] = np.sin(positions * scales)
    encoding[:, 1::2] = np.cos(positions * scales)
    return encoding


def temporal_step(agent_tokens: np.ndarray, bw: BlockWeights, config: PipelineConfig):
    """Causal self-attention along each agent's token sequence.

    Output at step t depends only on inputs at steps <= t; masked positions
    are excluded before the softmax, so the guarantee is bitwise.
    """
    n_agents, n_steps, _ = agent_tokens.shape
    encoded = agent_tokens + sinusoidal_position_encoding(n_steps, config.d_model)[None]
    out = np.empty_like(encoded)
    for i in range(n_agents):
        sequence = encoded[i]
        attended = mhsa_causal(_project_qkv(sequence, bw))
        out[i] = sequence + _ffn(attended.merged @ bw.w_o, bw)
    return out


@dataclass
class ActionDistribution:
    """Per-agent, per-step logits over the flat action grid."""

    logits: np.ndarray   # (n_agents, n_steps, n_actions)

    def probabilities(self) -> np.ndarray:
        peak = self.logits.max(axis=-1, keepdims=True)
        exp = np.exp(self.logits - peak)
        return exp / exp.sum(axis=-1, keepdims=True)

    def greedy_indices(self) -> np.ndarray:
        return self.logits.argmax(axis=-1)

    def sample_indices(self, rng) -> np.ndarray:
        probs = self.probabilities()
        flat = probs.reshape(-1, probs.shape[-1])
        draws = rng.random(flat.shape[0])
        cumulative = np.cumsum(flat, axis=-1)
        indices = (draws[:, None] > cumulative).sum(axis=-1)
        return indices.reshape(probs.shape[:-1])


def decode_actions(agent_tokens: np.ndarray, weights: PipelineWeights,
                   config: PipelineConfig) -> ActionDistribution:
    """MLP from final agent tokens to action-grid logits."""
    if not np.all(np.isfinite(agent_tokens)):
        raise InvalidArgumentError("agent tokens must be finite")
    hidden = np.tanh(agent_tokens @ weights.dec_w1 + weights.dec_b1)
    return ActionDistribution(hidden @ weights.dec_w2 + weights.dec_b2)


def forward(scene: Scene, weights: PipelineWeights, config: PipelineConfig):
    """Full pipeline forward pass; returns the distribution and final tokens."""
    tokens = tokenize_scene(scene, weights, config)
    for block in weights.blocks:
        tokens = interaction_step(tokens, block, config)
    final_tokens = temporal_step(tokens.agent_tokens, weights.temporal, config)
    return decode_actions(final_tokens, weights, config), final_tokens


class ConstantActionPolicy:
    """Emits one fixed action for every agent at every step."""

    def __init__(self, action: ControlAction):
        self.action = action

    def actions(self, scene: Scene):
        return [self.action] * scene.n_agents


class PipelinePolicy:
    """Decodes the newest-step distribution and picks an action per agent."""

    def __init__(self, weights: PipelineWeights, config: PipelineConfig,
                 mode: str = "greedy", seed: int = 0):
        if mode not in ("greedy", "sample"):
            raise ConfigurationError(f"unknown policy mode {mode!r}")
        self.weights = weights
        self.config = config
        self.mode = mode
        self.rng = np.random.default_rng(seed)

    def actions(self, scene: Scene):
        distribution, _ = forward(scene, self.weights, self.config)
        last = ActionDistribution(distribution.logits[:, -1:, :])
        if self.mode == "greedy":
            indices = last.greedy_indices()[:, 0]
        else:
            indices = last.sample_indices(self.rng)[:, 0]
        return [self.config.grid.action(int(index)) for index in indices]


@dataclass
class RolloutResult:
    """Predicted states (n_agents, horizon, 4) and the actions that produced them."""

    states: np.ndarray
    actions: list        # actions[agent][step] -> ControlAction
    dt: float

    def positions(self) -> np.ndarray:
        return self.states[:, :, :2]


def rollout(scene: Scene, policy, horizon: int, *, prefix_steps: int | None = None):
    """Autoregressive closed-loop rollout from a scene prefix.

    At each step the policy sees the history so far, every agent advances by
    one kinematic update, and the new states are appended before the next
    decision. Horizons beyond the soft 8 s limit warn but proceed.
    """
    if horizon < 1:
        raise InvalidArgumentError(f"horizon must be positive, got {horizon}")
    history = scene if prefix_steps is None else scene.prefix(prefix_steps)
    if horizon * history.dt > ROLLOUT_SOFT_LIMIT_S + 1e-9:
        warnings.warn(
            f"horizon {horizon} steps at dt={history.dt} s exceeds the "
            f"{ROLLOUT_SOFT_LIMIT_S} s soft limit; proceeding",
            stacklevel=2,
        )
    n_agents = history.n_agents
    states = np.empty((n_agents, horizon, 4))
    actions: list[list[ControlAction]] = [[] for _ in range(n_agents)]
    for step in range(horizon):
        step_actions = policy.actions(history)
        if len(step_actions) != n_agents:
            raise DimensionMismatchError(
                f"policy returned {len(step_actions)} actions for {n_agents} agents"
            )
        new_states = []
        for i in range(n_agents):
            current = AgentState.from_array(history.agent_states[i, -1])
            advanced = kinematic_step(current, step_actions[i], history.dt)
            new_states.append(advanced.as_array())
            actions[i].append(step_actions[i])
            states[i, step] = advanced.as_array()
        history = history.with_appended_states(np.array(new_states))
    return RolloutResult(states=states, actions=actions, dt=history.dt)


def replay_actions(initial_states, actions, dt: float) -> np.ndarray:
    """Cumulative kinematic replay of recorded actions; the rollout oracle."""
    n_agents = len(initial_states)
    horizon = len(actions[0])
    states = np.empty((n_agents, horizon, 4))
    for i in range(n_agents):
        state = initial_states[i]
        for t in range(horizon):
            state = kinematic_step(state, actions[i][t], dt)
            states[i, t] = state.as_array()
    return states


def write_trajectory_csv(path, result: RolloutResult, scene_id: int = 0) -> None:
    """CSV rows: scene_id, agent_id, t, x, y, yaw, v (shortest-roundtrip floats)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scene_id", "agent_id", "t", "x", "y", "yaw", "v"])
        n_agents, horizon, _ = result.states.shape
        for agent in range(n_agents):
            for t in range(horizon):
                x, y, yaw, v = (float(value) for value in result.states[agent, t])
                writer.writerow([scene_id, agent, t, repr(x), repr(y), repr(yaw), repr(v)])
