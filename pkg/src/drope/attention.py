"""Multi-head attention engines over token banks.

Five scoring regimes share one softmax/weighted-sum core. Four of them
differ only in the per-pair rotation angles applied to the QK banks before
the dot products (none, positions, headings, or a mix of both); the fifth
adds a learned encoding of each pairwise relative pose to the key and value
vectors, which is what makes its memory footprint quadratic in the token
count. That pairwise regime materializes its per-pair tensors on purpose so
the profiler can count them.

Shapes: QK banks are (N, H, 2*d_k) with d_k rotation pairs per head, value
banks are (N, H, d_v). Scores are scaled by 1/sqrt(d_k) with d_k the pair
count. All engines are pure functions of their inputs; the optional
AllocationMeter only records scalar counts of the arrays an engine
materializes, grouped into the categories the memory ledger predicts.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigurationError,
    DimensionMismatchError,
    InvalidArgumentError,
    VerificationError,
)
from .rotary import (
    FrequencySchedule,
    drope_embed,
    planar_pair_angles,
    rope_embed,
    rotate_pairs,
    wrap_angle,
)

__all__ = [
    "Variant",
    "ROTARY_VARIANTS",
    "QKVSet",
    "PoseSet",
    "IntraHeadSplit",
    "RPEEncoders",
    "AttentionOutput",
    "AllocationMeter",
    "mhsa",
    "mhsa_plain",
    "mhsa_rpe",
    "mhsa_rope",
    "mhsa_drope_hbh",
    "mhsa_drope_ih",
    "mhsa_causal",
    "mhca",
    "CounterexampleReport",
    "rope_periodicity_counterexample",
    "attention_backward",
    "ROPE_GAP_MIN",
    "DROPE_GAP_MAX",
]


class Variant(enum.Enum):
    """The five attention regimes."""

    PLAIN = "plain"
    RPE = "rpe"
    ROPE = "rope"
    DROPE_HBH = "drope-hbh"
    DROPE_IH = "drope-ih"

    @classmethod
    def from_string(cls, name: str) -> "Variant":
        for variant in cls:
            if variant.value == name:
                return variant
        raise ConfigurationError(
            f"unknown variant {name!r}; expected one of "
            f"{[v.value for v in cls]}"
        )


#: Variants whose QK banks are rotated before the dot products.
ROTARY_VARIANTS = (Variant.ROPE, Variant.DROPE_HBH, Variant.DROPE_IH)


def _as_finite(name: str, arr, dtype=np.float64) -> np.ndarray:
    arr = np.asarray(arr, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} must be finite")
    return arr


@dataclass
class QKVSet:
    """Query/key/value banks for N tokens and H heads.

    ``q`` and ``k`` have shape (N, H, 2*d_k), ``v`` has shape (N, H, d_v).
    """

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.q = _as_finite("q bank", self.q)
        self.k = _as_finite("k bank", self.k)
        self.v = _as_finite("v bank", self.v)
        if self.q.ndim != 3 or self.k.ndim != 3 or self.v.ndim != 3:
            raise DimensionMismatchError("QKV banks must be (tokens, heads, width)")
        if self.q.shape != self.k.shape:
            raise DimensionMismatchError(
                f"q and k shapes differ: {self.q.shape} vs {self.k.shape}"
            )
        if self.v.shape[:2] != self.q.shape[:2]:
            raise DimensionMismatchError(
                f"v bank {self.v.shape} mismatches q bank {self.q.shape}"
            )
        if self.q.shape[-1] % 2 != 0 or self.q.shape[-1] == 0:
            raise DimensionMismatchError(
                f"QK width must be a positive even number, got {self.q.shape[-1]}"
            )

    @property
    def n_tokens(self) -> int:
        return self.q.shape[0]

    @property
    def n_heads(self) -> int:
        return self.q.shape[1]

    @property
    def d_k(self) -> int:
        """Number of 2D rotation pairs per head (QK width is 2*d_k)."""
        return self.q.shape[-1] // 2

    @property
    def d_v(self) -> int:
        return self.v.shape[-1]

    @classmethod
    def random(cls, n_tokens: int, n_heads: int, d_k: int, d_v: int, rng) -> "QKVSet":
        return cls(
            q=rng.standard_normal((n_tokens, n_heads, 2 * d_k)),
            k=rng.standard_normal((n_tokens, n_heads, 2 * d_k)),
            v=rng.standard_normal((n_tokens, n_heads, d_v)),
        )


@dataclass
class PoseSet:
    """Global 2D positions (meters) and headings (canonical radians)."""

    positions: np.ndarray
    headings: np.ndarray

    def __post_init__(self):
        self.positions = _as_finite("positions", self.positions)
        self.headings = wrap_angle(_as_finite("headings", self.headings))
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise DimensionMismatchError(
                f"positions must be (tokens, 2), got {self.positions.shape}"
            )
        if self.headings.shape != (self.positions.shape[0],):
            raise DimensionMismatchError(
                f"headings shape {self.headings.shape} mismatches "
                f"{self.positions.shape[0]} tokens"
            )

    @property
    def n_tokens(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def random(cls, n_tokens: int, rng, position_scale: float = 50.0) -> "PoseSet":
        return cls(
            positions=rng.uniform(-position_scale, position_scale, (n_tokens, 2)),
            headings=rng.uniform(0.0, 2.0 * math.pi, n_tokens),
        )

    def translated(self, dx: float, dy: float) -> "PoseSet":
        return PoseSet(self.positions + np.array([dx, dy]), self.headings)

    def heading_shifted(self, dtheta: float) -> "PoseSet":
        return PoseSet(self.positions, self.headings + dtheta)

    def rotated(self, angle: float, about=(0.0, 0.0)) -> "PoseSet":
        """Rigidly rotate the scene: positions about a point, headings shifted."""
        c, s = math.cos(angle), math.sin(angle)
        rel = self.positions - np.asarray(about, dtype=np.float64)
        rotated = np.column_stack(
            [c * rel[:, 0] - s * rel[:, 1], s * rel[:, 0] + c * rel[:, 1]]
        ) + np.asarray(about, dtype=np.float64)
        return PoseSet(rotated, self.headings + angle)

    def permuted(self, perm) -> "PoseSet":
        perm = np.asarray(perm)
        return PoseSet(self.positions[perm], self.headings[perm])


@dataclass(frozen=True)
class IntraHeadSplit:
    """How a QK vector splits into position and angle sub-vectors.

    Both widths are even and sum to the QK width 2*d_k. ``d_angle == 0`` is
    the degenerate split that reduces to the pure position embedding.
    """

    d_pos: int
    d_angle: int

    def __post_init__(self):
        if self.d_pos < 0 or self.d_angle < 0:
            raise ConfigurationError("split widths must be non-negative")
        if self.d_pos % 2 != 0 or self.d_angle % 2 != 0:
            raise ConfigurationError(
                f"split widths must be even, got ({self.d_pos}, {self.d_angle})"
            )

    def validate_width(self, qk_width: int) -> None:
        if self.d_pos + self.d_angle != qk_width:
            raise ConfigurationError(
                f"split ({self.d_pos}, {self.d_angle}) does not sum to QK width {qk_width}"
            )

    @classmethod
    def balanced(cls, d_k: int) -> "IntraHeadSplit":
        if d_k % 2 != 0:
            raise ConfigurationError(
                f"balanced split needs an even pair count, got d_k={d_k}"
            )
        return cls(d_k, d_k)


@dataclass
class RPEEncoders:
    """Two-layer tanh perceptrons mapping (dx, dy, dtheta) to QK/V offsets.

    The key encoder outputs the full QK width 2*d_k, the value encoder
    outputs d_v. One encoder pair is shared across heads; its output is
    broadcast into every head's pairwise key/value tensors.
    """

    w1_k: np.ndarray
    b1_k: np.ndarray
    w2_k: np.ndarray
    b2_k: np.ndarray
    w1_v: np.ndarray
    b1_v: np.ndarray
    w2_v: np.ndarray
    b2_v: np.ndarray

    def __post_init__(self):
        for name in ("w1_k", "b1_k", "w2_k", "b2_k", "w1_v", "b1_v", "w2_v", "b2_v"):
            setattr(self, name, _as_finite(name, getattr(self, name)))
        if self.w1_k.shape[0] != 3 or self.w1_v.shape[0] != 3:
            raise DimensionMismatchError("encoders take a 3-dim relative descriptor")
        if self.w1_k.shape[1] != self.w2_k.shape[0] or self.w1_v.shape[1] != self.w2_v.shape[0]:
            raise DimensionMismatchError("encoder hidden widths are inconsistent")

    @property
    def hidden(self) -> int:
        return self.w1_k.shape[1]

    @property
    def key_width(self) -> int:
        return self.w2_k.shape[1]

    @property
    def value_width(self) -> int:
        return self.w2_v.shape[1]

    def encode_key(self, rel) -> np.ndarray:
        h = np.tanh(rel @ self.w1_k + self.b1_k)
        return h @ self.w2_k + self.b2_k

    def encode_value(self, rel) -> np.ndarray:
        h = np.tanh(rel @ self.w1_v + self.b1_v)
        return h @ self.w2_v + self.b2_v

    @classmethod
    def seeded(cls, d_k: int, d_v: int, hidden: int = 32, seed: int = 0) -> "RPEEncoders":
        rng = np.random.default_rng(seed)

        def dense(n_in, n_out):
            return rng.standard_normal((n_in, n_out)) / math.sqrt(n_in)

        return cls(
            w1_k=dense(3, hidden), b1_k=np.zeros(hidden),
            w2_k=dense(hidden, 2 * d_k), b2_k=np.zeros(2 * d_k),
            w1_v=dense(3, hidden), b1_v=np.zeros(hidden),
            w2_v=dense(hidden, d_v), b2_v=np.zeros(d_v),
        )

    @classmethod
    def zeros(cls, d_k: int, d_v: int, hidden: int = 32) -> "RPEEncoders":
        return cls(
            w1_k=np.zeros((3, hidden)), b1_k=np.zeros(hidden),
            w2_k=np.zeros((hidden, 2 * d_k)), b2_k=np.zeros(2 * d_k),
            w1_v=np.zeros((3, hidden)), b1_v=np.zeros(hidden),
            w2_v=np.zeros((hidden, d_v)), b2_v=np.zeros(d_v),
        )


@dataclass
class AttentionOutput:
    """Per-head outputs, their concatenation, and optional debug weights."""

    per_head: np.ndarray          # (N, H, d_v)
    merged: np.ndarray            # (N, H * d_v)
    alpha: np.ndarray | None = None  # (N, H, M), retained only on request


class AllocationMeter:
    """Counts the scalars an engine materializes, by ledger category."""

    CATEGORIES = ("qkv", "embedded", "pairwise")

    def __init__(self):
        self.counts = {category: 0 for category in self.CATEGORIES}

    def add(self, category: str, n_scalars: int) -> None:
        self.counts[category] += int(n_scalars)

    def total(self) -> int:
        return sum(self.counts.values())


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    peak = np.max(scores, axis=-1, keepdims=True)
    exp = np.exp(scores - peak)
    return exp / np.sum(exp, axis=-1, keepdims=True)


def _bank_pair_angles(variant, poses, n_heads, d_k, sched, split, angle_freqs):
    """Per-(token, head, pair) rotation angles for one bank, or None for plain.

    The returned array broadcasts against a (N, H, 2*d_k) bank; head-uniform
    variants return (N, 1, d_k).
    """
    if variant is Variant.PLAIN:
        return None
    if variant is Variant.ROPE:
        angles = planar_pair_angles(poses.positions, d_k, sched.freqs)
        return angles[:, None, :]
    headings = poses.headings
    if angle_freqs is None:
        heading_angles = np.repeat(headings[:, None], max(d_k, 1), axis=1)
    else:
        angle_freqs = np.asarray(angle_freqs, dtype=np.float64)
        heading_angles = headings[:, None] * angle_freqs[None, :d_k]
    if variant is Variant.DROPE_HBH:
        pos_angles = planar_pair_angles(poses.positions, d_k, sched.freqs)
        angles = np.empty((poses.n_tokens, n_heads, d_k))
        angles[:, 0::2, :] = pos_angles[:, None, :]
        angles[:, 1::2, :] = heading_angles[:, None, :]
        return angles
    if variant is Variant.DROPE_IH:
        p_pos = split.d_pos // 2
        angles = np.empty((poses.n_tokens, 1, d_k))
        angles[:, 0, :p_pos] = planar_pair_angles(poses.positions, p_pos, sched.freqs)
        angles[:, 0, p_pos:] = heading_angles[:, : d_k - p_pos]
        return angles
    raise ConfigurationError(f"variant {variant} has no rotary bank angles")


def _validate_variant(variant, n_heads, d_k, sched, enc, split):
    if variant is Variant.PLAIN:
        return split
    if variant is Variant.RPE:
        if enc is None:
            raise ConfigurationError("the rpe variant requires encoders")
        if enc.key_width != 2 * d_k:
            raise DimensionMismatchError(
                f"key encoder width {enc.key_width} mismatches QK width {2 * d_k}"
            )
        return split
    if sched is None:
        raise ConfigurationError(f"variant {variant.value} requires a frequency schedule")
    if sched.d_k != d_k:
        raise DimensionMismatchError(
            f"schedule has {sched.d_k} pairs but the banks have {d_k}"
        )
    if variant is Variant.DROPE_HBH and n_heads < 2:
        raise ConfigurationError("head-by-head integration needs at least 2 heads")
    if variant is Variant.DROPE_IH:
        if split is None:
            split = IntraHeadSplit.balanced(d_k)
        split.validate_width(2 * d_k)
    return split


def _attend(
    variant,
    q_bank,
    k_bank,
    v_bank,
    poses_q,
    poses_kv,
    *,
    sched=None,
    enc=None,
    split=None,
    angle_freqs=None,
    mask=None,
    keep_alpha=False,
    meter=None,
) -> AttentionOutput:
    n_q, n_heads, width = q_bank.shape
    d_k = width // 2
    d_v = v_bank.shape[-1]
    split = _validate_variant(variant, n_heads, d_k, sched, enc, split)
    if variant is not Variant.PLAIN:
        if poses_q is None or poses_kv is None:
            raise ConfigurationError(f"variant {variant.value} requires poses")
        if poses_q.n_tokens != n_q or poses_kv.n_tokens != k_bank.shape[0]:
            raise DimensionMismatchError("pose counts mismatch the token banks")
    if meter is not None:
        meter.add("qkv", q_bank.size + k_bank.size + v_bank.size)

    scale = 1.0 / math.sqrt(d_k)
    if variant is Variant.RPE:
        rel = np.empty((n_q, k_bank.shape[0], 3))
        rel[:, :, :2] = poses_q.positions[:, None, :] - poses_kv.positions[None, :, :]
        rel[:, :, 2] = wrap_angle(poses_q.headings[:, None] - poses_kv.headings[None, :])
        k_pairwise = k_bank[None, :, :, :] + enc.encode_key(rel)[:, :, None, :]
        v_pairwise = v_bank[None, :, :, :] + enc.encode_value(rel)[:, :, None, :]
        if meter is not None:
            meter.add("pairwise", k_pairwise.size + v_pairwise.size)
        scores = np.einsum("ihd,ijhd->ihj", q_bank, k_pairwise) * scale
        if mask is not None:
            scores = np.where(mask[:, None, :], scores, -np.inf)
        alpha = _softmax_rows(scores)
        per_head = np.einsum("ihj,ijhd->ihd", alpha, v_pairwise)
    else:
        angles_q = _bank_pair_angles(variant, poses_q, n_heads, d_k, sched, split, angle_freqs)
        if angles_q is None:
            q_hat, k_hat = q_bank, k_bank
        else:
            angles_k = _bank_pair_angles(
                variant, poses_kv, n_heads, d_k, sched, split, angle_freqs
            )
            q_hat = rotate_pairs(q_bank, angles_q)
            k_hat = rotate_pairs(k_bank, angles_k)
            if meter is not None:
                meter.add("embedded", q_hat.size + k_hat.size)
        scores = np.einsum("ihd,jhd->ihj", q_hat, k_hat) * scale
        if mask is not None:
            scores = np.where(mask[:, None, :], scores, -np.inf)
        alpha = _softmax_rows(scores)
        per_head = np.einsum("ihj,jhd->ihd", alpha, v_bank)

    merged = per_head.reshape(n_q, n_heads * d_v)
    return AttentionOutput(per_head, merged, alpha if keep_alpha else None)


def mhsa_plain(qkv: QKVSet, *, keep_alpha=False, meter=None) -> AttentionOutput:
    """Standard multi-head self-attention with max-stabilized softmax."""
    return _attend(
        Variant.PLAIN, qkv.q, qkv.k, qkv.v, None, None,
        keep_alpha=keep_alpha, meter=meter,
    )


def mhsa_causal(qkv: QKVSet, *, keep_alpha=False, meter=None) -> AttentionOutput:
    """Plain self-attention with a strictly causal (lower-triangular) mask."""
    n = qkv.n_tokens
    mask = np.tril(np.ones((n, n), dtype=bool))
    return _attend(
        Variant.PLAIN, qkv.q, qkv.k, qkv.v, None, None,
        mask=mask, keep_alpha=keep_alpha, meter=meter,
    )


def mhsa_rpe(qkv: QKVSet, poses: PoseSet, enc: RPEEncoders, *, keep_alpha=False, meter=None):
    """Self-attention with learned pairwise key/value offsets.

    The (N, N, H, width) intermediates are materialized by construction so
    their storage can be measured.
    """
    _check_pose_count(qkv, poses)
    return _attend(
        Variant.RPE, qkv.q, qkv.k, qkv.v, poses, poses,
        enc=enc, keep_alpha=keep_alpha, meter=meter,
    )


def mhsa_rope(qkv: QKVSet, poses: PoseSet, sched: FrequencySchedule, *, keep_alpha=False, meter=None):
    """Self-attention with the position embedding applied to the QK banks."""
    _check_pose_count(qkv, poses)
    return _attend(
        Variant.ROPE, qkv.q, qkv.k, qkv.v, poses, poses,
        sched=sched, keep_alpha=keep_alpha, meter=meter,
    )


def mhsa_drope_hbh(
    qkv: QKVSet, poses: PoseSet, sched: FrequencySchedule,
    *, angle_freqs=None, keep_alpha=False, meter=None,
):
    """Head-by-head integration: even heads encode positions, odd heads headings."""
    _check_pose_count(qkv, poses)
    return _attend(
        Variant.DROPE_HBH, qkv.q, qkv.k, qkv.v, poses, poses,
        sched=sched, angle_freqs=angle_freqs, keep_alpha=keep_alpha, meter=meter,
    )


def mhsa_drope_ih(
    qkv: QKVSet, poses: PoseSet, sched: FrequencySchedule, split: IntraHeadSplit | None = None,
    *, angle_freqs=None, keep_alpha=False, meter=None,
):
    """Intra-head integration: each QK vector splits into position and angle parts."""
    _check_pose_count(qkv, poses)
    return _attend(
        Variant.DROPE_IH, qkv.q, qkv.k, qkv.v, poses, poses,
        sched=sched, split=split, angle_freqs=angle_freqs,
        keep_alpha=keep_alpha, meter=meter,
    )


def mhsa(
    qkv: QKVSet, poses: PoseSet | None, variant: Variant,
    *, sched=None, enc=None, split=None, angle_freqs=None, keep_alpha=False, meter=None,
) -> AttentionOutput:
    """Dispatch to the requested self-attention variant.

    Builds the default frequency schedule when one is needed but not given.
    """
    if variant is not Variant.PLAIN:
        _check_pose_count(qkv, poses)
    if sched is None and variant in ROTARY_VARIANTS:
        sched = FrequencySchedule.default(qkv.d_k)
    return _attend(
        variant, qkv.q, qkv.k, qkv.v, poses, poses,
        sched=sched, enc=enc, split=split, angle_freqs=angle_freqs,
        keep_alpha=keep_alpha, meter=meter,
    )


def mhca(
    queries: QKVSet, keysvals: QKVSet, poses_q: PoseSet | None, poses_kv: PoseSet | None,
    variant: Variant,
    *, sched=None, enc=None, split=None, angle_freqs=None, keep_alpha=False, meter=None,
) -> AttentionOutput:
    """Cross-attention: Q from the first bank, K and V from the second.

    Identical math to the matching self-attention variant; used for the
    agent-to-map interaction.
    """
    if queries.q.shape[-1] != keysvals.k.shape[-1]:
        raise DimensionMismatchError(
            f"query width {queries.q.shape[-1]} mismatches key width "
            f"{keysvals.k.shape[-1]}"
        )
    if queries.n_heads != keysvals.n_heads:
        raise DimensionMismatchError(
            f"head counts differ: {queries.n_heads} vs {keysvals.n_heads}"
        )
    if variant is not Variant.PLAIN:
        if poses_q is None or poses_kv is None:
            raise ConfigurationError(f"variant {variant.value} requires poses")
        if poses_q.n_tokens != queries.n_tokens or poses_kv.n_tokens != keysvals.n_tokens:
            raise DimensionMismatchError("pose counts mismatch the token banks")
    if sched is None and variant in ROTARY_VARIANTS:
        sched = FrequencySchedule.default(queries.d_k)
    return _attend(
        variant, queries.q, keysvals.k, keysvals.v, poses_q, poses_kv,
        sched=sched, enc=enc, split=split, angle_freqs=angle_freqs,
        keep_alpha=keep_alpha, meter=meter,
    )


def _check_pose_count(qkv: QKVSet, poses: PoseSet | None) -> None:
    if poses is None:
        raise ConfigurationError("poses are required for this variant")
    if poses.n_tokens != qkv.n_tokens:
        raise DimensionMismatchError(
            f"{poses.n_tokens} poses for {qkv.n_tokens} tokens"
        )


#: Thresholds for the three-heading periodicity check below.
ROPE_GAP_MIN = 1e-3
DROPE_GAP_MAX = 1e-10


@dataclass(frozen=True)
class CounterexampleReport:
    d_k: int
    seed: int | None
    rope_lhs: float
    rope_rhs: float
    rope_gap: float
    drope_lhs: float
    drope_rhs: float
    drope_gap: float


def rope_periodicity_counterexample(
    d_k: int, seed: int = 0, q=None, k=None, *, check: bool = True,
) -> CounterexampleReport:
    """Show that multi-frequency rotations break mod-2*pi angle periodicity.

    Three headings pi/2, 0, 3*pi/2 give two token pairs with identical
    wrapped relative angles. Treating the headings as scalar positions, the
    multi-frequency embedding produces different QK dot products for the two
    pairs, while the uniform-frequency embedding does not. With ``check``
    enabled the gap thresholds are asserted and a violation raises.
    """
    if d_k < 2:
        raise ConfigurationError(
            "d_k must be at least 2: with a single pair the unit frequency "
            "makes the two dot products coincide"
        )
    if q is None or k is None:
        rng = np.random.default_rng(seed)
        q = rng.standard_normal(2 * d_k) if q is None else q
        k = rng.standard_normal(2 * d_k) if k is None else k
    q = _as_finite("q", q)
    k = _as_finite("k", k)
    thetas = (math.pi / 2.0, 0.0, 3.0 * math.pi / 2.0)
    sched = FrequencySchedule.default(d_k)

    rope_lhs = float(rope_embed(q, thetas[0], sched) @ rope_embed(k, thetas[1], sched))
    rope_rhs = float(rope_embed(q, thetas[1], sched) @ rope_embed(k, thetas[2], sched))
    drope_lhs = float(drope_dot(q, thetas[0], k, thetas[1]))
    drope_rhs = float(drope_dot(q, thetas[1], k, thetas[2]))
    report = CounterexampleReport(
        d_k=d_k,
        seed=seed,
        rope_lhs=rope_lhs,
        rope_rhs=rope_rhs,
        rope_gap=abs(rope_lhs - rope_rhs),
        drope_lhs=drope_lhs,
        drope_rhs=drope_rhs,
        drope_gap=abs(drope_lhs - drope_rhs),
    )
    if check:
        if report.rope_gap <= ROPE_GAP_MIN:
            raise VerificationError(
                f"multi-frequency gap {report.rope_gap:g} unexpectedly small"
            )
        if report.drope_gap >= DROPE_GAP_MAX:
            raise VerificationError(
                f"uniform-frequency gap {report.drope_gap:g} unexpectedly large"
            )
    return report


def drope_dot(q, theta_q, k, theta_k, freqs=None) -> float:
    """Dot product of two heading-embedded vectors."""
    return float(drope_embed(q, theta_q, freqs) @ drope_embed(k, theta_k, freqs))


def attention_backward(
    variant: Variant,
    qkv: QKVSet,
    poses: PoseSet | None,
    upstream: np.ndarray,
    *,
    sched=None,
    split=None,
    angle_freqs=None,
):
    """Analytic gradients of the merged output w.r.t. the Q, K, V banks.

    ``upstream`` is the gradient w.r.t. the merged (N, H*d_v) output. The
    rotary embeddings are linear, so their backward is the transposed (that
    is, negated) rotation. Returns (dq, dk, dv) with the bank shapes.
    """
    if variant is Variant.RPE:
        raise NotImplementedError("backward for the pairwise-encoder variant is not available")
    n, n_heads, width = qkv.q.shape
    d_k, d_v = qkv.d_k, qkv.d_v
    upstream = _as_finite("upstream gradient", upstream)
    if upstream.shape != (n, n_heads * d_v):
        raise DimensionMismatchError(
            f"upstream gradient must be (N, H*d_v) = {(n, n_heads * d_v)}, "
            f"got {upstream.shape}"
        )
    if sched is None and variant in ROTARY_VARIANTS:
        sched = FrequencySchedule.default(d_k)
    split = _validate_variant(variant, n_heads, d_k, sched, None, split)
    if variant is not Variant.PLAIN:
        _check_pose_count(qkv, poses)

    if variant is Variant.PLAIN:
        angles = None
        q_hat, k_hat = qkv.q, qkv.k
    else:
        angles = _bank_pair_angles(variant, poses, n_heads, d_k, sched, split, angle_freqs)
        q_hat = rotate_pairs(qkv.q, angles)
        k_hat = rotate_pairs(qkv.k, angles)

    scale = 1.0 / math.sqrt(d_k)
    scores = np.einsum("ihd,jhd->ihj", q_hat, k_hat) * scale
    alpha = _softmax_rows(scores)

    d_out = upstream.reshape(n, n_heads, d_v)
    dv = np.einsum("ihj,ihd->jhd", alpha, d_out)
    d_alpha = np.einsum("ihd,jhd->ihj", d_out, qkv.v)
    d_scores = alpha * (d_alpha - np.sum(d_alpha * alpha, axis=-1, keepdims=True))
    d_scores *= scale
    dq_hat = np.einsum("ihj,jhd->ihd", d_scores, k_hat)
    dk_hat = np.einsum("ihj,ihd->jhd", d_scores, q_hat)
    if angles is None:
        return dq_hat, dk_hat, dv
    return rotate_pairs(dq_hat, -angles), rotate_pairs(dk_hat, -angles), dv
