"""Numerical property suite behind the verify command.

Each check is pure and seeded; the suite returns one result per property
with the worst observed error and its tolerance. The optional fault
injection routes the multi-frequency schedule into the heading embedding,
which breaks exactly the angle-periodicity properties and serves as the
negative control for the whole apparatus.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .attention import (
    IntraHeadSplit,
    PoseSet,
    QKVSet,
    Variant,
    mhsa,
    rope_periodicity_counterexample,
)
from .errors import ConfigurationError
from .rotary import (
    TWO_PI,
    FrequencySchedule,
    drope_embed,
    rope_embed,
    rotate2d,
    wrap_angle,
)

__all__ = [
    "FAULT_ROPE_FREQS_IN_FANGLE",
    "PROPERTY_NAMES",
    "PropertyResult",
    "VerificationConfig",
    "run_verification",
]

FAULT_ROPE_FREQS_IN_FANGLE = "rope-freqs-in-fangle"

PROPERTY_NAMES = (
    "rotation_group_law",
    "rotation_transpose_inverse",
    "embedding_norm_preservation",
    "position_shift_identity",
    "angle_shift_identity",
    "angle_periodicity_counterexample",
    "engine_translation_invariance",
    "engine_heading_shift_invariance",
    "attention_rows_stochastic",
    "permutation_equivariance",
)


@dataclass
class PropertyResult:
    name: str
    trials: int
    max_error: float
    tolerance: float
    passed: bool
    detail: str = ""

    def __post_init__(self):
        self.trials = int(self.trials)
        self.max_error = float(self.max_error)
        self.tolerance = float(self.tolerance)
        self.passed = bool(self.passed)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class VerificationConfig:
    seed: int = 0
    trials: int = 1000
    d_k_values: tuple = (1, 2, 8, 32)
    counterexample_seeds: int = 100
    fault_injection: str | None = None
    max_workers: int = 1

    def angle_freqs(self, sched: FrequencySchedule):
        if self.fault_injection is None:
            return None
        if self.fault_injection == FAULT_ROPE_FREQS_IN_FANGLE:
            return sched.freqs
        raise ConfigurationError(f"unknown fault injection {self.fault_injection!r}")


def _rel_errors(d1: np.ndarray, d2: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(d1), np.abs(d2)), 1e-30)
    return np.abs(d1 - d2) / scale

def _rel_err_arrays(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 1e-30)
    return float(np.max(np.abs(a - b)) / scale)


def _drope_batch(x, thetas, freqs):
    """Vectorized heading embedding for (trials, 2*p) stacks."""
    p = x.shape[-1] // 2
    if freqs is None:
        angles = np.repeat(thetas[:, None], p, axis=1)
    else:
        angles = thetas[:, None] * np.asarray(freqs)[None, :p]
    from .rotary import rotate_pairs

    return rotate_pairs(x, angles)


def _check_rotation_group_law(cfg: VerificationConfig) -> PropertyResult:
    rng = np.random.default_rng(cfg.seed + 1)
    tol = 1e-12
    a = rng.uniform(-100.0, 100.0, cfg.trials)
    b = rng.uniform(-100.0, 100.0, cfg.trials)
    worst = 0.0
    for ai, bi in zip(a, b):
        gap = np.max(np.abs(rotate2d(ai) @ rotate2d(bi) - rotate2d(ai + bi)))
        worst = max(worst, float(gap))
    return PropertyResult(
        "rotation_group_law", cfg.trials, worst, tol, worst < tol,
        "R(a) @ R(b) == R(a+b) for |a|,|b| <= 100",
    )


def _check_transpose_inverse(cfg: VerificationConfig) -> PropertyResult:
    rng = np.random.default_rng(cfg.seed + 2)
    tol = 1e-12
    worst = 0.0
    for theta in rng.uniform(-100.0, 100.0, cfg.trials):
        gap = np.max(np.abs(rotate2d(theta).T - rotate2d(-theta)))
        worst = max(worst, float(gap))
    return PropertyResult(
        "rotation_transpose_inverse", cfg.trials, worst, tol, worst < tol,
        "R(a).T == R(-a)",
    )


def _check_norm_preservation(cfg: VerificationConfig) -> PropertyResult:
    rng = np.random.default_rng(cfg.seed + 3)
    tol = 1e-10
    worst = 0.0
    trials = 0
    for d_k in cfg.d_k_values:
        sched = FrequencySchedule.default(d_k)
        n = max(1, cfg.trials // len(cfg.d_k_values))
        x = rng.standard_normal((n, 2 * d_k))
        positions = rng.uniform(-100.0, 100.0, n)
        thetas = rng.uniform(0.0, TWO_PI, n)
        for i in range(n):
            base = np.linalg.norm(x[i])
            roped = np.linalg.norm(rope_embed(x[i], positions[i], sched))
            droped = np.linalg.norm(drope_embed(x[i], thetas[i]))
            worst = max(worst, abs(roped - base) / base, abs(droped - base) / base)
        trials += n
    return PropertyResult(
        "embedding_norm_preservation", trials, worst, tol, worst < tol,
        "both embeddings preserve vector norms (relative)",
    )


def _check_position_shift_identity(cfg: VerificationConfig) -> PropertyResult:
    rng = np.random.default_rng(cfg.seed + 4)
    tol = 1e-8
    worst = 0.0
    trials = 0
    for d_k in cfg.d_k_values:
        sched = FrequencySchedule.default(d_k)
        n = max(1, cfg.trials // len(cfg.d_k_values))
        q = rng.standard_normal((n, 2 * d_k))
        k = rng.standard_normal((n, 2 * d_k))
        m_i = rng.uniform(-1000.0, 1000.0, n)
        m_j = rng.uniform(-1000.0, 1000.0, n)
        offset = rng.uniform(-500.0, 500.0, n)
        d1 = np.empty(n)
        d2 = np.empty(n)
        for t in range(n):
            d1[t] = rope_embed(q[t], m_i[t], sched) @ rope_embed(k[t], m_j[t], sched)
            d2[t] = (
                rope_embed(q[t], m_i[t] + offset[t], sched)
                @ rope_embed(k[t], m_j[t] + offset[t], sched)
            )
        worst = max(worst, float(np.max(_rel_errors(d1, d2))))
        trials += n
    return PropertyResult(
        "position_shift_identity", trials, worst, tol, worst < tol,
        "QK dot products depend only on the relative scalar position",
    )


def _check_angle_shift_identity(cfg: VerificationConfig) -> PropertyResult:
    rng = np.random.default_rng(cfg.seed + 5)
    tol = 1e-8
    worst = 0.0
    trials = 0
    for d_k in cfg.d_k_values:
        sched = FrequencySchedule.default(d_k)
        freqs = cfg.angle_freqs(sched)
        n = max(4, cfg.trials // len(cfg.d_k_values))
        q = rng.standard_normal((n, 2 * d_k))
        k = rng.standard_normal((n, 2 * d_k))
        theta_i = rng.uniform(0.0, TWO_PI, n)
        theta_j = rng.uniform(0.0, TWO_PI, n)
        delta = rng.uniform(0.0, TWO_PI, n)
        # force wrap-around pairs: every 4th trial pushes exactly one of the
        # two headings across 2*pi
        theta_i[::4] = 0.2
        theta_j[::4] = 5.9
        delta[::4] = 1.0
        d1 = np.einsum(
            "td,td->t", _drope_batch(q, theta_i, freqs), _drope_batch(k, theta_j, freqs)
        )
        d2 = np.einsum(
            "td,td->t",
            _drope_batch(q, wrap_angle(theta_i + delta), freqs),
            _drope_batch(k, wrap_angle(theta_j + delta), freqs),
        )
        worst = max(worst, float(np.max(_rel_errors(d1, d2))))
        trials += n
    return PropertyResult(
        "angle_shift_identity", trials, worst, tol, worst < tol,
        "heading-embedded dot products depend only on the wrapped relative angle",
    )


def _check_counterexample(cfg: VerificationConfig) -> PropertyResult:
    from .attention import DROPE_GAP_MAX, ROPE_GAP_MIN, drope_dot

    d_k = 8
    sched = FrequencySchedule.default(d_k)
    freqs = cfg.angle_freqs(sched)
    thetas = (math.pi / 2.0, 0.0, 3.0 * math.pi / 2.0)
    min_rope_gap = math.inf
    max_drope_gap = 0.0
    for seed in range(cfg.counterexample_seeds):
        rng = np.random.default_rng(cfg.seed + 1000 + seed)
        q = rng.standard_normal(2 * d_k)
        k = rng.standard_normal(2 * d_k)
        report = rope_periodicity_counterexample(d_k, q=q, k=k, check=False)
        min_rope_gap = min(min_rope_gap, report.rope_gap)
        lhs = drope_dot(q, thetas[0], k, thetas[1], freqs)
        rhs = drope_dot(q, thetas[1], k, thetas[2], freqs)
        max_drope_gap = max(max_drope_gap, abs(lhs - rhs))
    passed = min_rope_gap > ROPE_GAP_MIN and max_drope_gap < DROPE_GAP_MAX
    return PropertyResult(
        "angle_periodicity_counterexample",
        cfg.counterexample_seeds,
        max_drope_gap,
        DROPE_GAP_MAX,
        passed,
        f"min multi-frequency gap {min_rope_gap:.3e} (must exceed {ROPE_GAP_MIN:g}); "
        f"max uniform-frequency gap {max_drope_gap:.3e}",
    )


@dataclass
class _EngineCase:
    qkv: QKVSet
    poses: PoseSet
    sched: FrequencySchedule
    split: IntraHeadSplit


def _engine_cases(cfg: VerificationConfig, salt: int):
    rng = np.random.default_rng(cfg.seed + salt)
    n_cases = max(3, min(cfg.trials // 100, 20))
    d_k = 4
    for _ in range(n_cases):
        yield rng, _EngineCase(
            qkv=QKVSet.random(6, 2, d_k, 4, rng),
            poses=PoseSet.random(6, rng),
            sched=FrequencySchedule.default(d_k),
            split=IntraHeadSplit.balanced(d_k),
        )


def _run_engine(case: _EngineCase, variant, poses, cfg: VerificationConfig):
    return mhsa(
        case.qkv, poses, variant,
        sched=case.sched, split=case.split,
        angle_freqs=cfg.angle_freqs(case.sched),
        keep_alpha=True,
    )


def _check_translation_invariance(cfg: VerificationConfig) -> PropertyResult:
    tol = 1e-8
    worst = 0.0
    trials = 0
    for variant in (Variant.ROPE, Variant.DROPE_HBH, Variant.DROPE_IH):
        for rng, case in _engine_cases(cfg, 6):
            base = _run_engine(case, variant, case.poses, cfg)
            shifted = case.poses.translated(*rng.uniform(-100.0, 100.0, 2))
            moved = _run_engine(case, variant, shifted, cfg)
            worst = max(worst, _rel_err_arrays(base.merged, moved.merged))
            trials += 1
    return PropertyResult(
        "engine_translation_invariance", trials, worst, tol, worst < tol,
        "rotary-variant outputs are unchanged by common translations",
    )


def _check_heading_shift_invariance(cfg: VerificationConfig) -> PropertyResult:
    tol = 1e-8
    worst = 0.0
    trials = 0
    for variant in (Variant.DROPE_HBH, Variant.DROPE_IH):
        for rng, case in _engine_cases(cfg, 7):
            base = _run_engine(case, variant, case.poses, cfg)
            wrap_shift = TWO_PI - float(np.max(case.poses.headings)) + 0.1
            for shift in (float(rng.uniform(0.0, TWO_PI)), TWO_PI, wrap_shift):
                moved = _run_engine(case, variant, case.poses.heading_shifted(shift), cfg)
                worst = max(worst, _rel_err_arrays(base.merged, moved.merged))
                trials += 1
    return PropertyResult(
        "engine_heading_shift_invariance", trials, worst, tol, worst < tol,
        "directional-variant outputs are unchanged by common heading shifts, "
        "including shifts that wrap individual headings across 0",
    )


def _check_rows_stochastic(cfg: VerificationConfig) -> PropertyResult:
    tol = 1e-9
    worst = 0.0
    trials = 0
    for variant in Variant:
        if variant is Variant.RPE:
            continue
        for _rng, case in _engine_cases(cfg, 8):
            out = _run_engine(case, variant, case.poses, cfg)
            sums = out.alpha.sum(axis=-1)
            worst = max(worst, float(np.max(np.abs(sums - 1.0))))
            in_range = float(
                max(np.max(-out.alpha, initial=0.0), np.max(out.alpha - 1.0, initial=0.0))
            )
            worst = max(worst, in_range)
            trials += 1
    return PropertyResult(
        "attention_rows_stochastic", trials, worst, tol, worst < tol,
        "retained attention rows sum to 1 with entries in [0, 1]",
    )


def _check_permutation_equivariance(cfg: VerificationConfig) -> PropertyResult:
    tol = 1e-10
    worst = 0.0
    trials = 0
    for variant in (Variant.PLAIN, Variant.ROPE, Variant.DROPE_HBH, Variant.DROPE_IH):
        for rng, case in _engine_cases(cfg, 9):
            base = _run_engine(case, variant, case.poses, cfg)
            perm = rng.permutation(case.qkv.n_tokens)
            permuted_qkv = QKVSet(case.qkv.q[perm], case.qkv.k[perm], case.qkv.v[perm])
            permuted_case = _EngineCase(permuted_qkv, case.poses.permuted(perm),
                                        case.sched, case.split)
            permuted = _run_engine(permuted_case, variant, permuted_case.poses, cfg)
            worst = max(worst, float(np.max(np.abs(permuted.merged - base.merged[perm]))))
            trials += 1
    return PropertyResult(
        "permutation_equivariance", trials, worst, tol, worst < tol,
        "permuting tokens and poses permutes the output rows",
    )


_CHECKS = (
    _check_rotation_group_law,
    _check_transpose_inverse,
    _check_norm_preservation,
    _check_position_shift_identity,
    _check_angle_shift_identity,
    _check_counterexample,
    _check_translation_invariance,
    _check_heading_shift_invariance,
    _check_rows_stochastic,
    _check_permutation_equivariance,
)


def run_verification(cfg: VerificationConfig) -> list[PropertyResult]:
    """Run every property check; deterministic for a fixed configuration."""
    if cfg.trials < 1:
        raise ConfigurationError(f"trials must be positive, got {cfg.trials}")
    cfg.angle_freqs(FrequencySchedule.default(2))  # validate the fault name early
    if cfg.max_workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.max_workers) as pool:
            return list(pool.map(lambda check: check(cfg), _CHECKS))
    return [check(cfg) for check in _CHECKS]
