import math

import numpy as np
import pytest

from drope.attention import (
    AllocationMeter,
    IntraHeadSplit,
    PoseSet,
    QKVSet,
    RPEEncoders,
    Variant,
    mhca,
    mhsa,
    mhsa_causal,
    mhsa_drope_hbh,
    mhsa_drope_ih,
    mhsa_plain,
    mhsa_rope,
    mhsa_rpe,
    rope_periodicity_counterexample,
)
from drope.errors import (
    ConfigurationError,
    DimensionMismatchError,
    InvalidArgumentError,
    VerificationError,
)
from drope.rotary import TWO_PI, FrequencySchedule, rope_embed

from oracles import ref_attention, ref_default_freqs, ref_embed

VARIANT_NAMES = {
    Variant.PLAIN: "plain",
    Variant.RPE: "rpe",
    Variant.ROPE: "rope",
    Variant.DROPE_HBH: "drope-hbh",
    Variant.DROPE_IH: "drope-ih",
}


def make_case(seed, n=3, h=2, d_k=2, d_v=3):
    rng = np.random.default_rng(seed)
    return QKVSet.random(n, h, d_k, d_v, rng), PoseSet.random(n, rng)


def run_variant(variant, qkv, poses, enc=None, split=None, **kw):
    return mhsa(qkv, poses, variant, enc=enc, split=split, **kw)


def run_reference(variant, qkv, poses_q, poses_kv=None, enc=None, split=None, k=None, v=None):
    poses_kv = poses_q if poses_kv is None else poses_kv
    split_pair = (split.d_pos, split.d_angle) if split is not None else None
    _, merged = ref_attention(
        VARIANT_NAMES[variant],
        qkv.q,
        qkv.k if k is None else k,
        qkv.v if v is None else v,
        poses_q.positions if poses_q is not None else None,
        poses_q.headings if poses_q is not None else None,
        poses_kv.positions if poses_kv is not None else None,
        poses_kv.headings if poses_kv is not None else None,
        enc=enc,
        split=split_pair,
    )
    return merged


class TestPlain:
    def test_uniform_scores_average_values(self):
        # two tokens with identical keys and queries: alpha is 0.5 everywhere
        q = np.ones((2, 1, 4))
        k = np.ones((2, 1, 4))
        v = np.stack([np.full((1, 3), 2.0), np.full((1, 3), 4.0)])
        out = mhsa_plain(QKVSet(q, k, v), keep_alpha=True)
        assert out.alpha == pytest.approx(0.5)
        assert out.merged == pytest.approx(3.0)

    def test_single_token_passes_value_through(self):
        rng = np.random.default_rng(0)
        qkv = QKVSet.random(1, 2, 2, 3, rng)
        out = mhsa_plain(qkv, keep_alpha=True)
        assert out.alpha == pytest.approx(1.0)
        assert np.array_equal(out.per_head, qkv.v)

    def test_matches_scalar_reference(self):
        qkv, poses = make_case(1)
        out = mhsa_plain(qkv)
        assert out.merged == pytest.approx(
            run_reference(Variant.PLAIN, qkv, None), abs=1e-12
        )

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidArgumentError):
            QKVSet(np.full((2, 1, 4), np.nan), np.zeros((2, 1, 4)), np.zeros((2, 1, 2)))


class TestRPE:
    def test_zero_encoders_degenerate_to_plain_bitwise(self):
        qkv, poses = make_case(2)
        enc = RPEEncoders.zeros(qkv.d_k, qkv.d_v)
        with_enc = mhsa_rpe(qkv, poses, enc)
        plain = mhsa_plain(qkv)
        assert np.array_equal(with_enc.merged, plain.merged)

    def test_identical_poses_shift_keys_and_values_by_constant(self):
        rng = np.random.default_rng(3)
        qkv = QKVSet.random(4, 2, 2, 3, rng)
        pose = PoseSet(np.tile([1.5, -2.0], (4, 1)), np.full(4, 0.7))
        enc = RPEEncoders.seeded(qkv.d_k, qkv.d_v, seed=5)
        out = mhsa_rpe(qkv, pose, enc)
        zero_rel = np.zeros(3)
        shifted = QKVSet(
            qkv.q, qkv.k + enc.encode_key(zero_rel), qkv.v + enc.encode_value(zero_rel)
        )
        assert out.merged == pytest.approx(mhsa_plain(shifted).merged, abs=1e-12)

    def test_matches_scalar_reference(self):
        qkv, poses = make_case(4)
        enc = RPEEncoders.seeded(qkv.d_k, qkv.d_v, seed=6)
        out = mhsa_rpe(qkv, poses, enc)
        assert out.merged == pytest.approx(
            run_reference(Variant.RPE, qkv, poses, enc=enc), abs=1e-12
        )

    def test_materializes_pairwise_tensors(self):
        qkv, poses = make_case(5, n=4)
        meter = AllocationMeter()
        mhsa_rpe(qkv, poses, RPEEncoders.seeded(qkv.d_k, qkv.d_v), meter=meter)
        n, h, w, d_v = 4, qkv.n_heads, 2 * qkv.d_k, qkv.d_v
        assert meter.counts["pairwise"] == n * n * h * (w + d_v)


class TestRope:
    def test_equal_positions_match_plain(self):
        rng = np.random.default_rng(7)
        qkv = QKVSet.random(3, 2, 2, 3, rng)
        poses = PoseSet(np.tile([4.0, -1.0], (3, 1)), rng.uniform(0, TWO_PI, 3))
        out = mhsa_rope(qkv, poses, FrequencySchedule.default(qkv.d_k))
        assert out.merged == pytest.approx(mhsa_plain(qkv).merged, abs=1e-12)

    def test_translation_invariance(self):
        qkv, poses = make_case(8)
        sched = FrequencySchedule.default(qkv.d_k)
        base = mhsa_rope(qkv, poses, sched)
        moved = mhsa_rope(qkv, poses.translated(5.3, -2.1), sched)
        scale = np.max(np.abs(base.merged))
        assert np.max(np.abs(base.merged - moved.merged)) / scale < 1e-8

    def test_matches_scalar_reference(self):
        qkv, poses = make_case(9)
        out = mhsa_rope(qkv, poses, FrequencySchedule.default(qkv.d_k))
        assert out.merged == pytest.approx(
            run_reference(Variant.ROPE, qkv, poses), abs=1e-12
        )

    def test_headings_are_ignored_entirely(self):
        # the position-only variant never reads headings; that blind spot is
        # exactly what the directional variants add
        qkv, poses = make_case(28)
        sched = FrequencySchedule.default(qkv.d_k)
        base = mhsa_rope(qkv, poses, sched)
        rehearsed = mhsa_rope(
            qkv, PoseSet(poses.positions, poses.headings + 1.7), sched
        )
        assert np.array_equal(base.merged, rehearsed.merged)


class TestDropeHeadByHead:
    def test_identical_poses_match_plain(self):
        rng = np.random.default_rng(10)
        qkv = QKVSet.random(3, 2, 2, 3, rng)
        poses = PoseSet(np.tile([1.0, 2.0], (3, 1)), np.full(3, 1.1))
        out = mhsa_drope_hbh(qkv, poses, FrequencySchedule.default(qkv.d_k))
        assert out.merged == pytest.approx(mhsa_plain(qkv).merged, abs=1e-12)

    @pytest.mark.parametrize("shift", [0.9, TWO_PI, 5.5])
    def test_heading_shift_invariance(self, shift):
        qkv, poses = make_case(11)
        sched = FrequencySchedule.default(qkv.d_k)
        base = mhsa_drope_hbh(qkv, poses, sched)
        moved = mhsa_drope_hbh(qkv, poses.heading_shifted(shift), sched)
        scale = np.max(np.abs(base.merged))
        assert np.max(np.abs(base.merged - moved.merged)) / scale < 1e-8

    def test_requires_two_heads(self):
        rng = np.random.default_rng(12)
        qkv = QKVSet.random(3, 1, 2, 3, rng)
        with pytest.raises(ConfigurationError):
            mhsa_drope_hbh(qkv, PoseSet.random(3, rng), FrequencySchedule.default(2))

    def test_matches_scalar_reference(self):
        qkv, poses = make_case(13)
        out = mhsa_drope_hbh(qkv, poses, FrequencySchedule.default(qkv.d_k))
        assert out.merged == pytest.approx(
            run_reference(Variant.DROPE_HBH, qkv, poses), abs=1e-12
        )


class TestDropeIntraHead:
    def test_degenerate_angle_split_equals_position_variant(self):
        qkv, poses = make_case(14)
        sched = FrequencySchedule.default(qkv.d_k)
        out = mhsa_drope_ih(qkv, poses, sched, IntraHeadSplit(2 * qkv.d_k, 0))
        assert out.merged == pytest.approx(mhsa_rope(qkv, poses, sched).merged, abs=1e-12)

    def test_identical_poses_match_plain(self):
        rng = np.random.default_rng(15)
        qkv = QKVSet.random(4, 2, 2, 3, rng)
        poses = PoseSet(np.tile([-3.0, 0.5], (4, 1)), np.full(4, 2.2))
        out = mhsa_drope_ih(qkv, poses, FrequencySchedule.default(qkv.d_k))
        assert out.merged == pytest.approx(mhsa_plain(qkv).merged, abs=1e-12)

    def test_invalid_splits_rejected(self):
        with pytest.raises(ConfigurationError):
            IntraHeadSplit(3, 1)
        with pytest.raises(ConfigurationError):
            IntraHeadSplit.balanced(3)
        qkv, poses = make_case(16)
        with pytest.raises(ConfigurationError):
            mhsa_drope_ih(
                qkv, poses, FrequencySchedule.default(qkv.d_k), IntraHeadSplit(2, 4)
            )

    def test_matches_scalar_reference(self):
        qkv, poses = make_case(17, d_k=4)
        split = IntraHeadSplit.balanced(qkv.d_k)
        out = mhsa_drope_ih(qkv, poses, FrequencySchedule.default(qkv.d_k), split)
        assert out.merged == pytest.approx(
            run_reference(Variant.DROPE_IH, qkv, poses, split=split), abs=1e-12
        )

    def test_asymmetric_split_matches_reference(self):
        qkv, poses = make_case(18, d_k=3)
        split = IntraHeadSplit(4, 2)
        out = mhsa_drope_ih(qkv, poses, FrequencySchedule.default(qkv.d_k), split)
        assert out.merged == pytest.approx(
            run_reference(Variant.DROPE_IH, qkv, poses, split=split), abs=1e-12
        )

    def test_heading_shift_invariance_with_wrap(self):
        qkv, poses = make_case(19, d_k=4)
        sched = FrequencySchedule.default(qkv.d_k)
        base = mhsa_drope_ih(qkv, poses, sched)
        shift = TWO_PI - float(np.max(poses.headings)) + 0.05
        moved = mhsa_drope_ih(qkv, poses.heading_shifted(shift), sched)
        scale = np.max(np.abs(base.merged))
        assert np.max(np.abs(base.merged - moved.merged)) / scale < 1e-8

    def test_degenerate_position_split_ignores_positions(self):
        qkv, poses = make_case(29)
        sched = FrequencySchedule.default(qkv.d_k)
        split = IntraHeadSplit(0, 2 * qkv.d_k)
        base = mhsa_drope_ih(qkv, poses, sched, split)
        moved = mhsa_drope_ih(
            qkv, PoseSet(poses.positions + 500.0, poses.headings), sched, split
        )
        assert np.array_equal(base.merged, moved.merged)


class TestCross:
    def test_self_degeneracy(self):
        qkv, poses = make_case(20)
        for variant in Variant:
            enc = (
                RPEEncoders.seeded(qkv.d_k, qkv.d_v, seed=1)
                if variant is Variant.RPE
                else None
            )
            crossed = mhca(qkv, qkv, poses, poses, variant, enc=enc)
            selfed = mhsa(qkv, poses, variant, enc=enc)
            assert np.array_equal(crossed.merged, selfed.merged), variant

    def test_single_kv_token_returns_its_value(self):
        rng = np.random.default_rng(21)
        queries = QKVSet.random(4, 2, 2, 3, rng)
        keysvals = QKVSet.random(1, 2, 2, 3, rng)
        out = mhca(queries, keysvals, None, None, Variant.PLAIN)
        for i in range(4):
            assert out.per_head[i] == pytest.approx(keysvals.v[0], abs=1e-15)

    def test_matches_scalar_reference_3x4(self):
        rng = np.random.default_rng(22)
        queries = QKVSet.random(3, 2, 2, 3, rng)
        keysvals = QKVSet.random(4, 2, 2, 3, rng)
        poses_q = PoseSet.random(3, rng)
        poses_kv = PoseSet.random(4, rng)
        out = mhca(queries, keysvals, poses_q, poses_kv, Variant.DROPE_HBH)
        _, merged = ref_attention(
            "drope-hbh", queries.q, keysvals.k, keysvals.v,
            poses_q.positions, poses_q.headings,
            poses_kv.positions, poses_kv.headings,
        )
        assert out.merged == pytest.approx(merged, abs=1e-12)

    def test_width_mismatch_rejected(self):
        rng = np.random.default_rng(23)
        queries = QKVSet.random(3, 2, 2, 3, rng)
        keysvals = QKVSet.random(4, 2, 3, 3, rng)
        with pytest.raises(DimensionMismatchError):
            mhca(queries, keysvals, None, None, Variant.PLAIN)


class TestStructuralProperties:
    @pytest.mark.parametrize("variant", list(Variant))
    def test_permutation_equivariance(self, variant):
        rng = np.random.default_rng(24)
        qkv = QKVSet.random(5, 2, 2, 3, rng)
        poses = PoseSet.random(5, rng)
        enc = (
            RPEEncoders.seeded(qkv.d_k, qkv.d_v, seed=2)
            if variant is Variant.RPE
            else None
        )
        base = mhsa(qkv, poses, variant, enc=enc)
        perm = rng.permutation(5)
        permuted = mhsa(
            QKVSet(qkv.q[perm], qkv.k[perm], qkv.v[perm]),
            poses.permuted(perm),
            variant,
            enc=enc,
        )
        assert np.max(np.abs(permuted.merged - base.merged[perm])) < 1e-10

    @pytest.mark.parametrize("variant", list(Variant))
    def test_alpha_rows_sum_to_one(self, variant):
        rng = np.random.default_rng(25)
        qkv = QKVSet.random(4, 2, 2, 3, rng)
        poses = PoseSet.random(4, rng)
        enc = (
            RPEEncoders.seeded(qkv.d_k, qkv.d_v, seed=3)
            if variant is Variant.RPE
            else None
        )
        out = mhsa(qkv, poses, variant, enc=enc, keep_alpha=True)
        assert np.max(np.abs(out.alpha.sum(axis=-1) - 1.0)) < 1e-9
        assert np.all(out.alpha >= 0.0) and np.all(out.alpha <= 1.0)

    def test_alpha_not_retained_by_default(self):
        qkv, poses = make_case(26)
        assert mhsa_plain(qkv).alpha is None

    def test_causal_mask_blocks_future(self):
        rng = np.random.default_rng(27)
        qkv = QKVSet.random(4, 1, 2, 2, rng)
        out = mhsa_causal(qkv, keep_alpha=True)
        upper = np.triu(np.ones((4, 4), dtype=bool), k=1)
        assert np.all(out.alpha[:, 0][upper] == 0.0)


class TestCounterexample:
    def test_all_ones_case(self):
        # fixed vectors make the gap a closed-form quantity
        report = rope_periodicity_counterexample(2, q=np.ones(4), k=np.ones(4))
        freq = 0.01
        expected_gap = abs(
            2 * math.cos(math.pi / 2 * freq) - 2 * math.cos(3 * math.pi / 2 * freq)
        )
        assert report.rope_gap == pytest.approx(expected_gap, rel=1e-12)
        assert report.rope_gap > 1e-3
        assert report.drope_gap < 1e-10

    def test_many_seeds_at_d_k_eight(self):
        for seed in range(50):
            report = rope_periodicity_counterexample(8, seed=seed)
            assert report.rope_gap > 1e-3
            assert report.drope_gap < 1e-10

    def test_single_pair_rejected(self):
        with pytest.raises(ConfigurationError):
            rope_periodicity_counterexample(1)

    def test_single_pair_degenerates_without_the_guard(self):
        # documented degenerate case: one pair at unit frequency has no gap
        rng = np.random.default_rng(0)
        q, k = rng.standard_normal(2), rng.standard_normal(2)
        sched = FrequencySchedule.default(1)
        lhs = rope_embed(q, math.pi / 2, sched) @ rope_embed(k, 0.0, sched)
        rhs = rope_embed(q, 0.0, sched) @ rope_embed(k, 3 * math.pi / 2, sched)
        assert abs(lhs - rhs) < 1e-10

    def test_report_matches_direct_embedding(self):
        rng = np.random.default_rng(31)
        q, k = rng.standard_normal(8), rng.standard_normal(8)
        report = rope_periodicity_counterexample(4, q=q, k=k)
        freqs = ref_default_freqs(4)
        lhs = np.dot(
            ref_embed(q, [math.pi / 2 * f for f in freqs]),
            ref_embed(k, [0.0 * f for f in freqs]),
        )
        assert report.rope_lhs == pytest.approx(lhs, abs=1e-12)


class TestExhaustiveOracleGrid:
    """Every variant against the scalar reference on a small seeded grid."""

    @pytest.mark.parametrize("variant", list(Variant))
    def test_grid(self, variant):
        seed = 0
        for n in (1, 2, 4):
            for h in (1, 2):
                if variant is Variant.DROPE_HBH and h < 2:
                    continue
                for d_k in (1, 2, 4):
                    if variant is Variant.DROPE_IH and d_k % 2 != 0:
                        continue
                    seed += 1
                    rng = np.random.default_rng(seed)
                    qkv = QKVSet.random(n, h, d_k, 3, rng)
                    poses = PoseSet.random(n, rng)
                    enc = (
                        RPEEncoders.seeded(d_k, 3, seed=seed)
                        if variant is Variant.RPE
                        else None
                    )
                    split = (
                        IntraHeadSplit.balanced(d_k)
                        if variant is Variant.DROPE_IH
                        else None
                    )
                    out = mhsa(qkv, poses, variant, enc=enc, split=split)
                    expected = run_reference(variant, qkv, poses, enc=enc, split=split)
                    assert out.merged == pytest.approx(expected, abs=1e-12), (
                        variant, n, h, d_k,
                    )
