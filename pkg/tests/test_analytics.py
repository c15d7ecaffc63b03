import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from motok.analytics import (
    CATEGORIES,
    categorize,
    cosine_mode,
    pairwise_cosine,
    recon_metrics,
    usage_from_indices,
    usage_histogram,
)
from motok.errors import UsageError
from motok.motion import MotionSequence, compute_stats, gen_synthetic
from motok.tokenizer import Codebook, MotionTokenizer, TokenizerConfig


class TestUsage:
    def test_all_one_code(self):
        rep = usage_from_indices([np.zeros((9, 24), int)], 16)
        assert rep.categories == {"underutilized": 15 / 16, "active": 0.0, "frequent": 1 / 16}
        assert rep.never_used == 15 and rep.total_tokens == 216

    def test_uniform(self):
        rep = usage_from_indices([np.arange(64)], 64)
        assert rep.categories["frequent"] == 1.0
        # a 1/64 share of all assignments is 1.6%, inside the 1-15% band
        assert rep.categories_share["active"] == 1.0

    def test_thresholds(self):
        np.testing.assert_array_equal(categorize([0.0, 0.0099, 0.01, 0.15, 0.1501]), [0, 0, 1, 1, 2])

    def test_fractions_sum_to_one(self):
        rng = np.random.default_rng(0)
        rep = usage_from_indices([rng.integers(0, 100, 500)], 128)
        assert abs(sum(rep.categories.values()) - 1) < 1e-12
        assert abs(sum(rep.categories_share.values()) - 1) < 1e-12

    def test_csv_and_json(self):
        rep = usage_from_indices([np.array([0, 0, 1])], 4)
        lines = rep.per_code_csv().splitlines()
        assert lines[0] == "code,count,frequency,relative_to_uniform,category" and len(lines) == 5
        assert lines[1].split(",")[-1] in CATEGORIES
        summary = json.loads(rep.summary_json())
        assert summary["never_used"] == 2

    def test_errors(self):
        with pytest.raises(UsageError):
            usage_from_indices([], 4)
        with pytest.raises(UsageError):
            usage_from_indices([np.array([4])], 4)

    def test_from_model(self):
        seqs = gen_synthetic(3, 33, rng_seed=2)
        stats = compute_stats(seqs)
        cfg = TokenizerConfig.tiny()
        rep = usage_histogram(Codebook.init(cfg.codebook_size, cfg.code_dim), seqs, MotionTokenizer.init(cfg), stats)
        assert rep.total_tokens == 3 * 216 and rep.counts.sum() == 3 * 216


class TestCosine:
    def test_pair_count(self):
        codes = np.random.default_rng(0).normal(size=(50, 8))
        edges, counts, zero = pairwise_cosine(codes, bins=20, block=7)
        assert counts.sum() == 50 * 49 // 2 and zero == 0 and edges.size == 21

    def test_matches_direct(self):
        codes = np.random.default_rng(1).normal(size=(30, 4))
        u = codes / np.linalg.norm(codes, axis=1, keepdims=True)
        sims = (u @ u.T)[np.triu_indices(30, 1)]
        _, counts, _ = pairwise_cosine(codes, bins=10)
        np.testing.assert_array_equal(counts, np.histogram(sims, bins=np.linspace(-1, 1, 11))[0])

    def test_identical_and_opposite(self):
        _, counts, _ = pairwise_cosine(np.array([[1.0, 0], [2.0, 0], [-1.0, 0]]), bins=4)
        assert counts[0] == 2 and counts[-1] == 1

    def test_zero_rows_excluded(self):
        codes = np.array([[1.0, 0], [0.0, 0], [0.0, 1]])
        _, counts, zero = pairwise_cosine(codes, bins=4)
        assert zero == 1 and counts.sum() == 1

    def test_random_codes_mode_near_zero(self):
        codes = np.random.default_rng(2).normal(size=(200, 64))
        edges, counts, _ = pairwise_cosine(codes, bins=40)
        assert abs(cosine_mode(edges, counts)) < 0.2

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_row_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        codes = rng.normal(size=(int(rng.integers(2, 40)), 5))
        _, a, _ = pairwise_cosine(codes, bins=16, block=6)
        _, b, _ = pairwise_cosine(codes[rng.permutation(len(codes))], bins=16, block=6)
        np.testing.assert_array_equal(a, b)

    def test_too_small(self):
        with pytest.raises(UsageError):
            pairwise_cosine(np.ones((1, 3)))


class TestReconMetrics:
    def test_identity(self):
        seq = gen_synthetic(1, 33)[0]
        m = recon_metrics(seq, seq, compute_stats([seq]))
        assert m["mpjpe"] == 0.0 and m["l1"] == 0.0 and m["per_joint"].shape == (24,)

    def test_constant_offset(self):
        seq = gen_synthetic(1, 33)[0]
        stats = compute_stats([seq])
        m = recon_metrics(seq, seq.translated([0.03, 0.0, 0.04]), stats)
        assert abs(m["mpjpe"] - 0.05) < 1e-6
        want = np.mean([0.03 / stats.std[0], 0.0, 0.04 / stats.std[2]])
        assert abs(m["l1"] - want) < 1e-6

    def test_random_pair_loop_oracle(self):
        rng = np.random.default_rng(4)
        a = gen_synthetic(1, 33, rng_seed=1)[0]
        b = MotionSequence(a.coords + rng.normal(scale=0.05, size=a.coords.shape))
        stats = compute_stats([a])
        m = recon_metrics(a, b, stats)
        dist, l1, per_joint = 0.0, 0.0, np.zeros(24)
        for t in range(a.frames):
            for j in range(24):
                d = float(np.sqrt(sum((a.coords[t, j, k] - b.coords[t, j, k]) ** 2 for k in range(3))))
                dist += d
                per_joint[j] += d / a.frames
                l1 += sum(abs(a.coords[t, j, k] - b.coords[t, j, k]) / stats.std[k] for k in range(3))
        assert abs(m["mpjpe"] - dist / (a.frames * 24)) <= 1e-9
        assert abs(m["l1"] - l1 / (a.frames * 72)) <= 1e-9
        np.testing.assert_allclose(m["per_joint"], per_joint, atol=1e-9)

    @given(st.integers(0, 1000))
    @settings(max_examples=10, deadline=None)
    def test_self_is_zero(self, seed):
        seq = gen_synthetic(1, 33, rng_seed=seed)[0]
        m = recon_metrics(seq, seq, compute_stats([seq]))
        assert m["mpjpe"] == 0.0 and m["l1"] == 0.0

    def test_shape_mismatch(self):
        a, b = gen_synthetic(1, 33)[0], gen_synthetic(1, 49)[0]
        with pytest.raises(UsageError):
            recon_metrics(a, b, compute_stats([a]))
