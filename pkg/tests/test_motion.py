import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from motok.errors import FormatError, UsageError
from motok.motion import (
    DatasetStats,
    MotionSequence,
    augment,
    bone_lengths,
    compute_stats,
    decode_motion,
    encode_motion,
    from_differential,
    gen_synthetic,
    read_motion,
    read_stats,
    to_differential,
    write_motion,
    write_stats,
)
from motok.motion.synthetic import FAMILIES, VALID_FRAMES, family_of


def random_seq(rng, frames=17, scale=1.0):
    return MotionSequence(rng.normal(scale=scale, size=(frames, 24, 3)).astype(np.float32))


def two_pass_stats(corpus):
    allv = np.concatenate([s.coords.astype(np.float64).reshape(-1, 3) for s in corpus])
    mean = allv.mean(axis=0)
    std = np.sqrt(((allv - mean) ** 2).mean(axis=0))
    mj = np.concatenate([s.coords.astype(np.float64) for s in corpus]).mean(axis=0)
    return mean, std, mj


class TestSequence:
    def test_rejects_wrong_joint_count(self):
        with pytest.raises(UsageError):
            MotionSequence(np.zeros((4, 17, 3)))

    def test_rejects_single_frame_and_nan(self):
        with pytest.raises(UsageError):
            MotionSequence(np.zeros((1, 24, 3)))
        bad = np.zeros((3, 24, 3))
        bad[1, 2, 0] = np.nan
        with pytest.raises(UsageError):
            MotionSequence(bad)

    def test_frozen_coords(self):
        s = MotionSequence(np.zeros((3, 24, 3)))
        with pytest.raises(ValueError):
            s.coords[0, 0, 0] = 1.0

    def test_subsample(self):
        c = np.arange(10 * 24 * 3, dtype=np.float32).reshape(10, 24, 3)
        s = MotionSequence(c).subsample(1, 4, 2)
        np.testing.assert_array_equal(s.coords, c[1:8:2])
        with pytest.raises(UsageError):
            MotionSequence(c).subsample(5, 4, 2)


class TestStats:
    def test_constant_pose_hits_floor(self):
        rng = np.random.default_rng(0)
        pose = rng.normal(size=(24, 3)).astype(np.float32)
        seq = MotionSequence(np.broadcast_to(pose, (5, 24, 3)))
        stats = compute_stats([seq], mode="scalar")
        assert stats.std == pytest.approx(np.sqrt(((pose - pose.mean()) ** 2).mean()))
        # constant per joint and per axis: per-axis std is non-zero, so test
        # the floor on a pose that is the same value everywhere
        flat = MotionSequence(np.full((5, 24, 3), 0.25, np.float32))
        s2 = compute_stats([flat])
        np.testing.assert_array_equal(s2.std, [1e-6] * 3)
        np.testing.assert_allclose(s2.mean, [0.25] * 3)
        np.testing.assert_allclose(s2.mean_joints, np.full((24, 3), 0.25))

    def test_mean_of_zero_and_two(self):
        a = MotionSequence(np.zeros((3, 24, 3)))
        b = MotionSequence(np.full((3, 24, 3), 2.0))
        stats = compute_stats([a, b])
        np.testing.assert_allclose(stats.mean, [1.0, 1.0, 1.0])
        np.testing.assert_allclose(stats.std, [1.0, 1.0, 1.0])

    def test_two_pass_oracle(self):
        rng = np.random.default_rng(1)
        corpus = [random_seq(rng, f) for f in (5, 9, 13)]
        stats = compute_stats(corpus)
        mean, std, mj = two_pass_stats(corpus)
        np.testing.assert_allclose(stats.mean, mean, atol=1e-6)
        np.testing.assert_allclose(stats.std, std, atol=1e-6)
        np.testing.assert_allclose(stats.mean_joints, mj, atol=1e-6)

    def test_duplicated_corpus_same_stats(self):
        rng = np.random.default_rng(2)
        corpus = [random_seq(rng, 7) for _ in range(4)]
        a = compute_stats(corpus)
        b = compute_stats(corpus + corpus)
        np.testing.assert_allclose(a.mean, b.mean, atol=1e-6)
        np.testing.assert_allclose(a.std, b.std, atol=1e-6)
        np.testing.assert_allclose(a.mean_joints, b.mean_joints, atol=1e-6)

    def test_empty_corpus(self):
        with pytest.raises(UsageError):
            compute_stats([])

    def test_stats_file_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        stats = compute_stats([random_seq(rng)])
        write_stats(tmp_path / "s.json", stats)
        back = read_stats(tmp_path / "s.json")
        assert back.stats_id == stats.stats_id
        np.testing.assert_array_equal(back.mean_joints, stats.mean_joints)

    def test_tampered_stats_file(self, tmp_path):
        import json
        rng = np.random.default_rng(3)
        write_stats(tmp_path / "s.json", compute_stats([random_seq(rng)]))
        doc = json.loads((tmp_path / "s.json").read_text())
        doc["mean"][0] += 1.0
        (tmp_path / "s.json").write_text(json.dumps(doc))
        with pytest.raises(FormatError):
            read_stats(tmp_path / "s.json")


class TestDifferential:
    def setup_method(self):
        rng = np.random.default_rng(4)
        self.corpus = [random_seq(rng, 11) for _ in range(3)]
        self.stats = compute_stats(self.corpus)

    def test_first_frame_zero(self):
        d = to_differential(self.corpus[0], self.stats)
        assert np.all(d.values[0] == 0.0)

    def test_constant_sequence(self):
        pose = self.corpus[0].coords[3]
        d = to_differential(MotionSequence(np.broadcast_to(pose, (6, 24, 3))), self.stats)
        assert np.all(d.values == 0.0)

    def test_translation_invariance_exact(self):
        # dyadic coordinates and offset: the subtraction is exact in float32
        rng = np.random.default_rng(5)
        c = (rng.integers(-64, 64, size=(9, 24, 3)) / 8.0).astype(np.float32)
        seq = MotionSequence(c)
        moved = seq.translated([1.5, -0.25, 3.0])
        a = to_differential(seq, self.stats)
        b = to_differential(moved, self.stats)
        np.testing.assert_array_equal(a.values, b.values)

    def test_roundtrip(self):
        for seq in self.corpus:
            back = from_differential(to_differential(seq, self.stats), self.stats)
            assert np.abs(back.coords - seq.coords).max() <= 1e-5

    def test_single_frame_step(self):
        c = np.zeros((4, 24, 3), np.float32)
        c[2:] = 0.5
        seq = MotionSequence(c)
        d = to_differential(seq, self.stats)
        np.testing.assert_allclose(d.values[2], 0.5 / self.stats.std * np.ones((24, 3)), rtol=1e-6)
        back = from_differential(d, self.stats)
        assert np.abs(back.coords - c).max() <= 1e-5

    def test_stats_mismatch(self):
        d = to_differential(self.corpus[0], self.stats)
        other = compute_stats(self.corpus[:1])
        with pytest.raises(UsageError):
            from_differential(d, other)

    def test_absolute_mode(self):
        d = to_differential(self.corpus[0], self.stats, differential=False)
        np.testing.assert_allclose(d.values, self.stats.normalize(self.corpus[0].coords), atol=1e-6)
        assert np.all(d.first_frame == 0.0)
        back = from_differential(d, self.stats)
        assert np.abs(back.coords - self.corpus[0].coords).max() <= 1e-5

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.01, 20.0))
    def test_roundtrip_property(self, seed, scale):
        rng = np.random.default_rng(seed)
        seq = random_seq(rng, 6, scale=scale)
        stats = compute_stats([seq])
        back = from_differential(to_differential(seq, stats), stats)
        assert np.abs(back.coords - seq.coords).max() <= 1e-5 * max(1.0, scale)


class TestAugment:
    def setup_method(self):
        rng = np.random.default_rng(6)
        seq = random_seq(rng, 9)
        self.diff = to_differential(seq, compute_stats([seq]))

    def test_zero_ratio_identity(self):
        out = augment(self.diff, 123, 0.0)
        np.testing.assert_array_equal(out.values, self.diff.values)

    def test_deterministic(self):
        a = augment(self.diff, 7, 0.1)
        b = augment(self.diff, 7, 0.1)
        np.testing.assert_array_equal(a.values, b.values)
        assert not np.array_equal(a.values, augment(self.diff, 8, 0.1).values)

    def test_frame_zero_over_many_draws(self):
        for seed in range(1000):
            assert np.all(augment(self.diff, seed, 0.1).values[0] == 0.0)

    def test_scale_bounds(self):
        for seed in range(50):
            out = augment(self.diff, seed, 0.1)
            mask = np.abs(self.diff.values) > 1e-3
            ratio = out.values[mask] / self.diff.values[mask]
            assert 0.9 - 1e-5 <= ratio.min() and ratio.max() <= 1.1 + 1e-5
            assert np.ptp(ratio) < 1e-4  # one global scale

    def test_shift_in_absolute_mode(self):
        rng = np.random.default_rng(7)
        seq = random_seq(rng, 5)
        d = to_differential(seq, compute_stats([seq]), differential=False)
        out = augment(d, 3, 0.1)
        resid = out.values.astype(np.float64) - d.values
        assert np.abs(resid).max() > 0

    def test_bad_ratio(self):
        with pytest.raises(UsageError):
            augment(self.diff, 0, 1.5)


class TestSynthetic:
    @pytest.mark.parametrize("family", FAMILIES)
    def test_bone_lengths_constant(self, family):
        for seq in gen_synthetic(8, 129, family, rng_seed=11):
            bl = bone_lengths(seq.coords)
            assert np.ptp(bl, axis=0).max() <= 1e-6

    def test_seed_determinism(self):
        a = gen_synthetic(5, 33, "mixed", rng_seed=3)
        b = gen_synthetic(5, 33, "mixed", rng_seed=3)
        assert all(encode_motion(x) == encode_motion(y) for x, y in zip(a, b))
        c = gen_synthetic(5, 33, "mixed", rng_seed=4)
        assert encode_motion(a[0]) != encode_motion(c[0])

    def test_prefix_stable(self):
        a = gen_synthetic(3, 49, rng_seed=9)
        b = gen_synthetic(6, 49, rng_seed=9)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.coords, y.coords)

    def test_walk_monotone_along_heading(self):
        for seq in gen_synthetic(40, 129, "walk", rng_seed=5):
            root = seq.root_trajectory().astype(np.float64)
            heading = root[-1] - root[0]
            heading[1] = 0.0
            heading /= np.linalg.norm(heading)
            proj = (root - root[0]) @ heading
            assert np.all(np.diff(proj) > 0)

    def test_mixed_covers_families(self):
        fams = {family_of(0, i) for i in range(40)}
        assert fams == set(FAMILIES)

    def test_plausible_ranges(self):
        for seq in gen_synthetic(20, 97, "mixed", rng_seed=1):
            c = seq.coords
            assert c[:, :, 1].min() > -0.3 and c[:, :, 1].max() < 2.5
            step = np.linalg.norm(np.diff(c, axis=0), axis=-1)
            assert step.max() < 0.25  # no teleporting joints at 30 fps

    def test_errors(self):
        with pytest.raises(UsageError):
            gen_synthetic(1, 33, "swim")
        with pytest.raises(UsageError):
            gen_synthetic(1, 34)
        assert gen_synthetic(1, 34, allow_any_length=True)[0].frames == 34

    def test_valid_lengths(self):
        for f in VALID_FRAMES:
            assert gen_synthetic(1, f)[0].frames == f


class TestMseq:
    def test_roundtrip_bit_exact(self, tmp_path):
        seq = gen_synthetic(1, 33, rng_seed=2)[0]
        write_motion(tmp_path / "a.mseq", seq)
        back = read_motion(tmp_path / "a.mseq")
        assert back.coords.tobytes() == seq.coords.tobytes()
        assert back.fps == seq.fps
        assert (tmp_path / "a.mseq").read_bytes() == encode_motion(back)

    def test_layout(self):
        c = np.arange(2 * 24 * 3, dtype=np.float32).reshape(2, 24, 3)
        buf = encode_motion(MotionSequence(c, fps=25.0))
        assert buf[:4] == b"MSEQ"
        assert len(buf) == 16 + c.size * 4
        assert np.frombuffer(buf[16:], "<f4")[3] == c[0, 1, 0]

    def test_truncated(self):
        buf = encode_motion(gen_synthetic(1, 33)[0])
        with pytest.raises(FormatError) as ei:
            decode_motion(buf[:-5])
        assert ei.value.offset == len(buf) - 5
        assert "offset" in str(ei.value)
        with pytest.raises(FormatError) as ei:
            decode_motion(buf[:9])
        assert ei.value.offset == 9

    def test_bad_magic_and_joints(self):
        buf = bytearray(encode_motion(gen_synthetic(1, 33)[0]))
        bad = bytes(b"XSEQ" + buf[4:])
        with pytest.raises(FormatError) as ei:
            decode_motion(bad)
        assert ei.value.offset == 0
        import struct
        hdr = struct.pack("<4sHIHf", b"MSEQ", 1, 2, 17, 30.0)
        with pytest.raises(FormatError) as ei:
            decode_motion(hdr + bytes(2 * 17 * 12))
        assert ei.value.offset == 10

    def test_trailing_bytes(self):
        buf = encode_motion(gen_synthetic(1, 33)[0])
        with pytest.raises(FormatError):
            decode_motion(buf + b"\0")
