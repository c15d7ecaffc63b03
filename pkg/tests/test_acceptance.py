"""Acceptance suite: one PASS/FAIL line per criterion.

The desk-scale training criteria train the desk preset for 10k steps twice
(quantized and no-quantize ablation, about 45 min each on one CPU) plus ten
500-step paired runs for the codebook health comparison (about 25 min).
Reconstruction is scored through the sliding-window encoder, the path the
command line tools use; direct whole-clip encoding is reported next to it.
"""
import time

import numpy as np
import pytest

from motok import numerics as nx
from motok.analytics import cosine_mode, evaluate_reconstruction, pairwise_cosine, usage_histogram
from motok.attention import (
    MotionAttentionParams,
    UncondMotionTokens,
    cfg_combine,
    maybe_drop_condition,
    motion_attention,
    pad_channels,
)
from motok.motion import VALID_FRAMES, compute_stats, decode_motion, encode_motion, gen_synthetic, to_differential
from motok.rope import RopeTable, apply_rope, motion_rope_4d, rope_1d, vision_rope_4d
from motok.tokenizer import (
    Codebook,
    MotionTokenizer,
    TokenFile,
    TokenizerConfig,
    decode_checkpoint,
    decode_tokens,
    ema_update,
    encode,
    encode_checkpoint,
    encode_tokens,
    load_checkpoint,
    nearest_codes,
    quantize,
    tokenize_windowed,
    vq_loss,
)
from motok.training import TrainConfig, train_tokenizer
from motok.training.gradcheck import gradcheck

DESK_SEQUENCES = 2000
DESK_FRAMES = 129
DESK_STEPS = 10_000
HELD_OUT = 64
MPJPE_MAX = 0.05
L1_MAX = 0.05
HEALTH_STEPS = 500
HEALTH_SEEDS = 5


@pytest.fixture(scope="module")
def desk_corpus():
    corpus = gen_synthetic(DESK_SEQUENCES, DESK_FRAMES, "mixed", rng_seed=0)
    held = gen_synthetic(HELD_OUT, DESK_FRAMES, "mixed", rng_seed=999)
    return corpus, held, compute_stats(corpus)


@pytest.fixture(scope="module")
def desk_runs(desk_corpus, tmp_path_factory):
    corpus, _, stats = desk_corpus
    cfg = TokenizerConfig.desk()
    out = {}
    for name, tc in (("quantized", TrainConfig.desk(steps=DESK_STEPS, seed=0)),
                     ("no_quantize", TrainConfig.desk(steps=DESK_STEPS, seed=0, no_quantize=True))):
        t0 = time.perf_counter()
        path = tmp_path_factory.mktemp("desk") / f"{name}.4dmt"
        res = train_tokenizer(corpus, cfg, tc, stats, checkpoint_path=path)
        out[name] = (res, time.perf_counter() - t0, path)
    return out


def test_token_count_law(verdict):
    cfg = TokenizerConfig.tiny()
    model = MotionTokenizer.init(cfg, 0)
    book = Codebook.init(cfg.codebook_size, cfg.code_dim, 0)
    seqs = [gen_synthetic(1, f, rng_seed=f)[0] for f in VALID_FRAMES]
    stats = compute_stats(seqs)
    t0 = time.perf_counter()
    got = {s.frames: tokenize_windowed(to_differential(s, stats), model, book).count for s in seqs}
    got_direct = {s.frames: quantize(encode(to_differential(s, stats), model), book).count for s in seqs}
    dt = time.perf_counter() - t0
    want = {f: (1 + (f - 1) // 4) * 24 for f in VALID_FRAMES}
    verdict("token-count law", got == want and got_direct == want and got[33] == 216 and dt < 1.0,
            f"{got} in {dt:.2f}s")


def test_gradient_verification(verdict):
    t0 = time.perf_counter()
    tok = gradcheck("tokenizer", seed=0)
    att = gradcheck("attention", seed=0)
    dt = time.perf_counter() - t0
    (label, analytic, numeric), = tok.notes
    worst = max(tok.max_error, att.max_error)
    ok = worst <= 1e-3 and analytic == 0.0 and numeric > 0.0 and dt < 120.0
    verdict("gradient verification", ok,
            f"max rel err tokenizer {tok.max_error:.2e} attention {att.max_error:.2e}; "
            f"commitment code grad autodiff {analytic:g} vs FD {numeric:.3g}; {dt:.0f}s")


def test_loss_oracle(verdict):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        shape = tuple(int(v) for v in rng.integers(1, 6, size=3))
        x, r = rng.normal(size=shape), rng.normal(size=shape)
        n, d = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        z, c = rng.normal(size=(n, d)), rng.normal(size=(n, d))
        beta = float(rng.uniform(0, 2))
        with nx.precision(np.float64):
            got = vq_loss(nx.Tensor(x), nx.Tensor(r), nx.Tensor(z), c, beta).total.item()
        rec = sum(abs(a - b) for a, b in zip(r.ravel(), x.ravel())) / x.size
        com = sum((a - b) ** 2 for a, b in zip(z.ravel(), c.ravel())) / z.size
        worst = max(worst, abs(got - (rec + beta * com)))
    dt = time.perf_counter() - t0
    verdict("loss oracle equivalence", worst <= 1e-6 and dt < 10.0, f"max abs diff {worst:.2e} in {dt:.2f}s")


def _rest_pose():
    from motok.motion.synthetic import OFFSETS, PARENTS
    pos = np.zeros((24, 3))
    for j in range(24):
        pos[j] = OFFSETS[j] + (pos[PARENTS[j]] if PARENTS[j] >= 0 else 0)
    return pos


def test_rope_properties(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    d = 32
    shift_err = 0.0
    for axis in ("t", "x", "y", "z"):
        for _ in range(20):
            pq = {a: rng.normal(scale=5, size=6) for a in ("t", "x", "y", "z")}
            pk = {a: rng.normal(scale=5, size=9) for a in ("t", "x", "y", "z")}
            q, k = rng.normal(size=(6, d)), rng.normal(size=(9, d))
            base = apply_rope(q, RopeTable.from_axes(pq, d)) @ apply_rope(k, RopeTable.from_axes(pk, d)).T
            s = float(rng.uniform(-50, 50))
            pq2, pk2 = dict(pq, **{axis: pq[axis] + s}), dict(pk, **{axis: pk[axis] + s})
            moved = apply_rope(q, RopeTable.from_axes(pq2, d)) @ apply_rope(k, RopeTable.from_axes(pk2, d)).T
            shift_err = max(shift_err, float(np.abs(moved - base).max()))
    norm_err = 0.0
    for _ in range(50):
        x = rng.normal(size=(5, d))
        c, s_ = rope_1d(rng.uniform(-1e3, 1e3, size=5), d)
        y = apply_rope(x, RopeTable(c, s_, {"all": (0, d // 2)}))
        norm_err = max(norm_err, float(np.abs(np.linalg.norm(y, axis=1) - np.linalg.norm(x, axis=1)).max()))
    vc, vs = vision_rope_4d(3, 4, 5, d).span("z")
    z_identity = bool(np.all(vc == 1.0) and np.all(vs == 0.0))
    mj = _rest_pose()
    a = motion_rope_4d(mj, 4, d)
    b = motion_rope_4d(mj + np.array([2.5, -0.75, 4.0]), 4, d)
    central = max(float(np.abs(a.cos - b.cos).max()), float(np.abs(a.sin - b.sin).max()))
    dt = time.perf_counter() - t0
    ok = shift_err <= 1e-5 and norm_err <= 1e-5 and z_identity and central <= 1e-9 and dt < 30.0
    verdict("rope property suite", ok, f"shift {shift_err:.1e}, norm {norm_err:.1e}, z identity {z_identity}, "
            f"centralization {central:.1e}, {dt:.1f}s")


def _attention_setup(seed):
    rng = np.random.default_rng(seed)
    d, heads, f = 32, 4, 2
    params = MotionAttentionParams.init(d, heads, seed, dtype=np.float64)
    for t in (params.ln_q_w, params.ln_k_w, params.ln_v_w):
        t.data[:] = rng.uniform(0.5, 1.5, d)
    zv, zm = rng.normal(size=(8, d)), rng.normal(size=(f * 24, d))
    vr = vision_rope_4d(2, 2, 2, d // heads)
    mr = motion_rope_4d(rng.normal(scale=0.3, size=(24, 3)), f, d // heads)
    return params, zv, zm, vr, mr


def test_attention_contracts(verdict):
    t0 = time.perf_counter()
    with nx.precision(np.float64):
        params, zv, zm, vr, mr = _attention_setup(0)
        _, w = motion_attention(zv, zm, params, vr, mr, return_weights=True)
        stochastic = bool(np.all(w.data >= 0)) and float(np.abs(w.data.sum(-1) - 1).max()) <= 1e-9
        one = zm[:1]
        out = motion_attention(zv, one, params, vr, RopeTable.identity(1, params.head_dim)).data
        v = nx.layer_norm(nx.linear(nx.Tensor(one), params.w_v), params.ln_v_w, params.ln_v_b).data
        single = float(np.abs(out - zv - v).max())
        perm = np.random.default_rng(1).permutation(zm.shape[0])
        a = motion_attention(zv, zm, params, vr, mr).data
        b = motion_attention(zv, zm[perm], params, vr, mr.permuted(perm)).data
        perm_err = float(np.abs(a - b).max())
    dt = time.perf_counter() - t0
    ok = stochastic and single <= 1e-12 and perm_err <= 1e-5 and dt < 30.0
    verdict("attention contracts", ok, f"row-stochastic {stochastic}, single token {single:.1e}, "
            f"permutation {perm_err:.1e}, {dt:.1f}s")


def test_cfg_identities(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    c, u = rng.normal(size=(2, 3, 24, 16)).astype(np.float32)
    ident = (np.array_equal(cfg_combine(c, u, 1.0), c) and np.array_equal(cfg_combine(c, u, 0.0), u)
             and all(np.array_equal(cfg_combine(c, c, w), c) for w in (-1.0, 0.5, 3.0, 6.0)))
    unc = UncondMotionTokens.init((1, 24, 4))
    tok = np.zeros((1, 24, 4))
    rate = float(np.mean([maybe_drop_condition(tok, unc, 0.2, s)[1] for s in range(10_000)]))
    dt = time.perf_counter() - t0
    verdict("cfg identities and drop rate", ident and abs(rate - 0.2) <= 0.01 and dt < 10.0,
            f"identities exact {ident}, drop rate {rate:.4f}, {dt:.1f}s")


@pytest.mark.slow
def test_desk_training(desk_corpus, desk_runs, verdict):
    _, held, stats = desk_corpus
    q, q_time, _ = desk_runs["quantized"]
    nq, _, _ = desk_runs["no_quantize"]
    ev = evaluate_reconstruction(q.model, q.codebook, stats, held, windowed=True)
    direct = evaluate_reconstruction(q.model, q.codebook, stats, held, windowed=False)
    agree = np.mean([
        np.mean(tokenize_windowed(d, q.model, q.codebook).indices == quantize(encode(d, q.model), q.codebook).indices)
        for d in (to_differential(s, stats) for s in held)])
    q_loss = (q.report.column("recon") + q.model.cfg.beta * q.report.column("commit"))[-500:].mean()
    nq_loss = nq.report.column("recon")[-500:].mean()
    ok = (q_time <= 3600 and ev["mpjpe"] <= MPJPE_MAX and ev["l1"] <= L1_MAX and q_loss > nq_loss)
    verdict("desk-scale training", ok,
            f"{q_time / 60:.1f} min, held-out MPJPE {ev['mpjpe'] * 100:.2f} cm, L1 {ev['l1']:.4f} "
            f"(direct encode {direct['mpjpe'] * 100:.2f} cm / {direct['l1']:.4f}, window index agreement {agree:.3f}); "
            f"final loss quantized {q_loss:.4f} vs no-quantize {nq_loss:.4f}")


@pytest.mark.slow
def test_codebook_health(desk_corpus, desk_runs, verdict):
    corpus, held, stats = desk_corpus
    q, _, _ = desk_runs["quantized"]
    cfg = TokenizerConfig.desk()
    never = {True: [], False: []}
    for seed in range(HEALTH_SEEDS):
        for reset in (True, False):
            tc = TrainConfig.desk(steps=HEALTH_STEPS, seed=seed, reset_codes=reset)
            res = train_tokenizer(corpus, cfg, tc, stats)
            never[reset].append(usage_histogram(res.codebook, held, res.model, stats).never_used)
    med_on, med_off = float(np.median(never[True])), float(np.median(never[False]))
    edges, counts, _ = pairwise_cosine(q.codebook)
    mode = cosine_mode(edges, counts)
    ok = med_on < med_off and abs(mode) < 0.2
    verdict("codebook health", ok, f"never-used codes median with reset {med_on:g} {never[True]} vs without "
            f"{med_off:g} {never[False]}; cosine mode {mode:+.3f}")


def test_determinism_and_persistence(tmp_path, verdict):
    seqs = gen_synthetic(6, 81, rng_seed=1)
    stats = compute_stats(seqs)
    tc = TrainConfig(steps=150, lr_phase1=3e-3, lr_phase2=3e-4, batch_size=2, frame_lengths=(33,))
    cfg = TokenizerConfig.tiny()
    full = train_tokenizer(seqs, cfg, tc, stats)
    train_tokenizer(seqs, cfg, tc, stats, checkpoint_path=tmp_path / "h.4dmt", stop_at=50)
    resumed = train_tokenizer(seqs, cfg, tc, stats, resume=load_checkpoint(tmp_path / "h.4dmt"))
    resume_ok = (resumed.report.rows == full.report.rows[50:] and len(resumed.report.rows) == 100
                 and all(np.array_equal(resumed.model.params[k].data, full.model.params[k].data) for k in full.model.params)
                 and np.array_equal(resumed.codebook.codes, full.codebook.codes))
    buf = encode_motion(seqs[0])
    mseq_ok = encode_motion(decode_motion(buf)) == buf and decode_motion(buf).coords.tobytes() == seqs[0].coords.tobytes()
    grid = tokenize_windowed(to_differential(seqs[0], stats), full.model, full.codebook)
    tok = TokenFile(grid.indices, 81, full.checkpoint_sha256 or "ab" * 32, np.ones((24, 3), np.float32))
    tbuf = encode_tokens(tok)
    back = decode_tokens(tbuf)
    mtok_ok = encode_tokens(back) == tbuf and np.array_equal(back.indices, grid.indices)
    cbuf = encode_checkpoint(full.model.cfg, full.model.params, full.codebook, stats, full.meta(),
                             full.optimizer.state_arrays())
    ck = decode_checkpoint(cbuf)
    ckpt_ok = encode_checkpoint(ck.config, ck.params, ck.codebook, ck.stats, ck.meta, ck.extras) == cbuf
    x = np.random.default_rng(0).normal(size=(2, 24, 3072)).astype(np.float32)
    y = pad_channels(x, 5120)
    pad_ok = y.shape == (2, 24, 5120) and y[..., :3072].tobytes() == x.tobytes() and not np.any(y[..., 3072:])
    ok = resume_ok and mseq_ok and mtok_ok and ckpt_ok and pad_ok
    verdict("determinism and persistence", ok, f"resume {resume_ok}, mseq {mseq_ok}, mtok {mtok_ok}, "
            f"checkpoint {ckpt_ok}, pad_channels {pad_ok}")


def test_quantizer_contracts(verdict):
    rng = np.random.default_rng(9)
    codes = rng.normal(size=(64, 8)).astype(np.float32)
    fixed = bool(np.array_equal(nearest_codes(codes, codes), np.arange(64)))
    dup = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]], np.float32)
    ties = nearest_codes(np.array([[1.0, 0.0], [0.5, 0.5]], np.float32), dup).tolist() == [0, 0]
    lam, steps = 0.99, 2000
    book = Codebook.init(2, 4, 0)
    c0, n0 = book.ema_embed_sum[0].astype(np.float64), float(book.ema_cluster_size[0])
    e = rng.normal(size=(3, 4))
    for _ in range(steps):
        ema_update(book, np.vstack([e[0], e[0], e[1]]), np.array([0, 0, 1]), lam)
    g = lam ** steps
    oracle = (g * c0 + (1 - g) * 2 * e[0]) / (g * n0 + (1 - g) * 2)
    ema_err = max(float(np.abs(book.codes[0] - oracle).max()), float(np.abs(book.codes[0] - e[0]).max()))
    ok = fixed and ties and ema_err <= 1e-4
    verdict("quantizer contracts", ok, f"fixed points {fixed}, ties to lowest {ties}, EMA error {ema_err:.1e}")
