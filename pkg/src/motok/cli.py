"""Command-line entry point: ``motok <command> ...``.

Exit codes: 0 success, 1 usage error, 2 file format error, 3 numeric
failure. Every command that produces files also writes a run manifest
(``--manifest`` overrides the default location); ``motok replay`` re-runs a
manifest and checks that the outputs come out byte-identical.
"""
from __future__ import annotations

import os

_threads = os.environ.get("MOTOK_THREADS")
if _threads is not None and _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FormatError, MotokError, NumericError, UsageError

log = logging.getLogger("motok")

STATS_NAME = "stats.json"


# ------------------------------------------------------------------ manifest

def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_tree(path) -> dict:
    p = Path(path)
    if p.is_dir():
        return {str(f): _sha256(f) for f in sorted(p.iterdir()) if f.is_file() and not f.name.endswith(".manifest.json")}
    return {str(p): _sha256(p)} if p.exists() else {}


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict = field(default_factory=dict)
    seed: int | None = None
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    checkpoint_sha256: str = ""
    tool_version: str = __version__

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        try:
            d = json.loads(text)
            return cls(**d)
        except (ValueError, TypeError) as exc:
            raise FormatError(f"invalid run manifest: {exc}") from None

    def write(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")


class Run:
    """Collects manifest fields while a command executes."""

    def __init__(self, args, argv):
        self.args = args
        self.manifest = RunManifest(args.command, list(argv), seed=getattr(args, "seed", None))

    def add_inputs(self, *paths):
        for p in paths:
            if p is not None:
                self.manifest.inputs.update(_hash_tree(p))

    def finish(self, outputs=(), default_manifest=None):
        for p in outputs:
            self.manifest.outputs.update(_hash_tree(p))
        target = self.args.manifest or default_manifest
        if target is not None:
            self.manifest.write(target)


# ------------------------------------------------------------------ helpers

def _load_corpus(path):
    from .motion import read_motion, read_stats
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"data path {p} is not a directory")
    files = sorted(p.glob("*.mseq"))
    if not files:
        raise UsageError(f"no .mseq files in {p}")
    corpus = [read_motion(f) for f in files]
    stats = read_stats(p / STATS_NAME) if (p / STATS_NAME).exists() else None
    return corpus, stats, files


def _load_ckpt(path):
    from .tokenizer import load_checkpoint
    ck = load_checkpoint(path)
    if ck.stats is None:
        raise FormatError(f"checkpoint {path} (sha256 {ck.sha256}) has no dataset statistics")
    return ck


def _config_from(args):
    """Tokenizer and training configs: preset, then JSON file, then flags."""
    from .tokenizer import TokenizerConfig
    from .training import TrainConfig
    file_cfg = {}
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except ValueError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from None
        unknown = set(file_cfg) - {"preset", "tokenizer", "train"}
        if unknown:
            raise UsageError(f"unknown config sections {sorted(unknown)}")
    preset = args.preset or file_cfg.get("preset", "desk")
    tok = asdict(TokenizerConfig.preset(preset))
    tok.update(file_cfg.get("tokenizer", {}))
    train = TrainConfig.desk().to_dict() if preset == "desk" else TrainConfig().to_dict()
    train.update(file_cfg.get("train", {}))
    flags = {"steps": args.steps, "seed": args.seed, "lr_phase1": args.lr, "batch_frames": args.batch_frames,
             "checkpoint_every": args.checkpoint_every}
    train.update({k: v for k, v in flags.items() if v is not None})
    if args.lr is not None and args.lr2 is None:
        train["lr_phase2"] = args.lr / 10
    if args.lr2 is not None:
        train["lr_phase2"] = args.lr2
    for flag, key in (("no_quantize", "no_quantize"), ("no_differential", "no_differential"), ("quant_3d", "quant_3d")):
        if getattr(args, flag):
            train[key] = True
    if args.no_reset:
        train["reset_codes"] = False
    try:
        cfg = TokenizerConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in tok.items()})
    except TypeError as exc:
        raise UsageError(f"bad tokenizer config: {exc}") from None
    return cfg, TrainConfig.from_dict({k: tuple(v) if isinstance(v, list) else v for k, v in train.items()})


def _encode_file(ck, path):
    from .motion import read_motion, to_differential
    from .tokenizer import tokenize_windowed
    seq = read_motion(path)
    model = ck.model()
    diff = to_differential(seq, ck.stats, model.cfg.differential)
    if model.cfg.input_channels != 3:
        diff = diff.with_values(diff.values[:, :, :model.cfg.input_channels])
    return seq, diff, tokenize_windowed(diff, model, ck.codebook)


def _decode_grid(ck, indices, frames, first_frame, fps=30.0):
    from .motion import from_differential
    from .tokenizer import TokenGrid, decode
    if indices.max(initial=0) >= ck.codebook.size:
        raise FormatError(f"token index {indices.max()} outside codebook of size {ck.codebook.size}")
    model = ck.model()
    grid = TokenGrid.from_indices(indices, ck.codebook, frames)
    diff = decode(grid, model, frames=frames, first_frame=first_frame, stats_ref=ck.stats.stats_id, fps=fps)
    return from_differential(diff, ck.stats)


# ------------------------------------------------------------------ commands

def cmd_gen_data(args, run):
    from .motion import compute_stats, gen_synthetic, write_motion, write_stats
    seqs = gen_synthetic(args.count, args.frames, args.family, args.seed)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create {out}: {exc}") from None
    paths = []
    for i, seq in enumerate(seqs):
        paths.append(out / f"seq_{i:05d}.mseq")
        write_motion(paths[-1], seq)
    write_stats(out / STATS_NAME, compute_stats(seqs))
    run.manifest.config = {"count": args.count, "frames": args.frames, "family": args.family}
    print(f"wrote {len(seqs)} sequences and {STATS_NAME} to {out}")
    run.finish([out], out / "gen-data.manifest.json")


def cmd_train(args, run):
    from .tokenizer import load_checkpoint
    from .training import train_tokenizer
    cfg, tc = _config_from(args)
    corpus, stats, _ = _load_corpus(args.data)
    run.add_inputs(args.data, args.config)
    resume = load_checkpoint(args.resume) if args.resume else None
    res = train_tokenizer(corpus, cfg, tc, stats, resume=resume, checkpoint_path=args.out, progress=True)
    if args.report:
        res.report.write_csv(args.report)
    run.manifest.config = {"tokenizer": json.loads(res.model.cfg.to_json()), "train": tc.to_dict()}
    run.manifest.seed = tc.seed
    run.manifest.checkpoint_sha256 = res.checkpoint_sha256
    print(f"trained {res.step} steps in {res.report.wall_time:.1f} s; "
          f"final recon {res.report.tail_mean('recon', 50):.4f}; checkpoint sha256 {res.checkpoint_sha256}")
    run.finish([args.out] + ([args.report] if args.report else []), f"{args.out}.manifest.json")


def cmd_encode(args, run):
    from .tokenizer import TokenFile, write_tokens
    ck = _load_ckpt(args.ckpt)
    run.add_inputs(args.ckpt, args.inp)
    seq, diff, grid = _encode_file(ck, args.inp)
    first = np.asarray(seq.coords[0] if ck.config.differential else np.zeros((24, 3)), np.float32)
    write_tokens(args.out, TokenFile(grid.indices, diff.frames, ck.sha256, first))
    run.manifest.checkpoint_sha256 = ck.sha256
    print(f"tokens: {grid.count}")
    run.finish([args.out], f"{args.out}.manifest.json")


def cmd_decode(args, run):
    from .motion import DatasetStats, write_motion
    from .tokenizer import read_tokens
    ck = _load_ckpt(args.ckpt)
    run.add_inputs(args.ckpt, args.inp)
    tok = read_tokens(args.inp)
    if tok.checkpoint_sha256 and tok.checkpoint_sha256 != ck.sha256:
        raise FormatError(f"tokens were produced by checkpoint {tok.checkpoint_sha256}, not {ck.sha256}")
    first = None
    if tok.first_frame is not None and ck.config.differential:
        first = ck.stats.normalize(tok.first_frame.astype(np.float64))
    seq = _decode_grid(ck, tok.indices, tok.frames, first)
    write_motion(args.out, seq)
    run.manifest.checkpoint_sha256 = ck.sha256
    print(f"decoded {seq.frames} frames")
    run.finish([args.out], f"{args.out}.manifest.json")


def cmd_roundtrip(args, run):
    from .analytics import recon_metrics
    from .tokenizer import token_count
    ck = _load_ckpt(args.ckpt)
    run.add_inputs(args.ckpt, args.inp)
    seq, diff, grid = _encode_file(ck, args.inp)
    rec = _decode_grid(ck, grid.indices, diff.frames, diff.first_frame, seq.fps)
    m = recon_metrics(seq, rec, ck.stats)
    want = token_count(seq.frames)
    print(f"tokens: {grid.count}")
    print(f"mpjpe: {m['mpjpe']:.6f}")
    print(f"l1: {m['l1']:.6f}")
    run.manifest.checkpoint_sha256 = ck.sha256
    run.finish()
    if grid.count != want:
        raise NumericError(f"token count {grid.count} differs from the expected {want} for {seq.frames} frames")


def cmd_analyze(args, run):
    from .analytics import pairwise_cosine, usage_histogram
    ck = _load_ckpt(args.ckpt)
    corpus, _, _ = _load_corpus(args.data)
    run.add_inputs(args.ckpt, args.data)
    rep = usage_histogram(ck.codebook, corpus, ck.model(), ck.stats, corpus=str(args.data))
    rep.cosine_edges, rep.cosine_counts, rep.zero_norm_codes = pairwise_cosine(ck.codebook, args.bins)
    print(rep.summary_json())
    outputs = []
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "usage.csv").write_text(rep.per_code_csv())
        (out / "cosine.csv").write_text(rep.cosine_csv())
        (out / "summary.json").write_text(rep.summary_json() + "\n")
        outputs = [out]
    run.manifest.checkpoint_sha256 = ck.sha256
    run.finish(outputs, Path(args.out) / "analyze.manifest.json" if args.out else None)


def cmd_gradcheck(args, run):
    from .training.gradcheck import TOL, gradcheck
    rep = gradcheck(args.part, args.seed)
    print("\n".join(rep.lines()))
    run.finish()
    if not rep.passed():
        raise NumericError(f"gradient check failed: max relative error {rep.max_error:.3e} > {TOL}")
    print("PASS")


def cmd_attn_demo(args, run):
    from . import numerics as nx
    from .attention import MotionAttentionParams, cfg_combine, motion_attention
    from .motion.synthetic import gen_synthetic
    from .motion import compute_stats
    from .rope import motion_rope_4d, vision_rope_4d
    rng = np.random.default_rng(args.seed)
    dim, heads, fl, h, w = 64, 8, 3, 4, 4
    stats = compute_stats(gen_synthetic(4, 33, rng_seed=args.seed))
    params = MotionAttentionParams.init(dim, heads, args.seed)
    zv = nx.Tensor(rng.normal(size=(fl * h * w, dim)))
    zm = nx.Tensor(rng.normal(size=(fl * 24, dim)))
    out, weights = motion_attention(zv, zm, params, vision_rope_4d(fl, h, w, dim // heads),
                                    motion_rope_4d(stats.mean_joints, fl, dim // heads), return_weights=True)
    w_arr = getattr(weights, "data", weights)
    rows = np.abs(w_arr.sum(-1) - 1).max()
    guided = cfg_combine(out.data, zv.data, 2.0)
    print(f"vision tokens {zv.shape[0]}, motion tokens {zm.shape[0]}, heads {heads}, head dim {dim // heads}")
    print(f"output shape {out.shape}, max |row sum - 1| {rows:.2e}")
    print(f"mean |attention update| {np.abs(out.data - zv.data).mean():.4f}, guided (w=2) norm {np.linalg.norm(guided):.4f}")
    run.finish()


def cmd_replay(args, run):
    man = RunManifest.from_json(Path(args.manifest_file).read_text())
    for path, digest in man.inputs.items():
        if not Path(path).exists() or _sha256(path) != digest:
            raise FormatError(f"input {path} no longer matches the manifest hash {digest}")
    before = {p: d for p, d in man.outputs.items()}
    code = main(man.argv)
    if code:
        return code
    mismatched = [p for p, d in before.items() if not Path(p).exists() or _sha256(p) != d]
    if mismatched:
        raise NumericError(f"replay produced different bytes for {mismatched}")
    print(f"replay reproduced {len(before)} output file(s) bit-exactly")
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    from .motion.synthetic import FAMILIES
    p = argparse.ArgumentParser(prog="motok", description="Motion tokenizer toolkit")
    p.add_argument("--version", action="version", version=f"motok {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        sp.add_argument("--manifest", help="run manifest path (default: next to the output)")
        return sp

    sp = add("gen-data", cmd_gen_data, "write a synthetic MSEQ corpus and its statistics")
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--frames", type=int, required=True)
    sp.add_argument("--family", default="mixed", choices=FAMILIES + ("mixed",))
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "train a tokenizer checkpoint")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config", help="JSON with optional 'preset', 'tokenizer' and 'train' sections")
    sp.add_argument("--preset", choices=("full", "desk", "tiny"))
    sp.add_argument("--seed", type=int)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--lr", type=float, help="phase-1 learning rate (phase 2 defaults to a tenth)")
    sp.add_argument("--lr2", type=float, help="phase-2 learning rate")
    sp.add_argument("--batch-frames", type=int)
    sp.add_argument("--checkpoint-every", type=int)
    sp.add_argument("--resume", help="continue from this checkpoint")
    sp.add_argument("--report", help="write the per-step CSV here")
    sp.add_argument("--no-quantize", action="store_true")
    sp.add_argument("--no-differential", action="store_true")
    sp.add_argument("--quant-3d", action="store_true")
    sp.add_argument("--no-reset", action="store_true")

    for name, fn, help_ in (("encode", cmd_encode, "MSEQ -> MTOK tokens"), ("decode", cmd_decode, "MTOK -> MSEQ")):
        sp = add(name, fn, help_)
        sp.add_argument("--ckpt", required=True)
        sp.add_argument("--in", dest="inp", required=True)
        sp.add_argument("--out", required=True)

    sp = add("roundtrip", cmd_roundtrip, "encode and decode one file, print token count and error")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--in", dest="inp", required=True)

    sp = add("analyze", cmd_analyze, "codebook usage and code similarity")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--bins", type=int, default=40)
    sp.add_argument("--out", help="directory for usage.csv, cosine.csv and summary.json")

    sp = add("gradcheck", cmd_gradcheck, "finite-difference check of the autodiff gradients")
    sp.add_argument("--part", required=True, choices=("tokenizer", "tokenizer-no-quantize", "attention"))
    sp.add_argument("--seed", type=int, default=0)

    sp = add("attn-demo", cmd_attn_demo, "run motion cross-attention on random tokens")
    sp.add_argument("--seed", type=int, default=0)

    sp = add("replay", cmd_replay, "re-run a manifest and verify its outputs")
    sp.add_argument("manifest_file")
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 1
    logging.basicConfig(level=logging.INFO if args.verbose or args.command == "train" else logging.WARNING,
                        format="%(asctime)s %(message)s", stream=sys.stderr)
    if _threads is not None and not (_threads.isdigit() and int(_threads) > 0):
        print(f"motok: error: MOTOK_THREADS must be a positive integer, got {_threads!r}", file=sys.stderr)
        return 1
    try:
        rc = args.fn(args, Run(args, argv))
        return int(rc or 0)
    except MotokError as exc:
        print(f"motok: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"motok: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
