"""Finite-difference verification of the autodiff gradients.

Runs in float64. For the quantized tokenizer the code indices, and the
offset from each latent to its selected code, are frozen at the evaluation
point. The surrogate ``z + (c_sel - z0)`` then has exactly the
straight-through gradient, so finite differences of it are a fair oracle.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import numerics as nx
from ..attention import MotionAttentionParams, motion_attention
from ..errors import UsageError
from ..rope import motion_rope_4d, vision_rope_4d
from ..tokenizer.config import TokenizerConfig
from ..tokenizer.loss import vq_loss
from ..tokenizer.model import MotionTokenizer, reflect_pad_frames
from ..tokenizer.quantizer import Codebook, quantize_tensor

EPS = 1e-5  # small enough not to step across the |r| kink of the L1 loss
TOL = 1e-3
# Gradients below this norm are treated as zero. Conv biases that feed a
# one-channel-per-group norm have an exactly zero gradient, and finite
# differences there only return roundoff.
FLOOR = 1e-8


@dataclass
class GradcheckReport:
    part: str
    errors: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)  # (label, analytic norm, numeric norm)

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    def passed(self, tol: float = TOL) -> bool:
        return self.max_error <= tol

    def lines(self) -> list[str]:
        out = [f"{name:32s} {err:.3e}" for name, err in self.errors.items()]
        out.append(f"{'max':32s} {self.max_error:.3e}")
        for label, a, n in self.notes:
            out.append(f"expected discrepancy: {label}: autodiff |g|={a:.3e}, finite-diff |g|={n:.3e}")
        return out


def _check(report, named, loss_fn, surrogate_fn=None, eps=EPS):
    for p in named.values():
        p.grad = None
    loss_fn().backward()
    fd = surrogate_fn or loss_fn
    for name, p in named.items():
        num = nx.numerical_grad(lambda: float(fd().data), p.data, eps=eps)
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        report.errors[name] = nx.relative_error(g, num, floor=FLOOR)


def tokenizer_fixture(seed: int = 0, quantize: bool = True):
    """Tiny model, a 2-frame input reflected to 5 frames, and a codebook
    seeded from the encoder's own latents so assignments are spread out."""
    cfg = TokenizerConfig.tiny(quantize=quantize)
    rng = np.random.default_rng(seed)
    model = MotionTokenizer.init(cfg, seed)
    for name, p in model.params.items():
        if name.endswith(".b") or ".norm" in name:
            p.data[...] = p.data + rng.normal(scale=0.1, size=p.shape)
    frames = rng.normal(size=(2, 24, 3))
    x = nx.Tensor(reflect_pad_frames(frames, 5).transpose(2, 0, 1)[None])
    with nx.no_grad():
        z = model.encode_tensor(x).data
    flat = z.transpose(0, 2, 3, 1).reshape(-1, cfg.code_dim)
    pick = rng.choice(flat.shape[0], cfg.codebook_size, replace=False)
    book = Codebook.from_codes(flat[pick] + rng.normal(scale=0.05, size=(cfg.codebook_size, cfg.code_dim)))
    return model, book, x


def gradcheck_tokenizer(seed: int = 0, quantize: bool = True) -> GradcheckReport:
    with nx.precision(np.float64):
        model, book, x = tokenizer_fixture(seed, quantize)
        cfg = model.cfg
        report = GradcheckReport("tokenizer" if quantize else "tokenizer-no-quantize")
        if not quantize:
            def loss():
                return vq_loss(x, model.decode_tensor(model.encode_tensor(x)), None, None, cfg.beta).total
            _check(report, model.params, loss)
            return report

        with nx.no_grad():
            z0 = model.encode_tensor(x)
        _, idx, sel = quantize_tensor(z0, book)
        offset = nx.Tensor(sel - z0.data)

        def loss():
            z = model.encode_tensor(x)
            zq, _, s = quantize_tensor(z, book)
            return vq_loss(x, model.decode_tensor(zq), z, s, cfg.beta).total

        def surrogate():
            z = model.encode_tensor(x)
            return vq_loss(x, model.decode_tensor(nx.add(z, offset)), z, sel, cfg.beta).total

        _check(report, model.params, loss, surrogate)

        # The commitment term reads the selected codes through a stop-gradient:
        # autodiff gives them nothing, while perturbing them does move the value.
        codes = nx.parameter(sel.copy(), name="selected_codes")
        with nx.no_grad():
            z_fixed = model.encode_tensor(x)

        def commit():
            return vq_loss(x, x, z_fixed, codes, cfg.beta).commit

        z_live = model.encode_tensor(x)
        parts = vq_loss(x, x, z_live, codes, cfg.beta)
        codes.grad = None
        parts.commit.backward()
        analytic = codes.grad if codes.grad is not None else np.zeros_like(codes.data)
        numeric = nx.numerical_grad(lambda: float(commit().data), codes.data)
        report.notes.append(("commitment term wrt selected codes (stop-gradient)",
                             float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric))))
        return report


def attention_fixture(seed: int = 0, dim: int = 16, heads: int = 2, frames: int = 2):
    rng = np.random.default_rng(seed)
    params = MotionAttentionParams.init(dim, heads, seed)
    for t in (params.ln_q_w, params.ln_k_w, params.ln_v_w):
        t.data[:] = rng.uniform(0.5, 1.5, dim)
    for t in (params.ln_q_b, params.ln_k_b, params.ln_v_b):
        t.data[:] = rng.normal(scale=0.1, size=dim)
    zv = nx.Tensor(rng.normal(size=(6, dim)))
    zm = nx.Tensor(rng.normal(size=(frames * 24, dim)))
    vr = vision_rope_4d(1, 2, 3, dim // heads)
    mr = motion_rope_4d(rng.normal(scale=0.3, size=(24, 3)), frames, dim // heads)
    target = nx.Tensor(rng.normal(size=(6, dim)))
    return params, zv, zm, vr, mr, target


def gradcheck_attention(seed: int = 0) -> GradcheckReport:
    with nx.precision(np.float64):
        params, zv, zm, vr, mr, target = attention_fixture(seed)
        report = GradcheckReport("attention")

        def loss():
            return nx.sum(nx.mul(motion_attention(zv, zm, params, vr, mr), target))

        _check(report, params.named(), loss)
        return report


def gradcheck(part: str, seed: int = 0) -> GradcheckReport:
    if part == "tokenizer":
        return gradcheck_tokenizer(seed, True)
    if part == "tokenizer-no-quantize":
        return gradcheck_tokenizer(seed, False)
    if part == "attention":
        return gradcheck_attention(seed)
    raise UsageError(f"unknown gradcheck part {part!r}; choose tokenizer, tokenizer-no-quantize or attention")
