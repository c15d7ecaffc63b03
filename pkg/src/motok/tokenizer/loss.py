from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import numerics as nx
from ..errors import DimensionError
from ..numerics import Tensor


@dataclass
class LossParts:
    total: Tensor
    recon: Tensor
    commit: Tensor

    def values(self) -> tuple[float, float, float]:
        return float(self.total.item()), float(self.recon.item()), float(self.commit.item())


def vq_loss(target, recon: Tensor, latents: Tensor | None, selected, beta: float = 0.25) -> LossParts:
    """Mean absolute reconstruction error plus ``beta`` times the
    commitment MSE between latents and the stop-gradiented selected codes.

    ``selected`` may be an array or a Tensor; either way no gradient reaches
    it. With ``latents=None`` (quantizer bypassed) the commitment is zero.
    """
    target = target if isinstance(target, Tensor) else nx.Tensor(np.asarray(target), dtype=recon.dtype)
    if target.shape != recon.shape:
        raise DimensionError(f"reconstruction {recon.shape} does not match target {target.shape}")
    rec = nx.mean(nx.abs(nx.sub(recon, nx.stop_gradient(target))))
    if latents is None:
        commit = nx.Tensor(np.zeros((), dtype=recon.dtype))
        total = rec
    else:
        sel = nx.stop_gradient(selected if isinstance(selected, Tensor) else nx.Tensor(np.asarray(selected), dtype=latents.dtype))
        if sel.shape != latents.shape:
            raise DimensionError(f"selected codes {sel.shape} do not match latents {latents.shape}")
        commit = nx.mean(nx.square(nx.sub(latents, sel)))
        total = nx.add(rec, nx.mul(commit, float(beta))) if beta != 0 else rec
    return LossParts(total, rec, commit)
