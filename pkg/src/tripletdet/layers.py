"""Shared neural building blocks: positional encodings, attention blocks, MLPs."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import torch
from torch import Tensor, nn


def sinusoidal_encoding_2d(h: int, w: int, d: int,
                           dtype=torch.float32, temperature: float = 10000.0) -> Tensor:
    """Fixed 2D sine/cosine position features for a flattened h*w grid, shape (h*w, d).

    Half the channels encode the row coordinate, half the column, each as
    interleaved sin/cos at geometrically spaced frequencies. Requires d % 4 == 0.
    """
    if d % 4 != 0:
        raise ValueError("2D sinusoidal encoding needs d divisible by 4")
    half = d // 2
    freq = temperature ** (torch.arange(0, half, 2, dtype=torch.float64) / half)
    ys = torch.arange(h, dtype=torch.float64)[:, None] / freq   # (h, half/2)
    xs = torch.arange(w, dtype=torch.float64)[:, None] / freq   # (w, half/2)
    y_enc = torch.stack([ys.sin(), ys.cos()], dim=-1).flatten(1)    # (h, half)
    x_enc = torch.stack([xs.sin(), xs.cos()], dim=-1).flatten(1)    # (w, half)
    grid = torch.cat([
        y_enc[:, None, :].expand(h, w, half),
        x_enc[None, :, :].expand(h, w, half),
    ], dim=-1)
    return grid.reshape(h * w, d).to(dtype)


def mlp(sizes: Sequence[int]) -> nn.Sequential:
    """Plain ReLU MLP; no activation after the last linear layer."""
    layers = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        layers.append(nn.Linear(a, b))
        layers.append(nn.ReLU())
    return nn.Sequential(*layers[:-1])


class TransformerBlock(nn.Module):
    """One attention + feed-forward block.

    Queries are the running sequence; keys/values may carry extra rows
    (e.g. instrument features appended by the caller). ``norm_first``
    switches between pre-norm and the default post-norm arrangement.
    """

    def __init__(self, d: int, heads: int, norm_first: bool = False, ffn_mult: int = 4):
        super().__init__()
        self.attn = nn.MultiheadAttention(d, heads, batch_first=True)
        self.ffn = nn.Sequential(nn.Linear(d, ffn_mult * d), nn.ReLU(),
                                 nn.Linear(ffn_mult * d, d))
        self.norm1 = nn.LayerNorm(d)
        self.norm2 = nn.LayerNorm(d)
        self.norm_first = norm_first

    def forward(self, x: Tensor, kv: Optional[Tensor] = None,
                key_padding_mask: Optional[Tensor] = None) -> Tensor:
        if kv is None:
            kv = x
        if self.norm_first:
            q = self.norm1(x)
            k = self.norm1(kv)
            attn_out, _ = self.attn(q, k, k, key_padding_mask=key_padding_mask,
                                    need_weights=False)
            x = x + attn_out
            x = x + self.ffn(self.norm2(x))
        else:
            attn_out, _ = self.attn(x, kv, kv, key_padding_mask=key_padding_mask,
                                    need_weights=False)
            x = self.norm1(x + attn_out)
            x = self.norm2(x + self.ffn(x))
        return x


def canonical_row_order(x: Tensor) -> Tensor:
    """Content-derived total order over rows (lexicographic by columns).

    Reductions over instrument instances (attention key sums, graph
    aggregation) iterate in this order instead of caller order, so a
    permutation of the detection list cannot perturb floating-point
    summation order. Identical rows are interchangeable summands, hence
    any tie order yields bitwise identical results.
    """
    if x.shape[0] <= 1:
        return torch.arange(x.shape[0], device=x.device)
    cols = x.detach().cpu().numpy()
    order = np.lexsort(cols.T[::-1])
    return torch.as_tensor(order.copy(), dtype=torch.long, device=x.device)


def check_finite(t: Tensor, where: str) -> Tensor:
    from .errors import NumericError

    if not torch.isfinite(t).all():
        raise NumericError(f"non-finite activations in {where}")
    return t


def seed_everything(seed: int) -> np.random.Generator:
    torch.manual_seed(seed)
    return np.random.default_rng(seed)
