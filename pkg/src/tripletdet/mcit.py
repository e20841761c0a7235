"""Class-token transformer over scene features and instrument instances.

A learnable token per target class rides along with the flattened scene
grid. Queries are [scene; tokens]; keys/values additionally carry the
frame's instrument features, so token updates can attend to each localized
instrument. Presence logits come from a linear head over the mean of the
output token rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import torch
from torch import Tensor, nn

from .backbone import SceneFeatures
from .config import ModelConfig
from .layers import TransformerBlock, canonical_row_order, check_finite


@dataclass
class McitOutput:
    sequence: Tensor        # (B, hw + N, d)
    grid_len: int           # hw
    target_logits: Tensor   # (B, N)

    @property
    def output_tokens(self) -> Tensor:
        """(B, N, d) refined per-class token features."""
        return self.sequence[:, self.grid_len:, :]


class ClassTokenTransformer(nn.Module):
    def __init__(self, cfg: ModelConfig, n_tokens: int):
        super().__init__()
        self.n_tokens = n_tokens
        # Zero init: every token starts identical and differentiates through
        # the class-wise heads downstream.
        self.tokens = nn.Parameter(torch.zeros(n_tokens, cfg.d))
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.d, cfg.heads, cfg.norm_first) for _ in range(cfg.t_l))
        self.presence_head = nn.Linear(cfg.d, n_tokens)

    def forward(self, scene: SceneFeatures, instruments: List[Tensor]) -> McitOutput:
        grid = scene.grid
        b, hw, d = grid.shape
        if len(instruments) != b:
            raise ValueError("one instrument tensor per frame required")
        x = torch.cat([grid, self.tokens.unsqueeze(0).expand(b, -1, -1)], dim=1)

        counts = [t.shape[0] for t in instruments]
        o_max = max(counts)
        extra: Optional[Tensor] = None
        key_mask: Optional[Tensor] = None
        if o_max > 0:
            extra = x.new_zeros(b, o_max, d)
            pad = torch.ones(b, o_max, dtype=torch.bool, device=x.device)
            for i, feats in enumerate(instruments):
                if counts[i] == 0:
                    continue
                # Content-sorted so attention sums run in a caller-independent order.
                extra[i, :counts[i]] = feats[canonical_row_order(feats)]
                pad[i, :counts[i]] = False
            base = torch.zeros(b, hw + self.n_tokens, dtype=torch.bool, device=x.device)
            key_mask = torch.cat([base, pad], dim=1)

        for i, block in enumerate(self.blocks):
            kv = x if extra is None else torch.cat([x, extra], dim=1)
            x = check_finite(block(x, kv, key_padding_mask=key_mask), f"mcit.{i}")

        logits = self.presence_head(x[:, hw:, :].mean(dim=1))
        return McitOutput(sequence=x, grid_len=hw, target_logits=logits)
