"""Bipartite instrument-target interaction graph.

Instrument instances form source nodes, per-class target embeddings form
destination nodes, and every source connects to every destination with a
directed edge. Message passing updates destinations only; sources are
read-only context. Edge features concatenate the (projected) source and
destination node features; linear heads score each edge and classify its
verb (with one extra background logit).

Edges are laid out row-major: edge (i, j) lives at flat index i * N + j.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import torch
from torch import Tensor, nn
import torch.nn.functional as F

from .config import ModelConfig
from .layers import canonical_row_order


@dataclass
class BipartiteGraph:
    source_nodes: Tensor   # (O, d')
    dest_nodes: Tensor     # (N, d')

    @property
    def n_sources(self) -> int:
        return self.source_nodes.shape[0]

    @property
    def n_dests(self) -> int:
        return self.dest_nodes.shape[0]

    def edge_index(self, i: int, j: int) -> int:
        return i * self.n_dests + j


@dataclass
class EdgeSet:
    edge_features: Tensor  # (O*N, 2d')
    edge_scores: Tensor    # (O*N,)
    verb_logits: Tensor    # (O*N, V+1); last column is background
    n_sources: int
    n_dests: int

    def scores_of_source(self, i: int) -> Tensor:
        return self.edge_scores[i * self.n_dests:(i + 1) * self.n_dests]

    def verb_logits_of(self, i: int, j: int) -> Tensor:
        return self.verb_logits[i * self.n_dests + j]


class GatLayer(nn.Module):
    """Multi-head additive attention over sources, per destination, plus a
    learned self-transform on the destination."""

    def __init__(self, d_prime: int, heads: int):
        super().__init__()
        self.heads = heads
        self.dh = d_prime // heads
        self.w = nn.Linear(d_prime, d_prime, bias=False)
        self.att_src = nn.Parameter(torch.empty(heads, self.dh))
        self.att_dst = nn.Parameter(torch.empty(heads, self.dh))
        self.merge = nn.Linear(d_prime, d_prime, bias=False)
        self.self_lin = nn.Linear(d_prime, d_prime)
        self.leaky = nn.LeakyReLU(0.2)
        nn.init.xavier_uniform_(self.att_src)
        nn.init.xavier_uniform_(self.att_dst)

    def forward(self, src: Tensor, dst: Tensor,
                return_attention: bool = False):
        o, n = src.shape[0], dst.shape[0]
        if o == 0:
            out = self.self_lin(dst)
            att = dst.new_zeros((n, 0, self.heads))
            return (out, att) if return_attention else out
        order = canonical_row_order(src)
        sp = self.w(src[order]).view(o, self.heads, self.dh)
        dp = self.w(dst).view(n, self.heads, self.dh)
        logits = self.leaky((dp * self.att_dst).sum(-1)[:, None, :]
                            + (sp * self.att_src).sum(-1)[None, :, :])  # (N, O, H)
        att = torch.softmax(logits, dim=1)
        msg = torch.einsum("noh,ohd->nhd", att, sp).reshape(n, -1)
        out = self.merge(msg) + self.self_lin(dst)
        if return_attention:
            inverse = torch.argsort(order)
            return out, att[:, inverse, :]
        return out


class GcnLayer(nn.Module):
    """Self-loop mean aggregation with a single shared weight."""

    def __init__(self, d_prime: int):
        super().__init__()
        self.w = nn.Linear(d_prime, d_prime)

    def forward(self, src: Tensor, dst: Tensor) -> Tensor:
        o = src.shape[0]
        if o == 0:
            return self.w(dst)
        pooled = src[canonical_row_order(src)].sum(dim=0)
        return self.w((pooled[None, :] + dst) / (o + 1))


class SageLayer(nn.Module):
    """Mean-of-neighbors aggregation with separate self and neighbor weights."""

    def __init__(self, d_prime: int):
        super().__init__()
        self.w_self = nn.Linear(d_prime, d_prime)
        self.w_nbr = nn.Linear(d_prime, d_prime, bias=False)

    def forward(self, src: Tensor, dst: Tensor) -> Tensor:
        out = self.w_self(dst)
        if src.shape[0] == 0:
            return out
        mean = src[canonical_row_order(src)].sum(dim=0) / src.shape[0]
        return out + self.w_nbr(mean)[None, :]


def _make_layer(cfg: ModelConfig) -> nn.Module:
    if cfg.mp_variant == "gat":
        return GatLayer(cfg.d_prime, cfg.mp_heads)
    if cfg.mp_variant == "gcn":
        return GcnLayer(cfg.d_prime)
    return SageLayer(cfg.d_prime)


class InteractionGraph(nn.Module):
    def __init__(self, cfg: ModelConfig, num_verb_logits: int):
        super().__init__()
        self.project = nn.Linear(cfg.d, cfg.d_prime)   # shared by both node sets
        self.layers = nn.ModuleList(_make_layer(cfg) for _ in range(cfg.mp_layers))
        self.edge_head = nn.Linear(2 * cfg.d_prime, 1)
        self.verb_head = nn.Linear(2 * cfg.d_prime, num_verb_logits)

    def project_nodes(self, instruments: Tensor, targets: Tensor) -> BipartiteGraph:
        return BipartiteGraph(source_nodes=self.project(instruments),
                              dest_nodes=self.project(targets))

    def message_pass(self, graph: BipartiteGraph) -> BipartiteGraph:
        dst = graph.dest_nodes
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            dst = layer(graph.source_nodes, dst)
            if i != last:
                dst = F.relu(dst)
        return BipartiteGraph(source_nodes=graph.source_nodes, dest_nodes=dst)

    def edge_heads(self, graph: BipartiteGraph) -> EdgeSet:
        o, n = graph.n_sources, graph.n_dests
        d_prime = graph.dest_nodes.shape[-1]
        feats = torch.cat([
            graph.source_nodes.unsqueeze(1).expand(o, n, d_prime),
            graph.dest_nodes.unsqueeze(0).expand(o, n, d_prime),
        ], dim=-1).reshape(o * n, 2 * d_prime)
        return EdgeSet(edge_features=feats,
                       edge_scores=self.edge_head(feats).squeeze(-1),
                       verb_logits=self.verb_head(feats),
                       n_sources=o, n_dests=n)

    def forward(self, instruments: Tensor, targets: Tensor) -> EdgeSet:
        return self.edge_heads(self.message_pass(self.project_nodes(instruments, targets)))
