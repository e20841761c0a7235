"""Scene feature extraction and per-instrument feature fusion.

The extractor runs a small CNN over the frame, reduces channels with a 1x1
convolution, adds fixed 2D sinusoidal position features and refines the
flattened grid with a short stack of self-attention blocks. Instrument
features are ROI-pooled from that grid and fused with box geometry and a
learned class embedding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Tuple

import torch
from torch import Tensor, nn
from torchvision.ops import roi_align

from .config import ModelConfig
from .datatypes import Detection
from .layers import TransformerBlock, check_finite, mlp, sinusoidal_encoding_2d


def _gn(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(math.gcd(8, channels), channels)


class ToyBackbone(nn.Module):
    """Four stride-2 conv blocks (stride 16 overall). GroupNorm keeps the
    forward pass independent of batch composition."""

    out_channels = 128

    def __init__(self):
        super().__init__()
        widths = (3, 16, 32, 64, self.out_channels)
        blocks = []
        for cin, cout in zip(widths[:-1], widths[1:]):
            blocks += [nn.Conv2d(cin, cout, 3, stride=2, padding=1), _gn(cout), nn.ReLU()]
        self.blocks = nn.Sequential(*blocks)

    def forward(self, x: Tensor) -> Tensor:
        return self.blocks(x)


class _BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1)
        self.norm1 = _gn(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.norm2 = _gn(cout)
        self.skip = (nn.Identity() if stride == 1 and cin == cout
                     else nn.Sequential(nn.Conv2d(cin, cout, 1, stride=stride), _gn(cout)))
        self.act = nn.ReLU()

    def forward(self, x: Tensor) -> Tensor:
        y = self.act(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        return self.act(y + self.skip(x))


class ResidualBackbone(nn.Module):
    """Stride-32 residual CNN: stem (/4), four two-block stages with strides
    (1, 2, 2, 2), then a 1x1 expansion to 2048 channels."""

    out_channels = 2048

    def __init__(self):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(3, 64, 7, stride=2, padding=3), _gn(64), nn.ReLU(),
            nn.MaxPool2d(3, stride=2, padding=1),
        )
        widths = (64, 64, 128, 256, 512)
        strides = (1, 2, 2, 2)
        stages = []
        for cin, cout, s in zip(widths[:-1], widths[1:], strides):
            stages += [_BasicBlock(cin, cout, s), _BasicBlock(cout, cout, 1)]
        self.stages = nn.Sequential(*stages)
        self.expand = nn.Sequential(nn.Conv2d(512, self.out_channels, 1),
                                    _gn(self.out_channels), nn.ReLU())

    def forward(self, x: Tensor) -> Tensor:
        return self.expand(self.stages(self.stem(x)))


@dataclass
class SceneFeatures:
    """Flattened per-frame feature grid. ``grid`` is (B, h*w, d)."""

    grid: Tensor
    h: int
    w: int

    @property
    def d(self) -> int:
        return self.grid.shape[-1]

    def frame(self, i: int) -> Tensor:
        return self.grid[i]

    def as_map(self) -> Tensor:
        """(B, d, h, w) view for convolution-style consumers."""
        b = self.grid.shape[0]
        return self.grid.transpose(1, 2).reshape(b, self.d, self.h, self.w)


class SceneFeatureExtractor(nn.Module):
    """CNN -> 1x1 reduction -> position features -> self-attention encoder."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.cnn = ToyBackbone() if cfg.backbone == "toy" else ResidualBackbone()
        self.reduce = nn.Conv2d(self.cnn.out_channels, cfg.d, 1)
        self.encoder = nn.ModuleList(
            TransformerBlock(cfg.d, cfg.heads, cfg.norm_first) for _ in range(cfg.b_l))
        self._pe_cache: Dict[Tuple[int, int], Tensor] = {}

    def _pe(self, h: int, w: int, like: Tensor) -> Tensor:
        key = (h, w)
        pe = self._pe_cache.get(key)
        if pe is None or pe.dtype != like.dtype or pe.device != like.device:
            pe = sinusoidal_encoding_2d(h, w, self.cfg.d, dtype=like.dtype).to(like.device)
            self._pe_cache[key] = pe
        return pe

    def forward(self, images: Tensor) -> SceneFeatures:
        feats = check_finite(self.cnn(images), "backbone")
        feats = self.reduce(feats)                       # (B, d, h, w)
        b, d, h, w = feats.shape
        x = feats.flatten(2).transpose(1, 2)             # (B, hw, d)
        x = x + self._pe(h, w, x)
        for i, block in enumerate(self.encoder):
            x = check_finite(block(x), f"base_encoder.{i}")
        return SceneFeatures(grid=x, h=h, w=w)


def grid_boxes(boxes: Tensor, h: int, w: int) -> Tensor:
    """Map normalized xyxy boxes to feature-grid coordinates.

    Boxes that would collapse below one grid cell are widened to a one-cell
    minimum around their center (shifted to stay inside the grid), so pooling
    always sees nonzero support.
    """
    if boxes.numel() == 0:
        return boxes.reshape(0, 4)
    x1, y1, x2, y2 = (boxes[:, 0] * w, boxes[:, 1] * h,
                      boxes[:, 2] * w, boxes[:, 3] * h)
    bw = (x2 - x1).clamp(min=1.0, max=float(w))
    bh = (y2 - y1).clamp(min=1.0, max=float(h))
    cx = torch.clamp((x1 + x2) / 2, min=bw / 2, max=w - bw / 2)
    cy = torch.clamp((y1 + y2) / 2, min=bh / 2, max=h - bh / 2)
    return torch.stack([cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2], dim=1)


def roi_features(scene: SceneFeatures, boxes_per_frame: List[Tensor],
                 roi_grid: int = 7) -> List[Tensor]:
    """Pool one feature vector per box: bilinear ROI-align to a small grid,
    then spatial mean. Returns one (O_i, d) tensor per frame; O_i may be 0."""
    if len(boxes_per_frame) != scene.grid.shape[0]:
        raise ValueError("one box tensor per frame required")
    fmap = scene.as_map()
    rois = [grid_boxes(b.to(fmap.dtype), scene.h, scene.w) for b in boxes_per_frame]
    pooled = roi_align(fmap, rois, output_size=(roi_grid, roi_grid),
                       spatial_scale=1.0, sampling_ratio=2, aligned=True)
    vecs = pooled.mean(dim=(2, 3))
    counts = [r.shape[0] for r in rois]
    return list(vecs.split(counts))


class InstrumentFusion(nn.Module):
    """Fuse ROI appearance with box geometry and an instrument-class embedding."""

    def __init__(self, cfg: ModelConfig, n_instruments: int):
        super().__init__()
        d, d_cls = cfg.d, cfg.class_embed_dim
        self.class_embed = nn.Embedding(n_instruments, d_cls)
        self.box_mlp = mlp([4, d, d - d_cls])
        self.fuse = mlp([2 * d, d, d])

    def forward(self, roi: Tensor, boxes: Tensor, class_ids: Tensor) -> Tensor:
        geom = torch.cat([self.box_mlp(boxes.to(roi.dtype)),
                          self.class_embed(class_ids)], dim=-1)
        return self.fuse(torch.cat([geom, roi], dim=-1))


def detection_tensors(detections: List[Detection], device, dtype) -> Tuple[Tensor, Tensor]:
    """(O, 4) normalized boxes and (O,) instrument-class ids."""
    if not detections:
        return (torch.zeros((0, 4), device=device, dtype=dtype),
                torch.zeros((0,), device=device, dtype=torch.long))
    boxes = torch.tensor([d.box.as_list() for d in detections], device=device, dtype=dtype)
    ids = torch.tensor([d.instrument_id for d in detections], device=device, dtype=torch.long)
    return boxes, ids
