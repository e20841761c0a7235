"""Full triplet recognizer: backbone + fusion + class-token transformer + graph."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional

import torch
from torch import Tensor, nn

from .backbone import (InstrumentFusion, SceneFeatureExtractor, SceneFeatures,
                       detection_tensors, roi_features)
from .config import ModelConfig
from .datatypes import Detection
from .errors import ConfigError
from .graph import EdgeSet, InteractionGraph
from .mcit import ClassTokenTransformer, McitOutput
from .vocab import LabelVocabulary


@dataclass
class ModelOutput:
    scene: SceneFeatures
    instrument_features: List[Tensor]   # per frame, (O_i, d)
    mcit: McitOutput
    edge_sets: Optional[List[EdgeSet]]  # None when the graph stage is skipped


class TripletDetector(nn.Module):
    def __init__(self, cfg: ModelConfig, vocab: LabelVocabulary):
        super().__init__()
        n_tokens = cfg.n_tokens or vocab.num_targets
        if n_tokens != vocab.num_targets:
            raise ConfigError(
                f"n_tokens={n_tokens} must equal the number of target classes "
                f"({vocab.num_targets}); presence supervision is per target class")
        self.cfg = cfg
        self.vocab = vocab
        self.extractor = SceneFeatureExtractor(cfg)
        self.fusion = InstrumentFusion(cfg, vocab.num_instruments)
        self.mcit = ClassTokenTransformer(cfg, n_tokens)
        self.graph = InteractionGraph(cfg, vocab.num_verb_logits)

    def fuse_instruments(self, scene: SceneFeatures,
                         detections: List[List[Detection]]) -> List[Tensor]:
        device = scene.grid.device
        dtype = scene.grid.dtype
        per_frame = [detection_tensors(d, device, dtype) for d in detections]
        boxes = [b for b, _ in per_frame]
        rois = roi_features(scene, boxes, self.cfg.roi_grid)
        # Fusion is row-wise; run all frames through one call.
        flat = self.fusion(torch.cat(rois), torch.cat(boxes),
                           torch.cat([ids for _, ids in per_frame]))
        return list(flat.split([b.shape[0] for b in boxes]))

    def target_features(self, mcit_out: McitOutput, frame: int) -> Tensor:
        if self.cfg.ig_target_source == "input":
            return self.mcit.tokens
        return mcit_out.output_tokens[frame]

    def forward(self, images: Tensor, detections: List[List[Detection]],
                run_graph: bool = True) -> ModelOutput:
        if images.shape[0] != len(detections):
            raise ValueError("one detection list per image required")
        scene = self.extractor(images)
        instruments = self.fuse_instruments(scene, detections)
        mcit_out = self.mcit(scene, instruments)
        edge_sets = None
        if run_graph:
            edge_sets = [self.graph(instruments[b], self.target_features(mcit_out, b))
                         for b in range(images.shape[0])]
        return ModelOutput(scene=scene, instrument_features=instruments,
                           mcit=mcit_out, edge_sets=edge_sets)

    def param_groups(self) -> Dict[str, List[nn.Parameter]]:
        """Named groups for per-part learning rates."""
        return {
            "backbone": list(self.extractor.cnn.parameters())
                        + list(self.extractor.reduce.parameters())
                        + list(self.fusion.parameters()),
            "base": list(self.extractor.encoder.parameters()),
            "mcit": list(self.mcit.parameters()),
            "ig": list(self.graph.parameters()),
        }


def images_to_tensor(images, device=None, dtype=torch.float32) -> Tensor:
    """uint8 (B, H, W, 3) array -> float (B, 3, H, W) in [0, 1]."""
    t = torch.as_tensor(images, device=device)
    if t.ndim == 3:
        t = t.unsqueeze(0)
    return t.permute(0, 3, 1, 2).to(dtype) / 255.0
