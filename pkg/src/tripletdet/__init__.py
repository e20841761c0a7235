"""Surgical action triplet detection: localized instruments paired with
verb and anatomical target via class tokens and a bipartite interaction graph."""

from .config import EvalConfig, ModelConfig, RunConfig, StageConfig, load_config
from .datatypes import (BoxXYXY, Detection, FrameAnnotation, GtInstance,
                        TripletDetection)
from .decoder import decode_edge_set, decode_frame, predict_frames
from .errors import (ConfigError, DataError, EvaluationError, NumericError,
                     SchemaError, TripletDetError, VocabularyError)
from .evaluation import EvalReport, evaluate, evaluate_frames, iou
from .graph import BipartiteGraph, EdgeSet, InteractionGraph
from .mcit import ClassTokenTransformer, McitOutput
from .model import ModelOutput, TripletDetector, images_to_tensor
from .supervision import (LossBundle, PseudoInstanceLabel, class_weights,
                          graph_losses, pseudo_labels, target_bce)
from .synthetic import SynthSpec, SyntheticDataset, generate_synthetic_dataset, write_dataset
from .training import TrainData, Trainer, load_checkpoint, model_from_checkpoint, train_two_stage
from .vocab import INVALID_TRIPLET, LabelVocabulary, toy_vocabulary

__version__ = "0.1.0"

__all__ = [
    "BipartiteGraph", "BoxXYXY", "ClassTokenTransformer", "ConfigError",
    "DataError", "Detection", "EdgeSet", "EvalConfig", "EvalReport",
    "EvaluationError", "FrameAnnotation", "GtInstance", "INVALID_TRIPLET",
    "InteractionGraph", "LabelVocabulary", "LossBundle", "McitOutput",
    "ModelConfig", "ModelOutput", "NumericError", "PseudoInstanceLabel",
    "RunConfig", "SchemaError", "StageConfig", "SynthSpec", "SyntheticDataset",
    "TrainData", "Trainer", "TripletDetError", "TripletDetection",
    "TripletDetector", "VocabularyError", "class_weights", "decode_edge_set",
    "decode_frame", "evaluate", "evaluate_frames", "generate_synthetic_dataset",
    "graph_losses", "images_to_tensor", "iou", "load_checkpoint", "load_config",
    "model_from_checkpoint", "predict_frames", "pseudo_labels", "target_bce",
    "toy_vocabulary", "train_two_stage", "write_dataset",
]
