"""Adaptive subnet selection and open-vocabulary inference for edge vision models."""

__version__ = "0.1.0"

from .exceptions import EdgeVFMError, ProtocolError, TransportError, ValidationError
from .search_space import (
    SearchSpace,
    SubnetConfig,
    default_space,
    enumerate_space,
    representative_subnets,
    validate,
)
from .cost_model import CalibrationTable, CostReport, calibrate, count_flops, count_params, estimate
from .embedding_engine import EmbeddingBank, SegmentationMap, classify, cosine, miou, segment
from .selector import AccuracyProfile, SelectionRequest, SelectionResult, select_subnet, sweep_alpha
from .sim_runtime import SceneTimeline, SimConfig, SimReport, run_sim, tradeoff_curve

__all__ = [
    "AccuracyProfile",
    "CalibrationTable",
    "CostReport",
    "EdgeVFMError",
    "EmbeddingBank",
    "ProtocolError",
    "SceneTimeline",
    "SearchSpace",
    "SegmentationMap",
    "SelectionRequest",
    "SelectionResult",
    "SimConfig",
    "SimReport",
    "SubnetConfig",
    "TransportError",
    "ValidationError",
    "calibrate",
    "classify",
    "cosine",
    "count_flops",
    "count_params",
    "default_space",
    "enumerate_space",
    "estimate",
    "miou",
    "representative_subnets",
    "run_sim",
    "segment",
    "select_subnet",
    "sweep_alpha",
    "tradeoff_curve",
    "validate",
]
