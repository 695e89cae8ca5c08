"""Streaming video depth estimation at desk scale."""
from .backbone import DepthModel, ModelConfig, variant_config
from .hybrid import HybridConfig, HybridModel
from .streaming import Session, bench, open_session, process_frame
from .temporal import TemporalConfig

__version__ = "0.1.0"

__all__ = [
    "DepthModel",
    "ModelConfig",
    "variant_config",
    "HybridConfig",
    "HybridModel",
    "TemporalConfig",
    "Session",
    "open_session",
    "process_frame",
    "bench",
]
