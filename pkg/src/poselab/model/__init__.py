from .checkpoint import CHECKPOINT_VERSION, CheckpointError, load_checkpoint, save_checkpoint
from .config import (
    DEFAULT_STAGES, FAST_STAGES, BackboneConfig, HeadConfig, InceptionConfig, param_layout,
    parameter_count,
)
from .network import (
    PoseModel, backbone_forward, fc_head_forward, feature_similarity, inception_block_forward,
    init_params, lstm_cell_step, lstm_head_forward,
)

__all__ = [
    "BackboneConfig", "CHECKPOINT_VERSION", "CheckpointError", "DEFAULT_STAGES", "FAST_STAGES",
    "HeadConfig", "InceptionConfig", "PoseModel", "backbone_forward", "fc_head_forward",
    "feature_similarity", "inception_block_forward", "init_params", "load_checkpoint",
    "lstm_cell_step", "lstm_head_forward", "param_layout", "parameter_count", "save_checkpoint",
]
