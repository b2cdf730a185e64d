"""From-scratch convolutional network engine."""

from .adam import AdamState, NonFiniteGradientError, adam_step
from .checkpoint import CheckpointError, load_checkpoint, load_for_resume, model_checksum, save_checkpoint
from .layers import (
    BCE_EPS,
    ShapeError,
    bce_loss,
    conv2d_backward,
    conv2d_forward,
    conv2d_loop,
    dense_forward,
    maxpool2x2,
    maxpool2x2_backward,
    relu,
    sigmoid,
)
from .model import (
    INPUT_SIZE,
    REFERENCE_FLATTEN,
    REFERENCE_LAYOUT,
    REFERENCE_TRACE,
    LayerParams,
    Model,
    StaleCacheError,
    build_model,
    build_reference_model,
    model_forward,
    model_forward_batch,
    predict_fast,
    reference_param_count,
)
