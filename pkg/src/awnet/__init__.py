"""AW-convolution: attention maps shaped like convolution weights.

Numpy reference implementation with a tape-based autodiff engine, loop
oracles, analytic profiling of ResNet/MobileNet variants and a small
training harness.
"""
from .autodiff import Parameter, Tape, grad_check
from .awconv import AttentionConfig, AwConv2d, attentional_weights, aw_conv2d, expand_c1
from .errors import (AwnetError, BuildError, DivergenceError, FormatError, ShapeError,
                     UsageError)
from .models import build_arch, build_mobilenet, build_resnet, build_tiny_resnet, instantiate
from .profile import count_flops, count_params, profile

__version__ = "0.1.0"

__all__ = [
    "AttentionConfig", "AwConv2d", "AwnetError", "BuildError", "DivergenceError", "FormatError",
    "Parameter", "ShapeError", "Tape", "UsageError", "attentional_weights", "aw_conv2d",
    "build_arch", "build_mobilenet", "build_resnet", "build_tiny_resnet", "count_flops",
    "count_params", "expand_c1", "grad_check", "instantiate", "profile",
]
