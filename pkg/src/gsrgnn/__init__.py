"""Memory-lean deep graph networks: a grouped reversible baseline and a group-sparse residual network."""

from .errors import (ConfigError, FormatError, GsrError, NumericalError, ResourceError,
                     SequencingError, ShapeError, VerificationError)
from .graph import CsrGraph, SynthConfig, from_edge_list, generate_synthetic, spmm, spmm_sparse
from .gsrnet import GsrLayer, GsrNet, gsr_backward_layer, gsr_forward_layer
from .revnet import RevLayer, RevNet, rev_backward, rev_forward_layer, rev_inverse_layer
from .tensor import SparseActivation, gs_topk, precision

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "CsrGraph", "FormatError", "GsrError", "GsrLayer", "GsrNet", "NumericalError",
    "ResourceError", "RevLayer", "RevNet", "SequencingError", "ShapeError", "SparseActivation",
    "SynthConfig", "VerificationError", "from_edge_list", "generate_synthetic", "gs_topk",
    "gsr_backward_layer", "gsr_forward_layer", "precision", "rev_backward", "rev_forward_layer",
    "rev_inverse_layer", "spmm", "spmm_sparse",
]
