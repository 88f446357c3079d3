"""Arbitrary-precision integer GEMM and convolution on 1-bit planes."""

from apbit.apconv import ChannelMajorTensor, ConvShape, PadStrategy, apconv, conv_weights, select_padding
from apbit.apconv import from_channel_major, im_traffic, to_channel_major
from apbit.apmm import TileConfig, apmm, apmm_planewise, pack_output, plan_traffic
from apbit.apnn import LayerSpec, ModelGraph, measure_fusion, run_model
from apbit.bitplane import BitPlaneTensor, Encoding, combine, decompose, reconstruct
from apbit.bmma import Case, bmma_tile, dot1, select_operator
from apbit.epilogue import BatchNorm, Epilogue, Pool, Quantize, fused_epilogue
from apbit.tuner import ExecPath, SwitchProfile, autotune, choose_path, estimate

__version__ = "0.1.0"

__all__ = [
    "BatchNorm", "BitPlaneTensor", "Case", "ChannelMajorTensor", "ConvShape", "Encoding", "Epilogue",
    "ExecPath", "LayerSpec", "ModelGraph", "PadStrategy", "Pool", "Quantize", "SwitchProfile", "TileConfig",
    "apconv", "apmm", "apmm_planewise", "autotune", "bmma_tile", "choose_path", "combine", "conv_weights",
    "decompose", "dot1", "estimate", "from_channel_major", "fused_epilogue", "im_traffic", "measure_fusion",
    "pack_output", "plan_traffic", "reconstruct", "run_model", "select_operator", "select_padding",
    "to_channel_major",
]
