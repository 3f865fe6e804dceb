"""Numpy implementation of EADNet, a lightweight real-time segmentation network.

The network is built from MMRFC blocks (four pointwise / asymmetric dilated
branches with square, wide and tall receptive fields) and ships with an
analytical cost model, a receptive-field calculator, a small reverse-mode
autodiff engine for desk-scale training, and PPM/PGM plumbing.
"""
from .autograd import Param, ParamStore, Var, no_grad
from .cost import (CostReport, analyze_graph, mmrfc_branch_params, mmrfc_flops, mmrfc_fusion_params,
                   mmrfc_total_params, plain_conv3x3_params, receptive_field_report)
from .graph import GraphSpec, LayerSpec
from .metrics import ConfusionMatrix, accumulate, miou
from .mmrfc import BranchSpec, MmrfcBlock, MmrfcConfig, branch_receptive_field, branch_specs, build_mmrfc
from .network import (EadnetConfig, Model, build_eadnet, eadnet_graph, forward, load_model, load_weights,
                      predict, save_weights)
from .optim import AdamState, PolySchedule, adam_step, poly_lr
from .synth import LabeledSample, synth_dataset
from .tensor import ConvParams, ShapeError, conv2d, conv2d_naive

__version__ = "0.1.0"
