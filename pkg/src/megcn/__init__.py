"""Mutual-excitation graph convolution for two-entity skeleton interactions."""
from .autodiff import Param, Tensor, backward, finite_diff_grad, no_grad
from .config import ModelConfig, RunConfig, TrainConfig
from .data import SkeletonSequence, load_sequence, save_sequence, synth_generate
from .graph import SkeletonGraph, preset, static_adjacency
from .layers import MeGcLayer, RunningNorm, layer_forward
from .model import MeGCN, activation_scores, build_variant, load_checkpoint, save_checkpoint
from .train import Schedule, lr_at_epoch, train

__version__ = "0.1.0"
