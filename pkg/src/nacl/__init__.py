"""Neighbour-aware calibration losses for semantic segmentation."""

from ._backend import BACKEND
from .losses import (LossConfig, LossResult, PriorSpec, ce_loss, compute_loss, ecp_loss, focal_loss,
                     ls_loss, mbls_loss, nacl_loss, default_loss, soft_dice_loss, svls_decomposition,
                     svls_loss)
from .metrics import CalibConfig, cece, dice, ece, hausdorff, select_eval_pixels, sum_rank
from .numerics import InvalidInputError, log_softmax, one_hot, softmax
from .priors import Kernel, gaussian_kernel, mean_kernel, prior_map, svls_smooth

__version__ = "0.1.0"
