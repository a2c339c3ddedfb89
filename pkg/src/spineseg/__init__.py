"""Selective state-space segmentation stack, desk scale.

Layers: a dense-tensor engine with a reverse-mode tape (`tensor`, `conv`),
state-space scan kernels (`ssm`), the gated residual Mamba block (`mamba`),
a learnable anatomical shape prior (`shape_prior`), the U-shaped network
(`network`), training utilities and a synthetic phantom generator
(`training`, `phantom`), plus file formats and a CLI (`volio`,
`checkpoint`, `cli`).
"""

from .tensor import (Tape, Tensor, as_tensor, backward, concat, elementwise,
                     grad_check, instance_norm, layer_norm, leaky_relu,
                     linear, normalize, permute, reshape, sigmoid, silu,
                     slice_axis, softplus, split, tsum, tmean, texp, tlog,
                     upsample_nearest, downsample_stride)
from .conv import conv3d, depthwise_conv1d
from .ssm import (DiscreteSSM, SSMParams, apply_global_conv, build_conv_kernel,
                  discretize_zoh, init_ssm_params, linear_recurrence,
                  scan_chunked, scan_sequential, selective_scan)
from .mamba import (MambaBlockParams, MambaInnerParams, ResBlockParams,
                    flatten_volume, init_mamba_block, mamba_block,
                    residual_block, unflatten_volume)
from .shape_prior import (ShapePrior, VSPParams, init_shape_prior,
                          init_vsp_params, vsp_forward)
from .network import (NetworkConfig, SegNetwork, build_network, forward,
                      mini_config)
from .phantom import VolumeSample, generate_phantom
from .training import (TrainConfig, TrainState, combined_loss,
                       cross_entropy_loss, dice_loss, dice_metric,
                       dice_scores, evaluate, kfold_split, predict_labels,
                       sgd_step, train_network)
from .volio import VolumeData, read_volume, write_volume
from .checkpoint import load_checkpoint, save_checkpoint

__version__ = "0.1.0"
