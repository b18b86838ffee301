"""Bilateral-grid pixel-adaptive MLP image enhancement."""

from .grid import (BilateralGrid, GridGeometry, SubgridSet, decompose, lift,
                   recompose, slice, slice_backward, slice_decomposed,
                   split_frac, trilinear_weights, unroll_grid)
from .guidance import GuidanceNet, guidance_forward, init_guidance_net
from .imaging import (downsample, load_image, pixel_shuffle, pixel_unshuffle,
                      save_image)
from .estimator import BpamEnhancer
from .io_formats import load_grids, load_tensors, save_grids, save_tensors
from .metrics import MetricReport, delta_e, psnr, report, ssim_metric
from .optim import (AdamState, LossWeights, Schedule, adam_step, cosine_lr,
                    gradcheck, mse_loss, ssim_loss, total_loss, train_toy)
from .producer import ProducerNet, init_identity_grids, init_producer_net, produce_grids
from .transform import (PipelineConfig, apply_affine, enhance,
                        forward_with_cache, mlp_stage1, mlp_stage2,
                        pipeline_backward)

__version__ = "0.1.0"
