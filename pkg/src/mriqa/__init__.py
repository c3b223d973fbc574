"""Mask-reference full-reference image quality assessment."""
from .agcs import GridSpec, SampledGrid, make_grid_spec, sample_grids
from .backbone import Backbone, BackboneConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .head import HeadConfig, apply_fmm
from .imaging import Image, Patch, block_mae, flip, load_png, random_crop_pair, save_png
from .maskgen import MaskA, MaskB, MaskedImage, diff_mask, random_ratio_mask
from .metrics import plcc, srcc
from .model import MRNet, QualityModel
from .pipeline import cross_eval, evaluate, predict_tta, prepare_sample, train
from .rng import Rng

__version__ = "0.1.0"
