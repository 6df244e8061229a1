"""Compressed-sensing channel estimation with an importance generator."""

from .images import ChannelImage, channels_to_images, normalize, denormalize
from .metrics import psnr, ssim, quality_metrics, batch_quality
from .model import CSNet, SensingNetwork, ImportanceGenerator, Decoder, kl_upper_bound
from .training import (EstimatorBundle, TrainingDiverged, UntrainedEstimator, estimate_channel,
                       evaluate_estimator, make_dataset, train_estimator)
