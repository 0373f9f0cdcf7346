"""Toy conditional material prior: latent codec, v-prediction denoiser, CFG and DDIM."""
from .codec import decode, decode_pair, encode, encode_pair
from .denoiser import Denoiser, DenoiserParams
from .sampling import ddim_sample, denoise_cfg, predict_materials
from .schedule import COSINE, NoiseSchedule, add_noise, predict_eps, predict_x0, v_target
from .training import (TrainConfig, TrainingDivergedError, TrainResult, Triplet, load_triplets,
                       train_denoiser, write_loss_curve)

__all__ = [
    "COSINE", "Denoiser", "DenoiserParams", "NoiseSchedule", "TrainConfig", "TrainResult",
    "TrainingDivergedError", "Triplet", "add_noise", "ddim_sample", "decode", "decode_pair",
    "denoise_cfg", "encode", "encode_pair", "load_triplets", "predict_eps", "predict_materials",
    "predict_x0", "train_denoiser", "v_target", "write_loss_curve",
]
