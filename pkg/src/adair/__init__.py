"""adair: all-in-one image restoration via frequency mining and modulation.

A self-contained numpy implementation: tensor/autodiff core, 2D FFT and
adaptive frequency masks, the transposed-attention restoration backbone
with decoder-side frequency learning blocks, synthetic degradations, a
deterministic trainer, and residual-spectrum analysis.
"""

from .analyze import CurveReport, residual_spectrum_curve
from .blocks import (
    ChannelAttention,
    FrequencyLearningBlock,
    FrequencyMining,
    FrequencyModulation,
    Gdfn,
    HighToLow,
    LowToHigh,
    MaskGenerator,
    Mdta,
    TransformerBlock,
)
from .degrade import (
    DegradationSpec,
    SamplePair,
    add_gaussian_noise,
    build_dataset,
    compose_degradations,
    make_pair,
    make_test_image,
    make_training_batch,
    synth_blur,
    synth_haze,
    synth_lowlight,
    synth_rain,
)
from .network import (
    AdaIRModel,
    ModelConfig,
    build_model,
    count_parameters,
    desk_config,
    load_checkpoint,
    paper_config,
    save_checkpoint,
)
from .ppm import read_image, write_image
from .spectral import (
    ComplexSpectrum,
    FrequencyMask,
    build_frequency_masks,
    dft2_oracle,
    fft2,
    fftshift2,
    ifft2,
    ifftshift2,
    mask_apply_invert,
)
from .tensor import Tensor, backward, finite_diff_check, no_grad
from .training import Adam, Metrics, TrainConfig, l1_loss, psnr, ssim, train_loop

__version__ = "0.1.0"

__all__ = [
    "AdaIRModel",
    "Adam",
    "ChannelAttention",
    "ComplexSpectrum",
    "CurveReport",
    "DegradationSpec",
    "FrequencyLearningBlock",
    "FrequencyMask",
    "FrequencyMining",
    "FrequencyModulation",
    "Gdfn",
    "HighToLow",
    "LowToHigh",
    "MaskGenerator",
    "Mdta",
    "Metrics",
    "ModelConfig",
    "SamplePair",
    "Tensor",
    "TrainConfig",
    "TransformerBlock",
    "add_gaussian_noise",
    "backward",
    "build_dataset",
    "build_frequency_masks",
    "build_model",
    "compose_degradations",
    "count_parameters",
    "desk_config",
    "dft2_oracle",
    "fft2",
    "fftshift2",
    "finite_diff_check",
    "ifft2",
    "ifftshift2",
    "l1_loss",
    "load_checkpoint",
    "make_pair",
    "make_test_image",
    "make_training_batch",
    "mask_apply_invert",
    "no_grad",
    "paper_config",
    "psnr",
    "read_image",
    "residual_spectrum_curve",
    "save_checkpoint",
    "ssim",
    "synth_blur",
    "synth_haze",
    "synth_lowlight",
    "synth_rain",
    "train_loop",
    "write_image",
]
