"""Wearable microphone array acoustics and MVDR beamforming simulation."""

__version__ = "0.1.0"

from .analysis import (
    BandCurve,
    TransferFunction,
    clothing_attenuation,
    front_back_contrast,
    ild,
    received_power,
    shadow_attenuation,
    slice_transfer_functions,
    transfer_function,
)
from .beamformer import (
    BeamformerWeights,
    CovarianceSpectrum,
    SteeringSpectrum,
    apply_loading,
    beamform,
    loading_power,
    mvdr_weights,
    noise_covariance,
    steering_from_irs,
    truncate_ir,
)
from .dataset import (
    DatasetManifest,
    ImpulseResponse,
    MeasurementKey,
    MicrophonePosition,
    fetch_dataset,
    free_space_ir,
    load_ir,
    load_manifest,
    select_array,
)
from .sim import (
    ClipPool,
    TrialConfig,
    TrialResult,
    TrialSpec,
    delta_snr,
    desired_signal,
    interference_covariance,
    run_trials,
    simulate_mixture,
)
from .stft import STFTConfig, istft, long_term_psd, stft
from .sweep import SweepSpec, average_repeats, deconvolve, generate_sweep, in_band_error
from .synth import (
    SyntheticBodyModel,
    default_body_model,
    render_dataset,
    speech_like_clip,
    synth_brtf,
)
