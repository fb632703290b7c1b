"""
Suppressing an interferer with an MVDR beamformer
=================================================

One talker in front, one to the side, six microphones on the body. Build
the weights from the known responses and filter the mixture.
"""

import numpy as np

from wearbeam import (
    STFTConfig,
    apply_loading,
    beamform,
    default_body_model,
    delta_snr,
    desired_signal,
    interference_covariance,
    loading_power,
    long_term_psd,
    mvdr_weights,
    speech_like_clip,
    steering_from_irs,
    synth_brtf,
    truncate_ir,
)

model = default_body_model(16000)
mics = [1, 2, 3, 4, 5, 6]  # mic 1 is the left ear: the output matches what it hears
cfg = STFTConfig(fft_size=1024, hop=512)
rng = np.random.default_rng(1)
target, interferer = speech_like_clip(4.0, 16000, rng), speech_like_clip(4.0, 16000, rng)

# full responses mix the scene, 32 ms windows drive the weights
full = {az: [synth_brtf(model, m, az) for m in mics] for az in (0, 120)}
steer = {az: steering_from_irs([truncate_ir(h) for h in irs], cfg.fft_size)
         for az, irs in full.items()}
x = sum(np.stack([np.convolve(h.samples, clip) for h in full[az]])
        for az, clip in ((0, target), (120, interferer)))

# noise covariance from the interferer's response and spectrum, loaded 10 dB below speech
cov = interference_covariance([steer[120]], [long_term_psd(interferer, cfg)], len(mics))
cov = apply_loading(cov, loading_power(steer[0], long_term_psd(target, cfg)), offset_db=10.0)
weights = mvdr_weights(steer[0], cov, cfg)
y = beamform(weights, x, cfg)

d = desired_signal(target, truncate_ir(full[0][0]))
print(f"SNR improvement over the left-ear microphone: {delta_snr(d, x[0], y):.1f} dB")
