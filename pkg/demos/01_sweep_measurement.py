"""
Measuring an impulse response with a linear sweep
=================================================

Play three sweeps, record them through an unknown system, average the
repeats and divide out the sweep spectrum.
"""

import numpy as np
from scipy import signal

from wearbeam import SweepSpec, average_repeats, deconvolve, generate_sweep, in_band_error

# a short protocol keeps the demo quick; the default is 10 s sweeps
spec = SweepSpec(f_start_hz=20.0, f_end_hz=24000.0, duration_s=2.0, repeats=3, gap_s=0.5)
excitation = generate_sweep(spec)
print(f"excitation: {excitation.size} samples ({excitation.size / spec.sample_rate_hz:.1f} s)")

# the "unknown" system: a band-pass FIR plus a 2 ms delay
h = signal.firwin(64, [300.0, 9000.0], fs=spec.sample_rate_hz, pass_zero=False)
h = np.concatenate([np.zeros(96), h - h.mean()])

# record with a little noise in the room
rng = np.random.default_rng(0)
recording = signal.lfilter(h, 1.0, excitation)
recording += 1e-3 * rng.standard_normal(recording.size)

# averaging the three repeats lowers the noise floor by about 4.8 dB
averaged = average_repeats(recording, spec)
ir = deconvolve(averaged, spec, out_len_s=0.05)

peak = int(np.argmax(np.abs(ir.samples)))
print(f"estimated IR: {len(ir)} samples, peak at sample {peak}")
print(f"in-band relative error against the true filter: {in_band_error(ir.samples, h, spec):.2e}")
