"""
How much do extra microphones help?
===================================

Random scenes with one target and five interferers, placed on the
24-angle grid, scored for arrays of growing size.
"""

from wearbeam import ClipPool, STFTConfig, TrialConfig, default_body_model, run_trials

model = default_body_model(16000)
clips = ClipPool.synthetic(n_clips=20, duration_s=4.0, sample_rate_hz=16000, seed=1)
print(f"clip pool {clips.corpus_hash[:12]}, {len(clips)} clips")

for m in (2, 4, 8, 16):
    cfg = TrialConfig(f"M{m}", model.mic_ids[:m], model, clips, stft=STFTConfig(1024, 512))
    _, s = run_trials(cfg, n_trials=20, master_seed=7)
    print(f"M={m:2d}: median {s.median:5.2f} dB  (quartiles {s.q1:5.2f} .. {s.q3:5.2f})")
