import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wearbeam.beamformer import (
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
from wearbeam.dataset import ImpulseResponse
from wearbeam.errors import SingularCovarianceError, STFTConfigError
from wearbeam.sim import interference_covariance
from wearbeam.stft import STFTConfig, long_term_psd, stft
from wearbeam.synth import default_body_model, speech_like_clip, synth_brtf

from oracles import mvdr_kkt, mvdr_two_mic_closed_form, random_hpd


def one_bin(a, r):
    return mvdr_weights(SteeringSpectrum(np.asarray(a)[None, :]),
                        CovarianceSpectrum(np.asarray(r)[None]))


# -- truncation and steering ---------------------------------------------------


def test_truncate_32ms_at_48k():
    ir = ImpulseResponse(np.ones(24000), 48000)
    out = truncate_ir(ir, 0.032)
    assert len(out) == 1536
    np.testing.assert_array_equal(out.samples[:1382], 1.0)
    assert 0 < out.samples[-1] < 0.01
    assert np.all(np.diff(out.samples[-154:]) < 0)


def test_truncate_full_length_is_identity_before_fade():
    x = np.random.default_rng(1).standard_normal(1000)
    out = truncate_ir(ImpulseResponse(x, 1000), 1.0)
    np.testing.assert_array_equal(out.samples[:900], x[:900])


def test_truncate_errors():
    ir = ImpulseResponse(np.ones(100), 1000)
    with pytest.raises(ValueError, match="longer than"):
        truncate_ir(ir, 0.2)
    with pytest.raises(ValueError):
        truncate_ir(ir, 0.0)


def test_steering_unit_impulse_is_all_ones():
    a = steering_from_irs([ImpulseResponse([1.0, 0, 0, 0], 16000)], 8)
    np.testing.assert_allclose(a.vectors, 1.0)


def test_steering_delay_phase():
    k, n = 3, 64
    h2 = np.zeros(16)
    h2[k] = 1
    a = steering_from_irs([ImpulseResponse(np.eye(16)[0], 16000),
                           ImpulseResponse(h2, 16000)], n)
    f = np.arange(n // 2 + 1)
    np.testing.assert_allclose(np.abs(a.vectors[:, 1]), np.abs(a.vectors[:, 0]))
    np.testing.assert_allclose(a.vectors[:, 1] / a.vectors[:, 0], np.exp(-2j * np.pi * f * k / n),
                               atol=1e-12)


def test_steering_bin_count_and_checks():
    irs = [ImpulseResponse(np.random.default_rng(i).standard_normal(1536), 48000, i)
           for i in range(4)]
    a = steering_from_irs(irs, 1536)
    assert a.vectors.shape == (769, 4)
    assert np.all(np.isfinite(a.vectors))
    assert a.mic_ids == (0, 1, 2, 3)
    with pytest.raises(ValueError, match="shorter"):
        steering_from_irs(irs, 1024)
    with pytest.raises(ValueError, match="share"):
        steering_from_irs([irs[0], ImpulseResponse(np.ones(10), 48000)], 2048)


# -- covariance and loading ------------------------------------------------------


def test_covariance_of_repeated_frame():
    v = np.array([1 + 2j, -0.5j, 3.0])
    frames = np.broadcast_to(v[:, None, None], (3, 10, 2))
    r = noise_covariance(frames).matrices
    for k in range(2):
        np.testing.assert_allclose(r[k], np.outer(v, v.conj()), atol=1e-12)


def test_covariance_of_white_noise_is_identity():
    rng = np.random.default_rng(5)
    m, t = 4, 20000
    frames = (rng.standard_normal((m, t, 3)) + 1j * rng.standard_normal((m, t, 3))) / np.sqrt(2)
    r = noise_covariance(frames).matrices
    assert np.max(np.abs(r - np.eye(m))) < 0.1


def test_covariance_rank_warning():
    with pytest.warns(UserWarning, match="rank deficient"):
        cov = noise_covariance(np.ones((8, 1, 5), dtype=complex))
    assert cov.rank_deficient


def test_covariance_must_be_hermitian():
    with pytest.raises(ValueError, match="Hermitian"):
        CovarianceSpectrum(np.array([[[1.0, 1.0], [0.0, 1.0]]]))


def test_loading_ten_db_below_unit_power():
    cov = apply_loading(CovarianceSpectrum(np.zeros((3, 2, 2))), 1.0, 10.0)
    np.testing.assert_allclose(cov.loading, 0.1)
    np.testing.assert_allclose(cov.matrices, 0.1 * np.eye(2)[None].repeat(3, 0))
    assert np.all(cov.min_eigenvalues() > 0)


def test_zero_speech_power_leaves_r_unchanged():
    r = random_hpd(np.random.default_rng(0), 3)[None]
    cov = apply_loading(CovarianceSpectrum(r), 0.0)
    np.testing.assert_array_equal(cov.matrices, r)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**16), d1=st.floats(0, 10), d2=st.floats(0, 10))
def test_loading_monotone_in_min_eigenvalue(seed, d1, d2):
    rng = np.random.default_rng(seed)
    b = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
    cov = CovarianceSpectrum((b @ b.conj().T)[None])  # rank 2, PSD
    lo, hi = sorted((d1, d2))
    e_lo = apply_loading(cov, lo, 0.0).min_eigenvalues()[0]
    e_hi = apply_loading(cov, hi, 0.0).min_eigenvalues()[0]
    assert e_hi >= e_lo - 1e-12


def test_loading_power_modes():
    a = SteeringSpectrum(np.array([[1.0, 1.0], [2.0, 0.0]]))
    np.testing.assert_allclose(loading_power(a, [1.0, 3.0]), [1.0, 6.0])
    np.testing.assert_allclose(loading_power(a, [1.0, 3.0], "broadband"), [3.5, 3.5])
    with pytest.raises(ValueError):
        loading_power(a, [1.0, 1.0], "median")


# -- weights ----------------------------------------------------------------------


def test_single_mic_weight_is_one():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((5, 1)) + 1j * rng.standard_normal((5, 1))
    r = rng.uniform(0.5, 2.0, (5, 1, 1))
    w = mvdr_weights(SteeringSpectrum(a), CovarianceSpectrum(r)).weights
    np.testing.assert_allclose(w, 1.0, atol=1e-14)


def test_identity_covariance_gives_matched_filter():
    a = np.array([0.5 - 1j, 2.0, 1j])
    w = one_bin(a, np.eye(3)).weights[0]
    ratio = w / a
    np.testing.assert_allclose(ratio, ratio[0], atol=1e-14)
    assert np.vdot(w, a) == pytest.approx(a[0], abs=1e-14)


def test_two_mic_example_against_independent_oracles():
    r = np.array([[2.0, 0.5], [0.5, 1.0]], dtype=complex)
    a = np.array([1.0, 0.8 * np.exp(-1j * np.pi / 4)])
    w = one_bin(a, r).weights[0]
    assert np.max(np.abs(w - mvdr_kkt(a, r))) < 1e-9
    assert np.max(np.abs(w - mvdr_two_mic_closed_form(a, r))) < 1e-9


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 8))
def test_matches_kkt_oracle(seed, m):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    r = random_hpd(rng, m)
    w = one_bin(a, r).weights[0]
    np.testing.assert_allclose(w, mvdr_kkt(a, r), atol=1e-9 * np.max(np.abs(w)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(2, 8))
def test_distortionless_and_optimal(seed, m):
    rng = np.random.default_rng(seed)
    n_bins = 6
    a = rng.standard_normal((n_bins, m)) + 1j * rng.standard_normal((n_bins, m))
    r = np.stack([random_hpd(rng, m) for _ in range(n_bins)])
    w = mvdr_weights(SteeringSpectrum(a), CovarianceSpectrum(r)).weights
    resp = np.einsum("km,km->k", np.conj(w), a)
    assert np.all(np.abs(resp - a[:, 0]) <= 1e-9 * np.abs(a[:, 0]))
    for k in range(n_bins):
        cost = np.real(np.vdot(w[k], r[k] @ w[k]))
        # feasible perturbations: V = W + u with u^H A = 0
        for _ in range(100):
            u = rng.standard_normal(m) + 1j * rng.standard_normal(m)
            u -= a[k] * np.vdot(a[k], u) / np.vdot(a[k], a[k])
            v = w[k] + u
            assert abs(np.vdot(v, a[k]) - a[k, 0]) < 1e-9 * (1 + abs(a[k, 0]))
            assert cost <= np.real(np.vdot(v, r[k] @ v)) * (1 + 1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(2, 6),
       mag=st.floats(1e-3, 1e3), phase=st.floats(0, 2 * np.pi))
def test_scale_equivariance(seed, m, mag, phase):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((3, m)) + 1j * rng.standard_normal((3, m))
    r = np.stack([random_hpd(rng, m) for _ in range(3)])
    c = mag * np.exp(1j * phase)
    w1 = mvdr_weights(SteeringSpectrum(a), CovarianceSpectrum(r)).weights
    w2 = mvdr_weights(SteeringSpectrum(c * a), CovarianceSpectrum(r)).weights
    np.testing.assert_allclose(w2, w1, rtol=1e-8, atol=1e-10 * np.max(np.abs(w1)))


def test_singular_covariance_reports_bins():
    r = np.stack([np.eye(2), np.zeros((2, 2)), np.eye(2), np.ones((2, 2))]).astype(complex)
    with pytest.raises(SingularCovarianceError) as info:
        mvdr_weights(SteeringSpectrum(np.ones((4, 2))), CovarianceSpectrum(r))
    assert tuple(info.value.bins) == (1, 3)


def test_zero_steering_bins_flagged():
    a = np.array([[1.0, 1.0], [0.0, 0.0], [0.5, 1j]])
    w = mvdr_weights(SteeringSpectrum(a), CovarianceSpectrum(np.stack([np.eye(2)] * 3)))
    assert w.zero_steering_bins.tolist() == [False, True, False]
    np.testing.assert_array_equal(w.weights[1], 0)
    assert np.all(np.isfinite(w.weights))


def test_shape_mismatch():
    with pytest.raises(ValueError, match="do not match"):
        mvdr_weights(SteeringSpectrum(np.ones((3, 2))), CovarianceSpectrum(np.stack([np.eye(3)] * 3)))


def test_weights_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    w = BeamformerWeights(rng.standard_normal((5, 3)) + 1j * rng.standard_normal((5, 3)),
                          (4, 1, 7), np.array([0, 1, 0, 0, 1], bool), STFTConfig(8, 4))
    w.save(tmp_path / "w.json")
    back = BeamformerWeights.load(tmp_path / "w.json")
    np.testing.assert_array_equal(back.weights, w.weights)
    assert back.mic_ids == (4, 1, 7)
    assert back.stft == STFTConfig(8, 4)
    np.testing.assert_array_equal(back.zero_steering_bins, w.zero_steering_bins)


# -- filtering --------------------------------------------------------------------


def test_select_channel_passes_reference_through():
    cfg = STFTConfig(512, 256)
    x = np.random.default_rng(4).standard_normal((3, 4000))
    w = BeamformerWeights.select_channel(cfg.n_bins, 3)
    y = beamform(w, x, cfg)
    np.testing.assert_allclose(y, x[0], atol=1e-10)


def test_beamform_shape_checks():
    w = BeamformerWeights.select_channel(257, 2)
    with pytest.raises(ValueError):
        beamform(w, np.zeros((3, 100)), STFTConfig(512, 256))
    with pytest.raises(STFTConfigError):
        beamform(w, np.zeros((2, 100)), STFTConfig(1024, 512))


def test_distortionless_passthrough():
    """A target shaped per bin by the steering vector comes out as at mic 1."""
    cfg = STFTConfig(512, 256)
    rng = np.random.default_rng(8)
    a = rng.standard_normal((cfg.n_bins, 4)) + 1j * rng.standard_normal((cfg.n_bins, 4))
    a[0] = a[0].real
    a[-1] = a[-1].real
    s = stft(rng.standard_normal(6000), cfg)  # frames, bins
    r = np.stack([random_hpd(rng, 4) for _ in range(cfg.n_bins)])
    w = mvdr_weights(SteeringSpectrum(a), CovarianceSpectrum(r), cfg)
    y_spec = np.einsum("fm,mtf->tf", np.conj(w.weights), a.T[:, None, :] * s[None])
    np.testing.assert_allclose(y_spec, a[None, :, 0] * s, atol=1e-9 * np.max(np.abs(s)))


def _two_source_scene(offset_db):
    model = default_body_model(16000)
    mics = list(range(1, 7))
    cfg = STFTConfig(1024, 512)
    rng = np.random.default_rng(2024)
    target, interf = (speech_like_clip(4.0, 16000, rng) for _ in range(2))
    steer = []
    for az in (0, 120):
        irs = [truncate_ir(synth_brtf(model, m, az)) for m in mics]
        steer.append(steering_from_irs(irs, cfg.fft_size))
    irs_i = [synth_brtf(model, m, 120).samples for m in mics]
    noise_x = np.stack([np.convolve(h, interf) for h in irs_i])
    cov = interference_covariance([steer[1]], [long_term_psd(interf, cfg)], len(mics))
    cov = apply_loading(cov, loading_power(steer[0], long_term_psd(target, cfg)), offset_db)
    w = mvdr_weights(steer[0], cov, cfg)
    return noise_x, beamform(w, noise_x, cfg)


def test_two_source_interferer_attenuated():
    noise_x, y = _two_source_scene(offset_db=10.0)
    attenuation = 10 * np.log10(np.sum(noise_x[0] ** 2) / np.sum(y ** 2))
    assert attenuation >= 20.0
