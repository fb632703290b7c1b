import json

import numpy as np
import pytest

from wearbeam.audio import read_wav, write_wav
from wearbeam.cli import (
    EXIT_CHECKSUM,
    EXIT_IO,
    EXIT_NETWORK,
    EXIT_OK,
    EXIT_VALIDATION,
    main,
)
from wearbeam.reporting import read_csv
from wearbeam.sweep import SweepSpec, generate_sweep


def values(path):
    return np.array([float(r["value_db"]) for r in read_csv(path)])


# -- fetch ---------------------------------------------------------------------


def test_fetch_then_cached(archive, tmp_path, capsys):
    url, checksums, _ = archive
    sums = tmp_path / "sums.json"
    sums.write_text(json.dumps(checksums))
    argv = ["fetch", "--archive-url", url, "--dest", str(tmp_path / "d"), "--checksums", str(sums)]
    assert main(argv) == EXIT_OK
    assert f"{len(checksums)} files downloaded" in capsys.readouterr().out
    assert main(argv) == EXIT_OK
    out = capsys.readouterr().out
    assert "0 files downloaded" in out
    assert "(4 entries)" in out


def test_fetch_unreachable_host(tmp_path):
    sums = tmp_path / "sums.json"
    sums.write_text(json.dumps({"manifest.json": "0" * 64}))
    argv = ["fetch", "--archive-url", "http://127.0.0.1:9/", "--dest", str(tmp_path / "d"),
            "--checksums", str(sums), "--timeout", "2"]
    assert main(argv) == EXIT_NETWORK


def test_fetch_checksum_mismatch(archive, tmp_path):
    url, checksums, _ = archive
    bad = dict(checksums, **{"audio/az000.wav": "f" * 64})
    sums = tmp_path / "sums.json"
    sums.write_text(json.dumps(bad))
    argv = ["fetch", "--archive-url", url, "--dest", str(tmp_path / "d"), "--checksums", str(sums)]
    assert main(argv) == EXIT_CHECKSUM


def test_fetch_uses_cache_env(archive, tmp_path, monkeypatch):
    url, checksums, _ = archive
    monkeypatch.setenv("WEARBEAM_CACHE", str(tmp_path / "cache"))
    sums = tmp_path / "sums.json"
    sums.write_text(json.dumps(checksums))
    assert main(["fetch", "--archive-url", url, "--checksums", str(sums)]) == EXIT_OK
    assert (tmp_path / "cache" / "manifest.json").is_file()


# -- analyze -------------------------------------------------------------------


def test_clothing_bare_vs_bare_is_zero(synthetic_dataset, tmp_path):
    path, _ = synthetic_dataset
    out = tmp_path / "clothing.csv"
    assert main(["analyze", "--kind", "clothing", "--manifest", str(path), "--clothed", "bare",
                 "--out", str(out)]) == EXIT_OK
    np.testing.assert_allclose(values(out), 0.0, atol=1e-12)
    doc = json.loads(out.with_suffix(".json").read_text())
    assert doc["meta"]["tool"] == "wearbeam"
    assert out.read_text().startswith("# tool=wearbeam")


def test_clothing_coat_attenuates(synthetic_dataset, tmp_path):
    path, _ = synthetic_dataset
    out = tmp_path / "coat.csv"
    assert main(["analyze", "--kind", "clothing", "--manifest", str(path), "--clothed",
                 "wool_coat", "--out", str(out)]) == EXIT_OK
    v = values(out)
    assert v[-1] > 8.0 and v[0] < 0.5
    assert np.all(np.diff(v) >= -1e-9)


def test_ild_frontal_source_is_zero(synthetic_dataset, tmp_path):
    path, _ = synthetic_dataset
    out = tmp_path / "ild.csv"
    assert main(["analyze", "--kind", "ild", "--manifest", str(path), "--azimuth", "0",
                 "--out", str(out)]) == EXIT_OK
    np.testing.assert_allclose(values(out), 0.0, atol=1e-6)


def test_ild_lateral_source_rises_with_frequency(synthetic_dataset, tmp_path):
    path, _ = synthetic_dataset
    out = tmp_path / "ild90.csv"
    assert main(["analyze", "--kind", "ild", "--manifest", str(path), "--out", str(out),
                 "--smoothing", "1/3"]) == EXIT_OK
    v = values(out)
    assert v[-1] > v[0] and v[-1] > 5.0


def test_directivity_and_shadow(synthetic_dataset, tmp_path):
    path, model = synthetic_dataset
    out = tmp_path / "dir.csv"
    assert main(["analyze", "--kind", "directivity", "--manifest", str(path), "--mic", "3",
                 "--out", str(out)]) == EXIT_OK
    rows = read_csv(out)
    assert len(rows) == 24
    doc = json.loads(out.with_suffix(".json").read_text())
    assert doc["front_back_contrast_db"] > 3.0
    out = tmp_path / "shadow.csv"
    assert main(["analyze", "--kind", "shadow", "--manifest", str(path), "--mic", "3",
                 "--out", str(out)]) == EXIT_OK
    assert values(out)[-1] == pytest.approx(model.mic(3).shadow_depth_db, abs=0.5)


def test_directivity_without_free_space_reference(tiny_dataset, tmp_path, capsys):
    code = main(["analyze", "--kind", "directivity", "--manifest", str(tiny_dataset),
                 "--subject", "human", "--mic", "1", "--out", str(tmp_path / "x.csv")])
    assert code == EXIT_VALIDATION
    assert "no free-space reference in manifest" in capsys.readouterr().err


def test_analyze_missing_slice_and_manifest(synthetic_dataset, tmp_path, capsys):
    path, _ = synthetic_dataset
    code = main(["analyze", "--kind", "shadow", "--manifest", str(path), "--subject", "human",
                 "--mic", "3", "--out", str(tmp_path / "x.csv")])
    assert code == EXIT_VALIDATION
    assert "subject=human" in capsys.readouterr().err
    code = main(["analyze", "--kind", "ild", "--manifest", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "x.csv")])
    assert code == EXIT_IO


# -- simulate ------------------------------------------------------------------


SIM_CONFIG = {
    "seed": 3,
    "n_trials": 3,
    "ir_source": {"type": "synthetic", "sample_rate_hz": 16000},
    "clips": {"type": "synthetic", "n_clips": 8, "duration_s": 1.0},
    "stft": {"fft_size": 1024, "hop": 512},
    "arrays": [{"label": "two", "first": 2}, {"label": "four", "first": 4}],
}


def test_simulate_is_byte_reproducible(tmp_path, capsys):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps(SIM_CONFIG))
    for run, workers in (("a", "1"), ("b", "3")):
        assert main(["simulate", str(cfg), "--out", str(tmp_path / run),
                     "--workers", workers]) == EXIT_OK
    for name in ("results.csv", "summary.csv", "summary.json", "results.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = read_csv(tmp_path / "a" / "results.csv")
    assert [r["config"] for r in rows] == ["four"] * 3 + ["two"] * 3
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["arrays"] == {"two": [1, 2], "four": [1, 2, 3, 4]}
    assert "median" in capsys.readouterr().out


def test_simulate_overrides_and_errors(tmp_path):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps(SIM_CONFIG))
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "o"), "--array", "1,5",
                 "--trials", "1", "--seed", "9"]) == EXIT_OK
    rows = read_csv(tmp_path / "o" / "results.csv")
    assert len(rows) == 1 and rows[0]["config"] == "custom"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**SIM_CONFIG, "arrays": [{"label": "x"}]}))
    assert main(["simulate", str(bad), "--out", str(tmp_path / "o2")]) == EXIT_VALIDATION
    bad.write_text(json.dumps({**SIM_CONFIG, "stft": {"fft_size": 1024, "hop": 700}}))
    assert main(["simulate", str(bad), "--out", str(tmp_path / "o3")]) == EXIT_VALIDATION
    bad.write_text("{")
    assert main(["simulate", str(bad), "--out", str(tmp_path / "o4")]) == EXIT_VALIDATION


def test_simulate_on_rendered_manifest(synthetic_dataset, tmp_path):
    path, _ = synthetic_dataset
    cfg = tmp_path / "sim.json"
    doc = {**SIM_CONFIG, "n_trials": 2,
           "arrays": [{"label": "torso", "regions": ["torso_upper", "torso_lower"], "limit": 6}]}
    cfg.write_text(json.dumps(doc))
    assert main(["simulate", str(cfg), "--manifest", str(path), "--out", str(tmp_path / "o")]) \
        == EXIT_OK
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["arrays"]["torso"][:2] == [1, 2]
    assert len(summary["arrays"]["torso"]) == 6


# -- estimate-ir and synth-model ---------------------------------------------------


def test_estimate_ir_recovers_delay(tmp_path):
    spec = SweepSpec(20.0, 24000.0, 0.5, 3, 0.1, 48000)
    x = generate_sweep(spec)
    rec = 0.5 * np.concatenate([np.zeros(37), x])[:x.size]
    write_wav(tmp_path / "rec.wav", rec[:, None], 48000, 32)
    out = tmp_path / "ir.wav"
    assert main(["estimate-ir", str(tmp_path / "rec.wav"), str(out), "--duration", "0.5",
                 "--gap", "0.1", "--ir-length", "0.05"]) == EXIT_OK
    rate, ir = read_wav(out)
    assert rate == 48000 and ir.shape == (2400, 1)
    assert np.argmax(np.abs(ir[:, 0])) == 37
    assert ir[37, 0] == pytest.approx(0.5, abs=1e-3)


def test_estimate_ir_bad_arguments(tmp_path):
    write_wav(tmp_path / "rec.wav", np.zeros((100, 1)), 48000, 16)
    code = main(["estimate-ir", str(tmp_path / "rec.wav"), str(tmp_path / "ir.wav"),
                 "--duration", "0.5"])
    assert code == EXIT_VALIDATION
    assert main(["estimate-ir", str(tmp_path / "absent.wav"), str(tmp_path / "ir.wav")]) == EXIT_IO


def test_synth_model_render(tmp_path):
    out = tmp_path / "model"
    assert main(["synth-model", "--out", str(out), "--render", "--wear-configs",
                 "bare,tshirt"]) == EXIT_OK
    assert (out / "model.json").is_file()
    doc = json.loads((out / "manifest.json").read_text())
    assert doc["wear_configs"][:2] == ["bare", "tshirt"]

