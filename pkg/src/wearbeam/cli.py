"""Command-line interface.

Subcommands: ``fetch``, ``estimate-ir``, ``analyze``, ``simulate`` and
``synth-model``. Exit codes:

    0  success
    1  I/O failure (missing or unreadable file, audio decode error)
    2  validation failure (bad arguments, config or manifest)
    3  network failure
    4  checksum mismatch
    5  numerical failure (e.g. singular covariance)

``WEARBEAM_CACHE`` sets the default dataset directory for ``fetch`` and
the default manifest (``$WEARBEAM_CACHE/manifest.json``) elsewhere.
"""

import argparse
import json
import logging
import os
import sys
import warnings
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis as an
from .audio import read_wav, write_wav
from .beamformer import DEFAULT_LOADING_DB, DEFAULT_WINDOW_S
from .dataset import (
    MeasurementKey,
    fetch_dataset,
    free_space_ir,
    load_ir,
    load_manifest,
    select_array,
    sync_files,
)
from .errors import (
    AudioDecodeError,
    ChecksumMismatchError,
    KeyNotFoundError,
    MissingAudioError,
    NetworkError,
    SingularCovarianceError,
    WearbeamError,
)
from .reporting import header_lines, metadata, write_csv, write_json
from .sim import ClipPool, ManifestIRSource, TrialConfig, results_csv, run_trials
from .stft import STFTConfig
from .sweep import SweepSpec, average_repeats, deconvolve
from .synth import SyntheticBodyModel, default_body_model, render_dataset

EXIT_OK, EXIT_IO, EXIT_VALIDATION, EXIT_NETWORK, EXIT_CHECKSUM, EXIT_NUMERICAL = range(6)

log = logging.getLogger("wearbeam")


class ConfigError(WearbeamError, ValueError):
    pass


def _cache_dir():
    return Path(os.environ.get("WEARBEAM_CACHE", Path.home() / ".cache" / "wearbeam"))


def _manifest_path(args):
    path = Path(args.manifest) if args.manifest else _cache_dir() / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    return path


def _smoothing(text):
    try:
        value = float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"invalid octave fraction {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError("smoothing must be positive")
    return value


def _id_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ids, got {text!r}") from None


# -- fetch -------------------------------------------------------------------


def cmd_fetch(args):
    dest = Path(args.dest) if args.dest else _cache_dir()
    checksums = json.loads(Path(args.checksums).read_text())
    if not isinstance(checksums, dict) or not checksums:
        raise ConfigError("checksums: expected a non-empty JSON object {path: sha256}")
    downloaded = sync_files(args.archive_url, dest, checksums, timeout=args.timeout)
    manifest = fetch_dataset(args.archive_url, dest, checksums, args.manifest_name,
                             timeout=args.timeout)
    path = dest / args.manifest_name
    print(f"{len(downloaded)} files downloaded")
    print(f"manifest: {path} ({len(manifest)} entries)")
    return path


# -- estimate-ir -------------------------------------------------------------


def cmd_estimate_ir(args):
    rate, data = read_wav(args.recording)
    if args.sample_rate and args.sample_rate != rate:
        warnings.warn(f"recording is {rate} Hz but --sample-rate says {args.sample_rate}; "
                      "using the file rate")
    f_end = args.f_end if args.f_end is not None else rate / 2
    spec = SweepSpec(args.f_start, f_end, args.duration, args.repeats, args.gap, rate)
    recording = data[:, args.channel]
    if recording.size > spec.total_samples + spec.gap_samples + rate:
        warnings.warn("recording is much longer than the sweep sequence; extra samples ignored")
    averaged = average_repeats(recording, spec)
    ir = deconvolve(averaged, spec, args.ir_length)
    peak = np.max(np.abs(ir.samples))
    scale = 1.0 if peak <= 1.0 else 1.0 / peak
    write_wav(args.out, ir.samples * scale, rate, bit_depth=32)
    config = {"spec": spec.__dict__, "ir_length_s": args.ir_length, "channel": args.channel,
              "recording": str(args.recording)}
    write_json(str(args.out) + ".json", {"sweep": spec.__dict__, "ir_length_s": args.ir_length,
                                         "output_scale": scale}, metadata(config))
    print(f"wrote {args.out} ({len(ir)} samples at {rate} Hz)")
    return Path(args.out)


# -- analyze -----------------------------------------------------------------


def _irs_by_angle(manifest, subject, wear_config, mic_id):
    keys = manifest.keys(subject, wear_config, mic_id)
    if not keys:
        raise KeyNotFoundError(
            f"no measurements for subject={subject}, wear_config={wear_config}, mic={mic_id}")
    return {k.source_azimuth_deg: load_ir(manifest, k) for k in keys}


def _fft_size(args, irs):
    n = max(len(ir) for ir in irs)
    return args.fft_size or n


def cmd_analyze(args):
    manifest = load_manifest(_manifest_path(args))
    kind = args.kind
    extra = {}
    if kind == "ild":
        left = args.left or manifest.reference_mic("left")
        right = args.right or manifest.reference_mic("right")
        az = 90 if args.azimuth is None else args.azimuth
        l_ir = load_ir(manifest, MeasurementKey(args.subject, args.wear_config, left, az))
        r_ir = load_ir(manifest, MeasurementKey(args.subject, args.wear_config, right, az))
        n = _fft_size(args, [l_ir, r_ir])
        curve = an.ild(an.transfer_function(l_ir, n), an.transfer_function(r_ir, n),
                       args.smoothing)
        extra = {"left_mic": left, "right_mic": right, "azimuth_deg": az}
    elif kind == "directivity":
        if args.mic is None:
            raise ConfigError("--mic is required for directivity")
        if not manifest.free_space_reference:
            raise KeyNotFoundError("no free-space reference in manifest")
        irs = _irs_by_angle(manifest, args.subject, args.wear_config, args.mic)
        power = an.received_power(irs, free_space_ir(manifest))
        facing = (manifest.microphones[args.mic].facing_azimuth_deg
                  if args.facing is None else args.facing)
        contrast = an.front_back_contrast(power, facing)
        rows = [(az, f"{v:.4f}") for az, v in power.items()]
        payload = {"kind": kind, "mic": args.mic, "facing_azimuth_deg": facing,
                   "front_back_contrast_db": round(contrast, 6),
                   "azimuth_deg": list(power), "value_db": [round(v, 6) for v in power.values()]}
        _emit(args, ("azimuth_deg", "value_db"), rows, payload)
        return Path(args.out)
    elif kind == "shadow":
        if args.mic is None:
            raise ConfigError("--mic is required for shadow")
        irs = _irs_by_angle(manifest, args.subject, args.wear_config, args.mic)
        n = _fft_size(args, irs.values())
        tfs = {az: an.transfer_function(ir, n) for az, ir in irs.items()}
        facing = (manifest.microphones[args.mic].facing_azimuth_deg
                  if args.facing is None else args.facing)
        curve = an.shadow_attenuation(tfs, facing, args.smoothing)
        extra = {"mic": args.mic, "facing_azimuth_deg": facing}
    elif kind == "clothing":
        if args.clothed is None:
            raise ConfigError("--clothed is required for clothing")
        mics = args.mics or select_array(manifest, ["torso_upper", "torso_lower"],
                                         include_ear_refs=False)
        clothed = an.slice_transfer_functions(manifest, args.subject, args.clothed, mics,
                                              args.fft_size)
        bare = an.slice_transfer_functions(manifest, args.subject, args.bare, mics,
                                           args.fft_size)
        curve = an.clothing_attenuation(clothed, bare, mics, args.smoothing)
        extra = {"clothed": args.clothed, "bare": args.bare, "mics": list(mics)}
    else:  # argparse restricts choices
        raise ConfigError(f"unknown analysis kind {kind!r}")
    payload = {"kind": kind, **extra, **an.curve_document(curve)}
    _emit(args, ("frequency_hz", "value_db"), an.curve_rows(curve), payload)
    return Path(args.out)


def _emit(args, columns, rows, payload):
    config = {k: v for k, v in vars(args).items() if k != "func"}
    meta = metadata(config)
    write_csv(args.out, columns, rows, meta)
    write_json(Path(args.out).with_suffix(".json"), payload, meta)
    print(f"wrote {args.out}")


# -- simulate ----------------------------------------------------------------


def _require(doc, key, where):
    if key not in doc:
        raise ConfigError(f"{where}.{key}: required field missing")
    return doc[key]


def build_trial_configs(doc, base_dir, overrides):
    """Turn a simulate config document (plus CLI overrides) into TrialConfigs."""
    if not isinstance(doc, dict):
        raise ConfigError("config: expected a JSON object")
    src = doc.get("ir_source", {"type": "synthetic"})
    kind = src.get("type", "synthetic")
    manifest_override = overrides.get("manifest")
    if manifest_override:
        kind = "manifest"
        src = dict(src, manifest=manifest_override)
    if kind == "synthetic":
        if src.get("model"):
            ir_source = SyntheticBodyModel.load(base_dir / src["model"])
        else:
            ir_source = default_body_model(int(src.get("sample_rate_hz", 16000)))
        table = ir_source
    elif kind == "manifest":
        path = Path(_require(src, "manifest", "ir_source"))
        manifest = load_manifest(path if path.is_absolute() else base_dir / path)
        ir_source = ManifestIRSource(manifest, src.get("subject", "mannequin"),
                                     src.get("wear_config", "bare"))
        table = manifest
    else:
        raise ConfigError(f"ir_source.type: unknown value {kind!r}")

    clips_doc = doc.get("clips", {"type": "synthetic"})
    if clips_doc.get("type", "synthetic") == "synthetic":
        pool = ClipPool.synthetic(int(clips_doc.get("n_clips", 20)),
                                  float(clips_doc.get("duration_s", 10.0)),
                                  ir_source.sample_rate_hz, int(clips_doc.get("seed", 0)))
    elif clips_doc["type"] == "manifest":
        pool = ClipPool.from_manifest(base_dir / _require(clips_doc, "path", "clips"))
    else:
        raise ConfigError(f"clips.type: unknown value {clips_doc['type']!r}")

    stft_doc = dict(doc.get("stft", {}))
    if overrides.get("fft_size"):
        stft_doc["fft_size"] = overrides["fft_size"]
        stft_doc["hop"] = overrides["fft_size"] // 2
    try:
        stft_cfg = STFTConfig(**stft_doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"stft: {exc}") from None

    window_ms = overrides.get("window_ms") or doc.get("ir_window_ms", DEFAULT_WINDOW_S * 1000)
    loading_db = overrides.get("loading_db")
    if loading_db is None:
        loading_db = doc.get("loading_db", DEFAULT_LOADING_DB)

    arrays = doc.get("arrays")
    if overrides.get("array"):
        arrays = [{"label": "custom", "mics": overrides["array"], "include_ear_refs": False}]
    if not arrays:
        raise ConfigError("arrays: at least one array configuration is required")
    configs = []
    for i, arr in enumerate(arrays):
        where = f"arrays[{i}]"
        label = arr.get("label", f"array{i}")
        include = bool(arr.get("include_ear_refs", True))
        if "mics" in arr:
            mic_ids = select_array(table, arr["mics"], include)
        elif "regions" in arr:
            mic_ids = select_array(table, arr["regions"], include)
        elif "first" in arr:
            mic_ids = select_array(table, sorted(table.microphones), include)[: int(arr["first"])]
        else:
            raise ConfigError(f"{where}: one of 'mics', 'regions' or 'first' is required")
        if "limit" in arr:
            mic_ids = mic_ids[: int(arr["limit"])]
        configs.append(TrialConfig(
            label=label, array=tuple(mic_ids), ir_source=ir_source, clips=pool,
            ir_window_s=float(window_ms) / 1000.0, loading_offset_db=float(loading_db),
            loading_mode=doc.get("loading_mode", "per_bin"), stft=stft_cfg,
            duration_s=doc.get("duration_s"),
        ))
    return configs, pool


def cmd_simulate(args):
    config_path = Path(args.config)
    doc = json.loads(config_path.read_text())
    overrides = {"manifest": args.manifest, "array": args.array, "window_ms": args.window_ms,
                 "loading_db": args.loading_db, "fft_size": args.fft_size}
    configs, pool = build_trial_configs(doc, config_path.parent, overrides)
    seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
    n_trials = args.trials if args.trials is not None else int(doc.get("n_trials", 100))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    record = {"config": doc, "overrides": {k: v for k, v in overrides.items() if v is not None},
              "n_trials": n_trials, "corpus_hash": pool.corpus_hash}
    meta = metadata(record, seed)
    all_results, summaries = [], []
    for cfg in configs:
        results, summary = run_trials(cfg, n_trials, seed, workers=args.workers)
        all_results.extend(results)
        summaries.append(summary)
        print(f"{cfg.label}: M={len(cfg.array)} median {summary.median:.2f} dB, "
              f"mean {summary.mean:.2f} dB over {n_trials} trials")
    (out / "results.csv").write_text(results_csv(all_results, header_lines(meta)))
    write_json(out / "results.json", {
        "corpus_hash": pool.corpus_hash,
        "trials": [{"trial_id": r.trial_id, "config": r.config, "target_angle": r.target_azimuth,
                    "interferer_angles": list(r.spec.interferer_azimuths),
                    "clip_ids": list(r.spec.clip_ids),
                    "delta_snr_db": None if r.delta_snr_db is None else round(r.delta_snr_db, 6),
                    "input_snr_db": round(r.input_snr_db, 6), "status": r.status}
                   for r in all_results],
    }, meta)
    cols = ("config", "n_trials", "minimum", "q1", "median", "q3", "maximum", "mean")
    write_csv(out / "summary.csv", cols,
              [[s.config, s.n_trials] + [f"{getattr(s, c):.6f}" for c in cols[2:]]
               for s in summaries], meta)
    write_json(out / "summary.json", {"summaries": [s.to_dict() for s in summaries],
                                      "arrays": {c.label: list(c.array) for c in configs}}, meta)
    return out / "results.csv"


# -- synth-model -------------------------------------------------------------


def cmd_synth_model(args):
    model = default_body_model(args.sample_rate)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "model.json")
    print(f"wrote {out / 'model.json'} ({len(model.mics)} microphones)")
    if args.render:
        wear = tuple(args.wear_configs.split(",")) if args.wear_configs else ("bare",)
        path = render_dataset(model, out, wear_configs=wear)
        print(f"wrote {path}")
    return out / "model.json"


# -- entry point -------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="wearbeam", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"wearbeam {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", help="download and verify a dataset archive")
    p.add_argument("--archive-url", required=True)
    p.add_argument("--dest", help="target directory (default $WEARBEAM_CACHE)")
    p.add_argument("--checksums", required=True, help="JSON object {relative path: sha256}")
    p.add_argument("--manifest-name", default="manifest.json")
    p.add_argument("--timeout", type=float, default=60.0)
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("estimate-ir", help="impulse response from a swept-sine recording")
    p.add_argument("recording")
    p.add_argument("out")
    p.add_argument("--f-start", type=float, default=20.0)
    p.add_argument("--f-end", type=float, default=None, help="default: Nyquist")
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--gap", type=float, default=0.5)
    p.add_argument("--sample-rate", type=int, default=None)
    p.add_argument("--ir-length", type=float, default=0.5, help="seconds")
    p.add_argument("--channel", type=int, default=0)
    p.set_defaults(func=cmd_estimate_ir)

    p = sub.add_parser("analyze", help="transfer-function analyses")
    p.add_argument("--kind", required=True, choices=("ild", "directivity", "shadow", "clothing"))
    p.add_argument("--manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--subject", default="mannequin")
    p.add_argument("--wear-config", default="bare")
    p.add_argument("--mic", type=int)
    p.add_argument("--mics", type=_id_list, help="comma-separated mic ids (clothing)")
    p.add_argument("--left", type=int)
    p.add_argument("--right", type=int)
    p.add_argument("--azimuth", type=int)
    p.add_argument("--facing", type=float)
    p.add_argument("--clothed")
    p.add_argument("--bare", default="bare")
    p.add_argument("--smoothing", type=_smoothing, default=an.DEFAULT_SMOOTHING,
                   help="octave fraction, e.g. 1/3")
    p.add_argument("--fft-size", type=int)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="MVDR beamforming trials")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--manifest")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--array", type=_id_list)
    p.add_argument("--window-ms", type=float)
    p.add_argument("--loading-db", type=float)
    p.add_argument("--fft-size", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("synth-model", help="write the synthetic body model (and a dataset)")
    p.add_argument("--out", required=True)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--render", action="store_true", help="also render WAVs and a manifest")
    p.add_argument("--wear-configs", help="comma-separated, e.g. bare,tshirt")
    p.set_defaults(func=cmd_synth_model)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except NetworkError as exc:
        print(f"network error: {exc}", file=sys.stderr)
        return EXIT_NETWORK
    except ChecksumMismatchError as exc:
        print(f"checksum error: {exc}", file=sys.stderr)
        return EXIT_CHECKSUM
    except SingularCovarianceError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FileNotFoundError, MissingAudioError, AudioDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (WearbeamError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
