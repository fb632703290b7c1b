import http.server
import json
import os
import threading
from functools import partial
from pathlib import Path

import numpy as np
import pytest

from wearbeam.audio import write_wav
from wearbeam.dataset import MicrophonePosition, build_manifest, save_manifest, sha256_file

_CRITERIA = []


@pytest.fixture
def record_criterion():
    """Register a pass/fail line for the acceptance report."""

    def record(number, description, passed, detail=""):
        _CRITERIA.append((number, description, passed, detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, description, passed, detail in sorted(_CRITERIA, key=lambda c: c[0]):
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[passed]
        line = f"[{status}] {number:>2}. {description}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def make_tiny_dataset(root, n_samples=480, rate=48000, azimuths=(0,), bit_depth=24):
    """Two ear-canal mics with deterministic pseudo-random responses."""
    root = Path(root)
    (root / "audio").mkdir(parents=True, exist_ok=True)
    mics = [MicrophonePosition(1, "ear_canal", 90.0, "left"),
            MicrophonePosition(2, "ear_canal", 270.0, "right")]
    entries = []
    gen = np.random.default_rng(5)
    for az in azimuths:
        data = 0.5 * gen.uniform(-1, 1, size=(n_samples, 2))
        rel = f"audio/az{az:03d}.wav"
        write_wav(root / rel, data, rate, bit_depth)
        for ch, m in enumerate(mics):
            entries.append({"subject": "human", "wear_config": "bare", "mic_id": m.id,
                            "source_azimuth_deg": az, "file": rel, "channel": ch})
    manifest = build_manifest(root, mics, entries, sample_rate_hz=rate, bit_depth=bit_depth,
                              name="tiny")
    path = root / "manifest.json"
    save_manifest(manifest, path)
    return path


@pytest.fixture
def tiny_dataset(tmp_path):
    return make_tiny_dataset(tmp_path / "tiny")


@pytest.fixture(scope="session")
def synthetic_dataset(tmp_path_factory):
    from wearbeam.synth import default_body_model, render_dataset

    root = tmp_path_factory.mktemp("synthetic")
    model = default_body_model(16000)
    path = render_dataset(model, root, wear_configs=("bare", "tshirt", "wool_coat"))
    return path, model


class QuietHandler(http.server.SimpleHTTPRequestHandler):
    requests = []

    def log_message(self, *args):
        pass

    def do_GET(self):
        type(self).requests.append(self.path)
        super().do_GET()


@pytest.fixture
def archive(tmp_path):
    """A synthetic archive served over HTTP from a temporary directory."""
    src = make_tiny_dataset(tmp_path / "archive", azimuths=(0, 15))
    root = src.parent
    checksums = {str(p.relative_to(root)): sha256_file(p)
                 for p in root.rglob("*") if p.is_file()}
    QuietHandler.requests = []
    handler = partial(QuietHandler, directory=str(root))
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    url = f"http://127.0.0.1:{server.server_address[1]}/"
    yield url, checksums, root
    server.shutdown()
    server.server_close()
