"""Data model, manifest format and fetch client for wearable IR datasets.

A manifest is a JSON document listing every measurement as a
``(subject, wear_config, mic_id, source_azimuth_deg)`` key mapped to a WAV
file, a channel inside it and the file's SHA-256 digest. Paths are relative
to the manifest's directory.

Manifest schema (``format_version`` 1)::

    {
      "format_version": 1,
      "name": "...",
      "sample_rate_hz": 48000,
      "bit_depth": 24,
      "source_distance_m": null,
      "wear_configs": ["bare", "tshirt", ...],
      "microphones": [
        {"id": 1, "region": "ear_canal", "facing_azimuth_deg": 90.0,
         "reference_ear": "left"}, ...],
      "entries": [
        {"subject": "human", "wear_config": "bare", "mic_id": 1,
         "source_azimuth_deg": 0, "file": "audio/x.wav", "channel": 0,
         "sha256": "..."}, ...],
      "free_space_reference": [ <entries, same shape> ]
    }

Azimuths are degrees counter-clockwise from the front of the wearer, so 90
is the wearer's left.
"""

import hashlib
import json
import logging
import os
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from filelock import FileLock

from .audio import read_wav
from .errors import (
    ChecksumMismatchError,
    KeyNotFoundError,
    KeyValidationError,
    ManifestError,
    MissingAudioError,
    NetworkError,
    SelectionError,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
AZIMUTH_STEP_DEG = 15
AZIMUTHS_DEG = tuple(range(0, 360, AZIMUTH_STEP_DEG))

REGIONS = (
    "ear_canal",
    "bte_shell",
    "eyeglasses",
    "torso_upper",
    "torso_lower",
    "shoulder",
    "head_other",
    "accessory_headphones",
    "accessory_cap",
    "accessory_hardhat",
    "accessory_brim40",
    "accessory_brim60",
)
SUBJECTS = ("human", "mannequin")
GARMENTS = (
    "bare",
    "tshirt",
    "dress_shirt",
    "sweatshirt",
    "pullover",
    "wool_coat",
    "leather_jacket",
)
FREE_SPACE = "free_space"


@dataclass(frozen=True)
class MicrophonePosition:
    id: int
    region: str
    facing_azimuth_deg: float
    reference_ear: Optional[str] = None  # "left", "right" or None

    def __post_init__(self):
        if not 1 <= self.id <= 160:
            raise ManifestError(f"microphone id {self.id} outside 1..160")
        if self.region not in REGIONS:
            raise ManifestError(f"microphone {self.id}: unknown region {self.region!r}")
        if not 0.0 <= self.facing_azimuth_deg < 360.0:
            raise ManifestError(f"microphone {self.id}: facing azimuth must be in [0, 360)")
        if self.reference_ear not in (None, "left", "right"):
            raise ManifestError(f"microphone {self.id}: reference_ear must be left/right/null")
        if self.reference_ear is not None and self.region != "ear_canal":
            raise ManifestError(f"microphone {self.id}: ear references must be ear_canal mics")


def _valid_wear_config(value):
    return value in GARMENTS or value == FREE_SPACE or (
        value.startswith("accessory:") and len(value) > len("accessory:")
    )


@dataclass(frozen=True, order=True)
class MeasurementKey:
    subject: str
    wear_config: str
    mic_id: int
    source_azimuth_deg: int

    def __post_init__(self):
        if self.subject not in SUBJECTS:
            raise KeyValidationError(f"unknown subject {self.subject!r}")
        if not _valid_wear_config(self.wear_config):
            raise KeyValidationError(f"unknown wear configuration {self.wear_config!r}")
        az = self.source_azimuth_deg
        if isinstance(az, float):
            if not az.is_integer():
                raise KeyValidationError(f"azimuth {az} is not on the 15 degree grid")
            object.__setattr__(self, "source_azimuth_deg", int(az))
            az = int(az)
        if az not in AZIMUTHS_DEG:
            raise KeyValidationError(
                f"azimuth {az} is not one of the 24 source angles (multiples of 15 in [0, 360))"
            )


@dataclass(frozen=True, eq=False)
class ImpulseResponse:
    """One sampled acoustic response ``a[n]`` at a single microphone."""

    samples: np.ndarray
    sample_rate_hz: int
    mic_id: int = 0

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("impulse response must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(samples)):
            raise ValueError("impulse response contains non-finite samples")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self):
        return self.samples.size / self.sample_rate_hz

    def __eq__(self, other):
        if not isinstance(other, ImpulseResponse):
            return NotImplemented
        return (
            self.sample_rate_hz == other.sample_rate_hz
            and self.mic_id == other.mic_id
            and np.array_equal(self.samples, other.samples)
        )

    __hash__ = None


@dataclass(frozen=True)
class ManifestEntry:
    key: MeasurementKey
    file: str
    channel: int
    sha256: str


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    entries: Mapping[MeasurementKey, ManifestEntry]
    microphones: Mapping[int, MicrophonePosition]
    free_space_reference: Mapping[MeasurementKey, ManifestEntry] = field(default_factory=dict)
    sample_rate_hz: int = 48000
    bit_depth: int = 24
    wear_configs: tuple = GARMENTS
    source_distance_m: Optional[float] = None
    name: str = ""

    def __len__(self):
        return len(self.entries)

    def keys(self, subject=None, wear_config=None, mic_id=None):
        """Sorted entry keys, optionally filtered."""
        out = []
        for key in self.entries:
            if subject is not None and key.subject != subject:
                continue
            if wear_config is not None and key.wear_config != wear_config:
                continue
            if mic_id is not None and key.mic_id != mic_id:
                continue
            out.append(key)
        return sorted(out)

    def azimuths(self, subject, wear_config, mic_id):
        return sorted(k.source_azimuth_deg for k in self.keys(subject, wear_config, mic_id))

    def reference_mic(self, side):
        for mic in self.microphones.values():
            if mic.reference_ear == side:
                return mic.id
        raise SelectionError(f"manifest has no {side} ear-canal reference microphone")

    def to_dict(self):
        def entry_dict(e):
            return {
                "subject": e.key.subject,
                "wear_config": e.key.wear_config,
                "mic_id": e.key.mic_id,
                "source_azimuth_deg": e.key.source_azimuth_deg,
                "file": e.file,
                "channel": e.channel,
                "sha256": e.sha256,
            }

        return {
            "format_version": FORMAT_VERSION,
            "name": self.name,
            "sample_rate_hz": self.sample_rate_hz,
            "bit_depth": self.bit_depth,
            "source_distance_m": self.source_distance_m,
            "wear_configs": list(self.wear_configs),
            "microphones": [
                {
                    "id": m.id,
                    "region": m.region,
                    "facing_azimuth_deg": m.facing_azimuth_deg,
                    "reference_ear": m.reference_ear,
                }
                for m in sorted(self.microphones.values(), key=lambda m: m.id)
            ],
            "entries": [entry_dict(self.entries[k]) for k in sorted(self.entries)],
            "free_space_reference": [
                entry_dict(self.free_space_reference[k]) for k in sorted(self.free_space_reference)
            ],
        }


def sha256_file(path, chunk_size=1 << 20):
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(chunk_size), b""):
            digest.update(block)
    return digest.hexdigest()


def _parse_entry(raw, free_space=False):
    try:
        if free_space:
            # free-space rows are keyed like body rows but carry no body
            key = MeasurementKey(
                raw.get("subject", "mannequin"),
                FREE_SPACE,
                int(raw.get("mic_id", 0)),
                raw["source_azimuth_deg"],
            )
        else:
            key = MeasurementKey(
                raw["subject"], raw["wear_config"], int(raw["mic_id"]), raw["source_azimuth_deg"]
            )
        return ManifestEntry(key, str(raw["file"]), int(raw.get("channel", 0)), str(raw["sha256"]))
    except KeyError as exc:
        raise ManifestError(f"entry missing field {exc.args[0]!r}: {raw}") from None
    except KeyValidationError as exc:
        raise ManifestError(f"invalid entry {raw}: {exc}") from None


def manifest_from_dict(doc, root, verify=True, only_files=None):
    """Build and validate a manifest from its parsed document.

    ``only_files`` restricts the entries to those whose file is listed, which
    is how partial downloads become a smaller, still valid manifest.
    """
    if not isinstance(doc, dict):
        raise ManifestError("manifest document must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ManifestError(f"unsupported format_version {version!r}")
    root = Path(root)
    try:
        mics = [
            MicrophonePosition(
                int(m["id"]), m["region"], float(m["facing_azimuth_deg"]), m.get("reference_ear")
            )
            for m in doc["microphones"]
        ]
        raw_entries = doc["entries"]
    except KeyError as exc:
        raise ManifestError(f"manifest missing field {exc.args[0]!r}") from None
    mic_table = {}
    for mic in mics:
        if mic.id in mic_table:
            raise ManifestError(f"duplicate microphone id {mic.id}")
        mic_table[mic.id] = mic
    for side in ("left", "right"):
        n = sum(m.reference_ear == side for m in mics)
        if n > 1:
            raise ManifestError(f"more than one {side} ear reference microphone")

    wear_configs = tuple(doc.get("wear_configs", GARMENTS))
    for wc in wear_configs:
        if not _valid_wear_config(wc):
            raise ManifestError(f"invalid wear configuration {wc!r} in vocabulary")

    def collect(rows, free_space):
        out = {}
        for raw in rows:
            entry = _parse_entry(raw, free_space)
            if only_files is not None and entry.file not in only_files:
                continue
            if entry.key in out:
                raise ManifestError(f"duplicate entry for {entry.key}")
            if not free_space:
                if entry.key.mic_id not in mic_table:
                    raise ManifestError(f"entry references unknown microphone {entry.key.mic_id}")
                if entry.key.wear_config not in wear_configs:
                    raise ManifestError(
                        f"wear configuration {entry.key.wear_config!r} not declared in manifest"
                    )
            out[entry.key] = entry
        return out

    entries = collect(raw_entries, False)
    free_space = collect(doc.get("free_space_reference", []) or [], True)

    if verify:
        checked = {}
        for entry in list(entries.values()) + list(free_space.values()):
            path = root / entry.file
            if entry.file in checked:
                if checked[entry.file] != entry.sha256:
                    raise ManifestError(f"conflicting checksums declared for {entry.file}")
                continue
            if not path.is_file():
                raise MissingAudioError(f"missing audio file {path}")
            actual = sha256_file(path)
            if actual != entry.sha256:
                raise ChecksumMismatchError(path, entry.sha256, actual)
            checked[entry.file] = entry.sha256

    return DatasetManifest(
        root=root,
        entries=entries,
        microphones=mic_table,
        free_space_reference=free_space,
        sample_rate_hz=int(doc.get("sample_rate_hz", 48000)),
        bit_depth=int(doc.get("bit_depth", 24)),
        wear_configs=wear_configs,
        source_distance_m=doc.get("source_distance_m"),
        name=str(doc.get("name", "")),
    )


def load_manifest(path, verify=True):
    """Load and validate a manifest file.

    Raises
    ------
    FileNotFoundError
        The manifest itself does not exist.
    ManifestError
        The document is malformed or inconsistent.
    MissingAudioError
        An entry references an absent audio file.
    ChecksumMismatchError
        An audio file's digest differs from the manifest.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"malformed manifest {path}: {exc}") from exc
    return manifest_from_dict(doc, path.parent, verify=verify)


def dumps_manifest(manifest):
    return json.dumps(manifest.to_dict(), indent=2, sort_keys=False) + "\n"


def save_manifest(manifest, path):
    Path(path).write_text(dumps_manifest(manifest))


def load_ir(manifest, key, mic_id=None):
    """Decode the impulse response stored for ``key``.

    ``key`` may be a MeasurementKey or a ``(subject, wear_config, mic_id,
    azimuth)`` tuple; invalid fields raise KeyValidationError before lookup.
    Free-space reference keys are looked up in the reference table.
    """
    if not isinstance(key, MeasurementKey):
        key = MeasurementKey(*key)
    entry = manifest.entries.get(key)
    if entry is None:
        entry = manifest.free_space_reference.get(key)
    if entry is None:
        raise KeyNotFoundError(f"no measurement for {key}")
    rate, data = read_wav(manifest.root / entry.file)
    if rate != manifest.sample_rate_hz:
        log.warning("%s: file rate %d differs from manifest rate %d", entry.file, rate,
                    manifest.sample_rate_hz)
    if not 0 <= entry.channel < data.shape[1]:
        raise KeyNotFoundError(f"{entry.file} has no channel {entry.channel}")
    return ImpulseResponse(data[:, entry.channel], rate, key.mic_id if mic_id is None else mic_id)


def free_space_ir(manifest, azimuth=None):
    """Return the free-space reference response (without a body present).

    With ``azimuth=None`` the manifest must hold exactly one reference, or
    one at azimuth 0.
    """
    refs = manifest.free_space_reference
    if not refs:
        raise KeyNotFoundError("no free-space reference in manifest")
    if azimuth is None:
        if len(refs) == 1:
            key = next(iter(refs))
        else:
            frontal = [k for k in refs if k.source_azimuth_deg == 0]
            if not frontal:
                raise KeyNotFoundError("several free-space references; specify an azimuth")
            key = frontal[0]
    else:
        matches = [k for k in refs if k.source_azimuth_deg == int(azimuth)]
        if not matches:
            raise KeyNotFoundError(f"no free-space reference at azimuth {azimuth}")
        key = matches[0]
    return load_ir(manifest, key)


def select_array(manifest, selector, include_ear_refs=True):
    """Build an ordered microphone-id list for a beamforming array.

    Parameters
    ----------
    manifest : DatasetManifest
        Or any object with a ``microphones`` table and ``reference_mic``,
        such as a synthetic body model.
    selector : iterable of region names, or sequence of integer mic ids
        Region sets are expanded in ascending id order, so the result does
        not depend on the order of the regions. Explicit id lists keep their
        order.
    include_ear_refs : bool
        Put the left and right ear-canal references first. The left ear is
        always channel 1, the unity-gain reference of the beamformer.
    """
    selector = list(selector)
    if selector and all(isinstance(s, str) for s in selector):
        unknown = sorted(set(selector) - set(REGIONS))
        if unknown:
            raise SelectionError(f"unknown regions {unknown}")
        regions = set(selector)
        ids = sorted(m.id for m in manifest.microphones.values() if m.region in regions)
    else:
        ids = []
        for s in selector:
            if isinstance(s, (bool, str)) or int(s) != s:
                raise SelectionError(f"invalid microphone id {s!r}")
            ids.append(int(s))
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise SelectionError(f"duplicate microphone ids {dupes}")
        unknown = [i for i in ids if i not in manifest.microphones]
        if unknown:
            raise SelectionError(f"unknown microphone ids {unknown}")
    if include_ear_refs:
        refs = [manifest.reference_mic("left"), manifest.reference_mic("right")]
        ids = refs + [i for i in ids if i not in refs]
    return ids


# -- fetching -----------------------------------------------------------------


def _download(url, target, expected, timeout):
    part = target.with_name(target.name + ".part")
    part.parent.mkdir(parents=True, exist_ok=True)
    digest = hashlib.sha256()
    try:
        with urllib.request.urlopen(url, timeout=timeout) as response, open(part, "wb") as out:
            for block in iter(lambda: response.read(1 << 16), b""):
                digest.update(block)
                out.write(block)
    except (urllib.error.URLError, OSError) as exc:
        # a partial file is never trusted; the next call restarts it
        part.unlink(missing_ok=True)
        if isinstance(exc, urllib.error.HTTPError):
            raise NetworkError(f"HTTP {exc.code} fetching {url}") from exc
        raise NetworkError(f"cannot fetch {url}: {exc}") from exc
    actual = digest.hexdigest()
    if actual != expected:
        part.unlink(missing_ok=True)
        raise ChecksumMismatchError(url, expected, actual)
    os.replace(part, target)


def sync_files(archive_url, dest, expected_checksums, timeout=60.0):
    """Make ``dest`` hold every file in ``expected_checksums``.

    Files already present with a matching digest are left untouched; others
    are (re)downloaded from ``archive_url/<relative path>``. Returns the
    sorted list of relative paths that were downloaded.
    """
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    base = archive_url.rstrip("/") + "/"
    downloaded = []
    with FileLock(str(dest / ".wearbeam.lock")):
        for rel in sorted(expected_checksums):
            expected = expected_checksums[rel].lower()
            target = dest / rel
            if target.is_file() and sha256_file(target) == expected:
                continue
            if target.exists():
                log.info("cached %s failed verification; downloading again", rel)
            url = urllib.parse.urljoin(base, urllib.parse.quote(rel))
            _download(url, target, expected, timeout)
            downloaded.append(rel)
    return downloaded


def fetch_dataset(archive_url, dest, expected_checksums, manifest_name="manifest.json",
                  timeout=60.0):
    """Download (or reuse) a dataset and return its verified manifest.

    ``expected_checksums`` maps relative paths to SHA-256 hex digests and
    must include ``manifest_name``. When it lists only part of the archive,
    the returned manifest covers just the entries whose audio was requested.
    Concurrent calls on the same ``dest`` are serialized by a lock file.
    """
    if manifest_name not in expected_checksums:
        raise ManifestError(f"expected_checksums must include {manifest_name!r}")
    sync_files(archive_url, dest, expected_checksums, timeout=timeout)
    path = Path(dest) / manifest_name
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"malformed manifest {path}: {exc}") from exc
    audio = {rel for rel in expected_checksums if rel != manifest_name}
    return manifest_from_dict(doc, path.parent, verify=True, only_files=audio)


def build_manifest(root, microphones: Iterable[MicrophonePosition], entries: Sequence[dict],
                   free_space: Sequence[dict] = (), sample_rate_hz=48000, bit_depth=24,
                   wear_configs=GARMENTS, name="", source_distance_m=None):
    """Assemble a manifest over files already written under ``root``.

    Each entry dict gives the key fields plus ``file`` and ``channel``; the
    checksum is computed here.
    """
    root = Path(root)
    digests = {}

    def with_digest(row):
        row = dict(row)
        if row["file"] not in digests:
            digests[row["file"]] = sha256_file(root / row["file"])
        row["sha256"] = digests[row["file"]]
        return row

    doc = {
        "format_version": FORMAT_VERSION,
        "name": name,
        "sample_rate_hz": sample_rate_hz,
        "bit_depth": bit_depth,
        "source_distance_m": source_distance_m,
        "wear_configs": list(wear_configs),
        "microphones": [
            {
                "id": m.id,
                "region": m.region,
                "facing_azimuth_deg": m.facing_azimuth_deg,
                "reference_ear": m.reference_ear,
            }
            for m in microphones
        ],
        "entries": [with_digest(r) for r in entries],
        "free_space_reference": [with_digest(r) for r in free_space],
    }
    return manifest_from_dict(doc, root, verify=False)

