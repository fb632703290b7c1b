"""Output files with a reproducibility header.

CSV files start with ``#`` comment lines naming the tool version, a hash of
the configuration that produced them and the seed. The JSON twin carries
the same block under ``"meta"``.
"""

import csv
import hashlib
import io
import json
from pathlib import Path

from . import __version__


def config_hash(config):
    """First 16 hex digits of the SHA-256 of the canonical JSON of ``config``."""
    text = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def metadata(config, seed=None):
    return {"tool": "wearbeam", "version": __version__, "config_hash": config_hash(config),
            "seed": seed}


def header_lines(meta):
    return [f"{k}={meta[k]}" for k in ("tool", "version", "config_hash", "seed")]


def write_csv(path, columns, rows, meta):
    buf = io.StringIO()
    for line in header_lines(meta):
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue())


def write_json(path, payload, meta):
    doc = {"meta": meta}
    doc.update(payload)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_csv(path):
    """Rows of a CSV written by ``write_csv`` (comment lines skipped)."""
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))
