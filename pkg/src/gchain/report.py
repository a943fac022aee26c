"""Canonical serialization, digests, and run manifests for the CLI artifacts.

Canonical JSON here means: sorted keys, compact separators, shortest
round-trip float repr, NaN/inf rejected. Byte-identical output for equal
inputs is the property the determinism checks rely on.
"""

from __future__ import annotations

import hashlib
import json
import math
import subprocess
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_hex(data) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def sanitize(obj):
    """Make a report tree JSON-safe without losing information.

    Numpy scalars and arrays become Python scalars and lists, tuples
    become lists, and non-finite floats become the strings "inf",
    "-inf", "nan" (canonical JSON rejects the bare tokens).
    """
    if isinstance(obj, dict):
        return {key: sanitize(val) for key, val in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_report(data, path) -> str:
    """Canonical JSON to file; returns the content digest.

    Equal inputs produce identical bytes, which is what the CLI
    determinism checks hash.
    """
    text = canonical_json(sanitize(data)) + "\n"
    Path(path).write_text(text, encoding="utf-8")
    return sha256_hex(text)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def package_version() -> str:
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=here, capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


@dataclass
class RunManifest:
    """Provenance sidecar for one CLI invocation.

    Contains timestamps, so manifests are reproducibility *records*, not
    themselves byte-stable artifacts; determinism checks compare the data
    artifacts they describe.
    """

    command: str
    config: dict
    seeds: list
    created_utc: str = ""
    version: str = ""
    outputs: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.created_utc:
            self.created_utc = datetime.now(timezone.utc).isoformat()
        if not self.version:
            self.version = package_version()

    def add_output(self, path) -> None:
        self.outputs[Path(path).name] = file_digest(path)

    def to_json(self) -> str:
        return canonical_json({
            "command": self.command,
            "config": self.config,
            "seeds": self.seeds,
            "created_utc": self.created_utc,
            "version": self.version,
            "outputs": self.outputs,
            "notes": self.notes,
        })

    def write(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")
