"""Binary feature-file format with a JSON sidecar manifest.

Layout (all integers unsigned 32-bit little-endian):

    bytes 0..3   magic "DCRF"
    bytes 4..7   format version (currently 1)
    bytes 8..11  feature dimension D
    bytes 12..15 frame count N
    bytes 16..19 frames per second
    bytes 20..   N * D float32 little-endian values, chronological order

The manifest lives next to the payload at ``<path>.json`` and lists the
class vocabulary plus one record per action segment (instance id, start
frame, action/verb/noun labels).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DCRF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


class FeatureFileError(Exception):
    """Malformed feature file (bad magic, truncation, size mismatch)."""


class UnsupportedVersionError(FeatureFileError):
    """The file's format version is not one this reader understands."""


def manifest_path(path) -> Path:
    return Path(str(path) + ".json")


def _check_manifest(manifest: dict) -> None:
    for key in ("version", "fps", "dim", "classes", "segments"):
        if key not in manifest:
            raise FeatureFileError(f"manifest missing key {key!r}")
    for seg in manifest["segments"]:
        for key in ("instance_id", "start_frame", "action"):
            if key not in seg:
                raise FeatureFileError(f"segment record missing key {key!r}")


def write_feature_file(stream: np.ndarray, manifest: dict, path) -> None:
    """Write the frame stream and its manifest; overwrites existing files."""
    stream = np.ascontiguousarray(stream, dtype="<f4")
    if stream.ndim != 2:
        raise ValueError("stream must be (frames, dim)")
    _check_manifest(manifest)
    n, d = stream.shape
    fps = int(manifest["fps"])
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, d, n, fps))
        fh.write(stream.tobytes())
    with open(manifest_path(path), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def read_feature_file(path) -> tuple[np.ndarray, dict]:
    """Read a feature file and its manifest back; the payload round-trips
    bit-exactly."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FeatureFileError(f"{path}: shorter than the fixed header")
    magic, version, d, n, fps = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FeatureFileError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: version {version} unsupported (expected {FORMAT_VERSION})")
    expected = n * d * 4
    payload = raw[_HEADER.size :]
    if len(payload) < expected:
        raise FeatureFileError(f"{path}: payload truncated ({len(payload)} bytes, header promises {expected})")
    if len(payload) > expected:
        raise FeatureFileError(f"{path}: {len(payload) - expected} trailing bytes after payload")
    stream = np.frombuffer(payload, dtype="<f4").reshape(n, d).copy()
    mpath = manifest_path(path)
    if not mpath.exists():
        raise FeatureFileError(f"{path}: manifest sidecar {mpath} missing")
    manifest = json.loads(mpath.read_text())
    _check_manifest(manifest)
    if int(manifest["dim"]) != d or int(manifest["fps"]) != fps:
        raise FeatureFileError(f"{path}: manifest disagrees with binary header")
    for seg in manifest["segments"]:
        if not 0 <= seg["start_frame"] < max(n, 1):
            raise FeatureFileError(f"segment {seg['instance_id']} starts outside the stream")
    return stream, manifest
