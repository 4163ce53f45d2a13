"""Binary exchange format for segment samples and correction flows.

Each file is a 256-byte JSON header followed by little-endian float32 data,
channel-major. Inputs carry 6 channels of 250x250 (floorplan crop +
trajectory plot); flow and target files carry 3 channels (2 flow components
in pixels + a 0/1 validity mask).
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .raster import WINDOW_PX, FlowField, SegmentSample

MAGIC = "FDHL1"
HEADER_BYTES = 256
INPUT_CHANNELS = 6
FLOW_CHANNELS = 3  # 2 flow + 1 mask

_INPUT_RE = re.compile(r"^seg_(\d+)_input\.bin$")


class ExchangeFormatError(ValueError):
    pass


def _pack_header(meta: dict) -> bytes:
    payload = dict(meta)
    payload["magic"] = MAGIC
    raw = json.dumps(payload, separators=(",", ":")).encode("utf-8")
    if len(raw) > HEADER_BYTES:
        raise ExchangeFormatError(f"header too large ({len(raw)} bytes)")
    return raw.ljust(HEADER_BYTES, b" ")


def _parse_header(raw: bytes, path) -> dict:
    try:
        meta = json.loads(raw.decode("utf-8").rstrip("\x00 "))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ExchangeFormatError(f"{path}: unreadable header: {exc}") from exc
    if meta.get("magic") != MAGIC:
        raise ExchangeFormatError(f"{path}: bad magic {meta.get('magic')!r}, "
                                  f"expected {MAGIC!r}")
    return meta


def _write_file(path, meta: dict, data: np.ndarray) -> None:
    path = Path(path)
    blob = _pack_header(meta) + np.ascontiguousarray(data, dtype="<f4").tobytes()
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def _read_file(path, channels: int) -> tuple[dict, np.ndarray]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < HEADER_BYTES:
        raise ExchangeFormatError(f"{path}: file shorter than the header")
    meta = _parse_header(raw[:HEADER_BYTES], path)
    body = np.frombuffer(raw[HEADER_BYTES:], dtype="<f4")
    expected = channels * WINDOW_PX * WINDOW_PX
    if body.size != expected:
        raise ExchangeFormatError(f"{path}: expected {expected} float32 values, "
                                  f"got {body.size}")
    return meta, body.reshape(channels, WINDOW_PX, WINDOW_PX).copy()


def sample_meta(sample: SegmentSample) -> dict:
    return {
        "crop_offset": [int(v) for v in sample.crop_offset],
        "frame_range": [int(v) for v in sample.frame_range],
        "span_s": float(sample.span),
    }


def write_segment_input(path, sample: SegmentSample) -> None:
    _write_file(path, sample_meta(sample), sample.image)


def read_segment_input(path) -> tuple[dict, np.ndarray]:
    """Returns (header meta, 6x250x250 float32 image)."""
    return _read_file(path, INPUT_CHANNELS)


def write_flow(path, field: FlowField, meta: dict) -> None:
    data = np.concatenate([field.flow,
                           field.mask[None].astype(np.float32)], axis=0)
    _write_file(path, meta, data)


def read_flow(path) -> tuple[dict, FlowField]:
    meta, data = _read_file(path, FLOW_CHANNELS)
    return meta, FlowField(flow=data[:2], mask=data[2] > 0.5)


def input_path(directory, index: int) -> Path:
    return Path(directory) / f"seg_{index}_input.bin"


def flow_path(directory, index: int) -> Path:
    return Path(directory) / f"seg_{index}_flow.bin"


def target_path(directory, index: int) -> Path:
    return Path(directory) / f"seg_{index}_target.bin"


def list_segment_inputs(directory) -> list[tuple[int, Path]]:
    """All seg_<k>_input.bin files in a directory, ordered by k."""
    found = []
    for p in Path(directory).iterdir():
        m = _INPUT_RE.match(p.name)
        if m:
            found.append((int(m.group(1)), p))
    return sorted(found)
