"""Wire format for edge -> aggregator messages and the privacy auditor.

A stream is a concatenation of records. Every record starts with one line of
compact JSON (the header). ``anon`` and ``raw`` records continue with a
4-byte big-endian payload length, the raw RGB bytes (row-major) and a
terminating newline. ``report`` records have no payload at all::

    {"camera_id":"c1","masked":3,"total":4,"ts":7,"type":"report","v":1}\\n
"""

from __future__ import annotations

import functools
import json
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import AuditError, InvalidParameterError, ProtocolError
from .imaging import FaceRegion, Image, MaskLabel, blur_region, dataset_specs, synthesize
from .pipeline import AnonymizedFrame, DeploymentMode, EdgeMessage, EdgeReport, Frame, GroundTruth, ModeKind

VERSION = 1
_LEN = struct.Struct(">I")

REPORT_FIELDS = frozenset({"v", "type", "camera_id", "ts", "total", "masked"})


def _header(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"


def _region_list(regions: Iterable[FaceRegion]) -> list[list[int]]:
    return [[r.x, r.y, r.w, r.h] for r in regions]


def encode(msg: EdgeMessage) -> bytes:
    if isinstance(msg, EdgeReport):
        return _header(
            {
                "v": VERSION,
                "type": "report",
                "camera_id": msg.camera_id,
                "ts": msg.timestamp,
                "total": msg.persons_total,
                "masked": msg.persons_masked,
            }
        )
    if isinstance(msg, AnonymizedFrame):
        head = {
            "v": VERSION,
            "type": "anon",
            "camera_id": msg.camera_id,
            "ts": msg.timestamp,
            "width": msg.image.width,
            "height": msg.image.height,
            "regions": _region_list(msg.regions),
            "tags": list(msg.appearance_tags),
            "checksum": msg.config_checksum,
        }
    elif isinstance(msg, Frame):
        head = {
            "v": VERSION,
            "type": "raw",
            "camera_id": msg.camera_id,
            "ts": msg.timestamp,
            "width": msg.image.width,
            "height": msg.image.height,
            "truth": [
                {
                    "region": [t.face.x, t.face.y, t.face.w, t.face.h],
                    "label": t.label.text,
                    "person_id": t.person_id,
                    "clothing": list(t.clothing_color),
                }
                for t in msg.truth
            ],
        }
    else:
        raise InvalidParameterError(f"cannot encode {type(msg).__name__}")
    payload = msg.image.pixels.tobytes()
    return _header(head) + _LEN.pack(len(payload)) + payload + b"\n"


def encode_stream(messages: Iterable[EdgeMessage]) -> bytes:
    return b"".join(encode(m) for m in messages)


def _require(head: dict, keys: Sequence[str]):
    missing = [k for k in keys if k not in head]
    if missing:
        raise ProtocolError(f"{head.get('type')} record missing fields {missing}")


def _int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ProtocolError(f"field {name!r} must be an integer, got {value!r}")
    return value


def _region(vals) -> FaceRegion:
    if not isinstance(vals, list) or len(vals) != 4:
        raise ProtocolError(f"malformed region {vals!r}")
    try:
        return FaceRegion(*(_int(v, "region") for v in vals))
    except InvalidParameterError as exc:
        raise ProtocolError(str(exc)) from None


def _decode_one(data: bytes, pos: int) -> tuple[EdgeMessage, int]:
    end = data.find(b"\n", pos)
    if end < 0:
        raise ProtocolError(f"unterminated header at byte {pos}")
    try:
        head = json.loads(data[pos:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"bad header at byte {pos}: {exc}") from None
    if not isinstance(head, dict):
        raise ProtocolError("header is not an object")
    pos = end + 1
    if head.get("v") != VERSION:
        raise ProtocolError(f"unsupported protocol version {head.get('v')!r}")
    kind = head.get("type")
    _require(head, ["camera_id", "ts"])
    camera_id, ts = head["camera_id"], _int(head["ts"], "ts")
    if not isinstance(camera_id, str):
        raise ProtocolError("camera_id must be a string")

    if kind == "report":
        if set(head) != REPORT_FIELDS:
            raise ProtocolError(f"report record has unexpected fields {sorted(set(head) - REPORT_FIELDS)}")
        total, masked = _int(head["total"], "total"), _int(head["masked"], "masked")
        if not 0 <= masked <= total:
            raise ProtocolError(f"report counts violate 0 <= masked <= total: {masked}/{total}")
        return EdgeReport(camera_id, ts, total, masked), pos

    if kind not in ("anon", "raw"):
        raise ProtocolError(f"unknown record type {kind!r}")
    _require(head, ["width", "height"])
    w, h = _int(head["width"], "width"), _int(head["height"], "height")
    if w < 1 or h < 1:
        raise ProtocolError(f"invalid frame size {w}x{h}")
    if pos + _LEN.size > len(data):
        raise ProtocolError("truncated payload length")
    (n,) = _LEN.unpack_from(data, pos)
    pos += _LEN.size
    if n != w * h * 3:
        raise ProtocolError(f"payload length {n} does not match {w}x{h}x3")
    if pos + n + 1 > len(data):
        raise ProtocolError("truncated payload")
    if data[pos + n : pos + n + 1] != b"\n":
        raise ProtocolError("payload not terminated by newline")
    image = Image(np.frombuffer(data[pos : pos + n], dtype=np.uint8).reshape(h, w, 3))
    pos += n + 1

    try:
        if kind == "anon":
            _require(head, ["regions", "tags", "checksum"])
            regions = tuple(_region(r) for r in head["regions"])
            tags = tuple(_int(t, "tags") for t in head["tags"])
            if not isinstance(head["checksum"], str):
                raise ProtocolError("checksum must be a string")
            return AnonymizedFrame(camera_id, ts, image, regions, tags, head["checksum"]), pos
        _require(head, ["truth"])
        truth = []
        for t in head["truth"]:
            truth.append(
                GroundTruth(
                    _region(t["region"]),
                    MaskLabel.parse(t["label"]),
                    t["person_id"],
                    tuple(_int(c, "clothing") for c in t["clothing"]),
                )
            )
        return Frame(camera_id, ts, image, tuple(truth)), pos
    except (InvalidParameterError, KeyError, TypeError) as exc:
        raise ProtocolError(f"invalid {kind} record: {exc}") from None


def decode(data: bytes) -> EdgeMessage:
    """Decode exactly one record."""
    msg, pos = _decode_one(data, 0)
    if pos != len(data):
        raise ProtocolError(f"{len(data) - pos} trailing bytes after record")
    return msg


def decode_stream(data: bytes) -> list[EdgeMessage]:
    out, pos = [], 0
    while pos < len(data):
        msg, pos = _decode_one(data, pos)
        out.append(msg)
    return out


# ---------------------------------------------------------------------------
# auditing


@dataclass(frozen=True)
class AuditVerdict:
    violations: tuple[tuple[int, str], ...] = ()
    messages: int = 0

    @property
    def compliant(self) -> bool:
        return not self.violations


STREAM_LEVEL = -1
CALIBRATION_SAMPLES = 200
CALIBRATION_MARGIN = 2.0


def detail_variance(image: Image, face: FaceRegion) -> np.ndarray:
    """Per-channel variance of the Laplacian residual inside ``face``.

    Blurring removes exactly this high-frequency content, whereas plain
    variance is dominated by face/background contrast that survives any blur.
    """
    c = face.crop(image).astype(np.float64)
    if c.shape[0] < 3 or c.shape[1] < 3:
        return np.zeros(3)
    resid = c[1:-1, 1:-1] - 0.25 * (c[:-2, 1:-1] + c[2:, 1:-1] + c[1:-1, :-2] + c[1:-1, 2:])
    return resid.reshape(-1, 3).var(axis=0)


@functools.lru_cache(maxsize=64)
def detail_threshold(blur: float) -> float:
    """Upper bound on :func:`detail_variance` of an honestly blurred face.

    Calibrated once per blur factor: the largest per-channel statistic over a
    fixed set of synthetic faces blurred at ``blur``, times a safety margin.
    """
    worst = 0.0
    for spec in dataset_specs(CALIBRATION_SAMPLES // 2, seed=20240611, hard_fraction=0.5):
        s = synthesize(spec)
        worst = max(worst, float(detail_variance(blur_region(s.image, s.face, blur), s.face).max()))
    return CALIBRATION_MARGIN * worst + 1.0


def audit_messages(messages: Sequence[EdgeMessage], mode: DeploymentMode) -> AuditVerdict:
    violations: list[tuple[int, str]] = []
    if mode.kind is ModeKind.BASELINE:
        violations.append((STREAM_LEVEL, "baseline deployment forwards raw frames (non-compliant by definition)"))
        return AuditVerdict(tuple(violations), len(messages))

    for i, msg in enumerate(messages):
        if mode.kind is ModeKind.DECENTRALIZED:
            if not isinstance(msg, EdgeReport):
                violations.append((i, f"{type(msg).__name__} leaves a decentralized edge; only reports may"))
            continue
        if isinstance(msg, Frame):
            violations.append((i, "raw frame in a centralized stream"))
        elif isinstance(msg, AnonymizedFrame):
            bound = detail_threshold(mode.blur)
            for j, region in enumerate(msg.regions):
                stat = float(detail_variance(msg.image, region).max())
                if stat > bound:
                    violations.append(
                        (i, f"region {j} {region} looks unblurred (detail variance {stat:.2f} > {bound:.2f})")
                    )
    return AuditVerdict(tuple(violations), len(messages))


def audit(stream: bytes, mode: DeploymentMode) -> AuditVerdict:
    """Audit a captured byte stream against the declared deployment mode.

    Raises :class:`AuditError` when the capture cannot be decoded.
    """
    try:
        messages = decode_stream(stream)
    except ProtocolError as exc:
        raise AuditError(f"capture is not decodable: {exc}") from exc
    return audit_messages(messages, mode)
