"""Binary recording container and JSON dataset manifests."""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .types import EegWindow, Recording, TaskDataset, ValidationError

RECORDING_MAGIC = b"EEGREC01"


class FormatError(ValidationError):
    pass


def _pack_header(header: dict) -> bytes:
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack("<I", len(blob)) + blob


def _read_header(buf: bytes, magic: bytes) -> tuple[dict, int]:
    if len(buf) < len(magic) + 4:
        raise FormatError("file too short for header")
    if buf[: len(magic)] != magic:
        raise FormatError(f"bad magic {buf[:len(magic)]!r}; unknown format version")
    (hlen,) = struct.unpack_from("<I", buf, len(magic))
    start = len(magic) + 4
    if start + hlen > len(buf):
        raise FormatError("malformed header: declared length exceeds file size")
    try:
        header = json.loads(buf[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed header: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError("malformed header: not a JSON object")
    return header, start + hlen


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def recording_to_bytes(recording: Recording) -> bytes:
    header = {
        "channel_labels": list(recording.channel_labels),
        "sfreq": recording.sfreq,
        "n_channels": recording.n_channels,
        "n_samples": recording.n_samples,
        "subject_id": recording.subject_id,
    }
    with np.errstate(over="ignore"):
        data = np.ascontiguousarray(recording.samples, dtype="<f4")
    if not np.all(np.isfinite(data)):
        raise FormatError("samples overflow single precision")
    payload = data.tobytes()
    return RECORDING_MAGIC + _pack_header(header) + payload


def recording_from_bytes(buf: bytes) -> Recording:
    header, offset = _read_header(buf, RECORDING_MAGIC)
    try:
        C, T = int(header["n_channels"]), int(header["n_samples"])
        labels, sfreq = header["channel_labels"], float(header["sfreq"])
        subject = str(header.get("subject_id", ""))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed header: {exc}") from exc
    if len(labels) != C:
        raise FormatError("malformed header: label count differs from n_channels")
    expected = C * T * 4
    if len(buf) - offset != expected:
        raise FormatError(
            f"payload size mismatch: expected {expected} bytes, found {len(buf) - offset}"
        )
    samples = np.frombuffer(buf, dtype="<f4", count=C * T, offset=offset).reshape(C, T)
    return Recording(tuple(labels), sfreq, samples.astype(np.float32), subject)


def save_recording(recording: Recording, path) -> None:
    """Write ``recording`` as float32; values already representable in float32 round-trip bit-exactly."""
    atomic_write_bytes(path, recording_to_bytes(recording))


def load_recording(path) -> Recording:
    return recording_from_bytes(Path(path).read_bytes())


def as_float32(recording: Recording) -> Recording:
    return Recording(
        recording.channel_labels,
        recording.sfreq,
        np.asarray(recording.samples, dtype=np.float32),
        recording.subject_id,
    )


# -- manifests ---------------------------------------------------------------

def write_corpus(recordings, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, rec in enumerate(recordings):
        name = f"rec_{i:04d}.eeg"
        save_recording(rec, out / name)
        entries.append({"path": name, "subject_id": rec.subject_id})
    manifest = {"kind": "corpus", "recordings": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return out / "manifest.json"


def _manifest_path(path) -> Path:
    p = Path(path)
    return p / "manifest.json" if p.is_dir() else p


def read_corpus(path) -> list[Recording]:
    mpath = _manifest_path(path)
    doc = json.loads(mpath.read_text())
    if doc.get("kind") != "corpus":
        raise FormatError(f"{mpath} is not a corpus manifest")
    return [load_recording(mpath.parent / e["path"]) for e in doc["recordings"]]


def write_task(dataset: TaskDataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (w, fold) in enumerate(zip(dataset.windows, dataset.fold_assignment)):
        name = f"win_{i:04d}.eeg"
        rec = Recording(dataset.channel_labels, w.sfreq, w.samples, w.source[0])
        save_recording(rec, out / name)
        entries.append(
            {"path": name, "label": int(w.label), "fold": int(fold), "offset": int(w.source[1])}
        )
    manifest = {
        "kind": "task",
        "name": dataset.name,
        "metric": dataset.metric,
        "folds": dataset.folds,
        "balanced": dataset.balanced,
        "num_classes": dataset.num_classes,
        "windows": entries,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return out / "manifest.json"


def read_task(path) -> TaskDataset:
    mpath = _manifest_path(path)
    doc = json.loads(mpath.read_text())
    if doc.get("kind") != "task":
        raise FormatError(f"{mpath} is not a task manifest")
    windows, folds, labels = [], [], None
    for e in doc["windows"]:
        rec = load_recording(mpath.parent / e["path"])
        labels = rec.channel_labels
        windows.append(EegWindow(rec.samples, rec.sfreq, int(e["label"]), (rec.subject_id, int(e["offset"]))))
        folds.append(int(e["fold"]))
    return TaskDataset(
        windows=windows,
        fold_assignment=folds,
        folds=int(doc["folds"]),
        metric=doc["metric"],
        balanced=bool(doc["balanced"]),
        num_classes=int(doc.get("num_classes", 2)),
        name=doc.get("name", "task"),
        channel_labels=labels or (),
    )
