"""Checkpoint container: magic, length-prefixed JSON header, float32 parameter payload."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..eeg.io import FormatError, _pack_header, _read_header, atomic_write_bytes

CHECKPOINT_MAGIC = b"GBCKPT01"


@dataclass
class Checkpoint:
    config: dict
    parameters: dict[str, np.ndarray]
    rng: dict = field(default_factory=dict)
    step: int = 0
    meta: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        names = sorted(self.parameters)
        header = {
            "config": self.config,
            "parameters": {n: list(self.parameters[n].shape) for n in names},
            "rng": self.rng,
            "step": int(self.step),
            "meta": self.meta,
        }
        payload = b"".join(np.ascontiguousarray(self.parameters[n], dtype="<f4").tobytes() for n in names)
        return CHECKPOINT_MAGIC + _pack_header(header) + payload

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Checkpoint":
        header, offset = _read_header(buf, CHECKPOINT_MAGIC)
        try:
            manifest = header["parameters"]
            config = header["config"]
        except KeyError as exc:
            raise FormatError(f"malformed checkpoint header: missing {exc}") from exc
        sizes = {n: int(np.prod(s, dtype=np.int64)) for n, s in manifest.items()}
        expected = 4 * sum(sizes.values())
        if len(buf) - offset != expected:
            raise FormatError(f"payload size mismatch: expected {expected} bytes, found {len(buf) - offset}")
        params = {}
        for n in sorted(manifest):
            arr = np.frombuffer(buf, dtype="<f4", count=sizes[n], offset=offset)
            params[n] = arr.reshape(manifest[n]).astype(np.float32)
            offset += 4 * sizes[n]
        return cls(config, params, header.get("rng", {}), int(header.get("step", 0)), header.get("meta", {}))

    def save(self, path) -> str:
        data = self.to_bytes()
        atomic_write_bytes(path, data)
        return hashlib.sha256(data).hexdigest()

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def state_arrays(module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {n: p.detach().cpu().numpy().astype(np.float32) for n, p in module.named_parameters()}


def load_arrays(module: torch.nn.Module, arrays: dict[str, np.ndarray], strict: bool = True) -> list[str]:
    """Copy stored arrays into matching parameters; returns names of parameters left untouched."""
    own = dict(module.named_parameters())
    missing = [n for n in own if n not in arrays]
    unexpected = [n for n in arrays if n not in own]
    if strict and (missing or unexpected):
        raise FormatError(f"checkpoint mismatch: missing={missing} unexpected={unexpected}")
    with torch.no_grad():
        for n, p in own.items():
            if n in arrays:
                if tuple(arrays[n].shape) != tuple(p.shape):
                    raise FormatError(f"shape mismatch for {n}: {arrays[n].shape} vs {tuple(p.shape)}")
                p.copy_(torch.from_numpy(np.array(arrays[n])).to(p.dtype))
    return missing
