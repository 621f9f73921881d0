from __future__ import annotations

import zlib

import numpy as np
import torch

STREAMS = ("init", "mask", "sampling", "dropout")


class RngStreams:
    """Named, independent random streams derived from one seed.

    Each stream may be re-seeded on its own via ``overrides`` so that, e.g.,
    changing the sampling seed leaves parameter initialisation untouched.
    """

    def __init__(self, seed: int, overrides: dict | None = None):
        self.seed = int(seed)
        self.overrides = {k: int(v) for k, v in (overrides or {}).items()}
        unknown = set(self.overrides) - set(STREAMS)
        if unknown:
            raise ValueError(f"unknown rng streams: {sorted(unknown)}")
        self._np: dict[str, np.random.Generator] = {}
        self._torch: dict[str, torch.Generator] = {}

    def seed_for(self, name: str) -> int:
        return self.overrides.get(name, self.seed)

    def numpy(self, name: str) -> np.random.Generator:
        if name not in self._np:
            ss = np.random.SeedSequence([self.seed_for(name) & 0xFFFFFFFF, zlib.crc32(name.encode())])
            self._np[name] = np.random.default_rng(ss)
        return self._np[name]

    def torch(self, name: str) -> torch.Generator:
        if name not in self._torch:
            g = torch.Generator()
            g.manual_seed(int(self.numpy(name + ":torch").integers(0, 2**62)))
            self._torch[name] = g
        return self._torch[name]

    def child(self, key: str) -> "RngStreams":
        """Streams routed by an identity string (fold, window, cell...)."""
        base = np.random.SeedSequence([self.seed & 0xFFFFFFFF, zlib.crc32(key.encode())])
        over = {
            k: int(np.random.SeedSequence([v & 0xFFFFFFFF, zlib.crc32(key.encode())]).generate_state(1)[0])
            for k, v in self.overrides.items()
        }
        return RngStreams(int(base.generate_state(1)[0]), over)

    def state(self) -> dict:
        return {
            "seed": self.seed,
            "overrides": dict(sorted(self.overrides.items())),
            "numpy": {k: g.bit_generator.state for k, g in sorted(self._np.items())},
        }


def seed_rng(seed: int, overrides: dict | None = None) -> RngStreams:
    return RngStreams(seed, overrides)
