"""On-disk cache of sampled shell transforms.

File layout: 8-byte magic, 4-byte little-endian header length, a JSON header
(format version, grid spec, array shape), then the samples as row-major
little-endian complex128.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from filelock import FileLock

MAGIC = b"UQFTSHT1"
FORMAT_VERSION = 1
SUFFIX = ".uqc"
ENV_VAR = "UQFT_CACHE_DIR"


def default_cache_dir() -> Path:
    env = os.environ.get(ENV_VAR)
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "uqft"


def write_samples(path: Path, samples: np.ndarray, header: dict) -> None:
    arr = np.ascontiguousarray(samples, dtype="<c16")
    head = dict(header, version=FORMAT_VERSION, shape=list(arr.shape), dtype="<c16")
    blob = json.dumps(head, sort_keys=True).encode()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(arr.tobytes(order="C"))
    os.replace(tmp, path)


def read_samples(path: Path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a shell-transform cache file")
        (size,) = struct.unpack("<I", fh.read(4))
        head = json.loads(fh.read(size))
        if head.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path} has unsupported cache version {head.get('version')}")
        data = np.frombuffer(fh.read(), dtype=head["dtype"])
    return data.reshape(head["shape"]).astype(complex), head


@dataclass
class TransformCache:
    directory: Path

    def __post_init__(self):
        self.directory = Path(self.directory)

    @classmethod
    def from_env(cls) -> "TransformCache":
        return cls(default_cache_dir())

    def _lock(self) -> FileLock:
        self.directory.mkdir(parents=True, exist_ok=True)
        return FileLock(str(self.directory / ".lock"))

    @staticmethod
    def key(packet, sign: int, grid, upsilon) -> str:
        text = json.dumps(
            {"packet": repr(packet), "sign": sign, "grid": grid.spec(), "upsilon": [float(x) for x in upsilon]},
            sort_keys=True,
        )
        return hashlib.sha256(text.encode()).hexdigest()

    def path(self, key: str) -> Path:
        return self.directory / (key + SUFFIX)

    def load(self, key: str):
        p = self.path(key)
        if not p.exists():
            return None
        with self._lock():
            return read_samples(p)[0]

    def store(self, key: str, samples: np.ndarray, header: dict) -> None:
        with self._lock():
            write_samples(self.path(key), samples, dict(header, key=key))

    def stat(self) -> dict:
        if not self.directory.exists():
            return {"directory": str(self.directory), "entries": 0, "bytes": 0}
        files = sorted(self.directory.glob("*" + SUFFIX))
        return {"directory": str(self.directory), "entries": len(files), "bytes": sum(f.stat().st_size for f in files)}

    def clear(self) -> int:
        if not self.directory.exists():
            return 0
        with self._lock():
            files = list(self.directory.glob("*" + SUFFIX))
            for f in files:
                f.unlink()
        return len(files)
