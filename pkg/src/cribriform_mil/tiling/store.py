# Copyright 2025 The Cribriform MIL Authors

# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at

#     http://www.apache.org/licenses/LICENSE-2.0

# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Indexed single-file container for patch payloads.

Layout (little-endian): magic ``PSTR``, version ``u32``, entry count ``u64``, then one index entry per
payload (``u16`` key length, UTF-8 key, ``u64`` absolute offset, ``u64`` length), then the payloads in
index order.
"""

from __future__ import annotations

import io
import logging
import os
import struct
from collections.abc import Iterable, Iterator, Mapping

import numpy as np
from PIL import Image

from cribriform_mil.core.exceptions import InvariantViolation, MissingInputError, MissingKeyError, PatchStoreError

logger = logging.getLogger(__name__)

MAGIC = b"PSTR"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")
_KEY_LEN = struct.Struct("<H")
_SPAN = struct.Struct("<QQ")


def encode_patch(patch: np.ndarray) -> bytes:
    """Lossless PNG encoding of an 8-bit patch."""
    buffer = io.BytesIO()
    Image.fromarray(np.asarray(patch, dtype=np.uint8)).save(buffer, format="PNG")
    return buffer.getvalue()


def decode_patch(payload: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(payload)) as image:
        return np.asarray(image.convert("RGB")).copy()


def write_patch_store(entries: Mapping[str, bytes] | Iterable[tuple[str, bytes]], path: str) -> int:
    """Write `(key, payload)` pairs to a new store at `path`; returns the number of entries.

    Raises:
        InvariantViolation: On duplicate keys.
        ValueError: On empty payloads or keys longer than 65535 bytes.
    """
    items = list(entries.items()) if isinstance(entries, Mapping) else list(entries)
    encoded_keys, seen = [], set()
    for key, payload in items:
        if key in seen:
            raise InvariantViolation(f"duplicate patch-store key '{key}'")
        seen.add(key)
        encoded = key.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"patch-store key too long ({len(encoded)} bytes)")
        if not payload:
            raise ValueError(f"empty payload for key '{key}'")
        encoded_keys.append(encoded)

    offset = _HEADER.size + sum(_KEY_LEN.size + len(k) + _SPAN.size for k in encoded_keys)
    index = bytearray(_HEADER.pack(MAGIC, VERSION, len(items)))
    for encoded, (_, payload) in zip(encoded_keys, items):
        index += _KEY_LEN.pack(len(encoded)) + encoded + _SPAN.pack(offset, len(payload))
        offset += len(payload)

    tmp_path = f"{path}.tmp"
    with open(tmp_path, "wb") as f:
        f.write(index)
        for _, payload in items:
            f.write(payload)
    os.replace(tmp_path, path)
    logger.debug(f"Wrote {len(items)} payloads to patch store {path}.")
    return len(items)


class PatchStore:
    """Read-only random access to a sealed patch store; use as a context manager."""

    def __init__(self, path: str):
        if not os.path.isfile(path):
            raise MissingInputError(f"patch store not found: {path}")
        self.path = path
        self._file = open(path, "rb")
        try:
            self._index = self._read_index()
        except Exception:
            self._file.close()
            raise

    def _read_exact(self, n: int, what: str) -> bytes:
        data = self._file.read(n)
        if len(data) != n:
            raise PatchStoreError(f"truncated patch store {self.path}: unexpected end of file in {what}")
        return data

    def _read_index(self) -> dict[str, tuple[int, int]]:
        magic, version, count = _HEADER.unpack(self._read_exact(_HEADER.size, "header"))
        if magic != MAGIC:
            raise PatchStoreError(f"corrupt patch store {self.path}: bad magic {magic!r}")
        if version != VERSION:
            raise PatchStoreError(f"unsupported patch store version {version} in {self.path}")
        size = os.fstat(self._file.fileno()).st_size
        index = {}
        for _ in range(count):
            (key_len,) = _KEY_LEN.unpack(self._read_exact(_KEY_LEN.size, "index"))
            key = self._read_exact(key_len, "index").decode("utf-8")
            offset, length = _SPAN.unpack(self._read_exact(_SPAN.size, "index"))
            if offset + length > size:
                raise PatchStoreError(f"truncated patch store {self.path}: payload of '{key}' exceeds file size")
            index[key] = (offset, length)
        return index

    def keys(self) -> list[str]:
        return list(self._index)

    def __contains__(self, key: str) -> bool:
        return key in self._index

    def __len__(self) -> int:
        return len(self._index)

    def __iter__(self) -> Iterator[str]:
        return iter(self._index)

    def offsets(self) -> list[int]:
        return [offset for offset, _ in self._index.values()]

    def read(self, key: str) -> bytes:
        if key not in self._index:
            raise MissingKeyError(f"key '{key}' not in patch store {self.path}")
        offset, length = self._index[key]
        self._file.seek(offset)
        return self._read_exact(length, f"payload '{key}'")

    def read_patch(self, key: str) -> np.ndarray:
        return decode_patch(self.read(key))

    def close(self):
        self._file.close()

    def __enter__(self) -> PatchStore:
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()


def read_patch_store(path: str, key: str) -> bytes:
    """Read one payload by key without scanning the payload section."""
    with PatchStore(path) as store:
        return store.read(key)


def concat_patch_stores(paths: list[str], out_path: str, prefixes: list[str] | None = None) -> int:
    """Concatenate stores into one; keys may be namespaced with per-store `prefixes` to stay unique."""
    if prefixes is not None:
        assert len(prefixes) == len(paths), "one prefix per store"

    def entries():
        for k, path in enumerate(paths):
            with PatchStore(path) as store:
                for key in store.keys():
                    yield (f"{prefixes[k]}{key}" if prefixes else key), store.read(key)

    return write_patch_store(entries(), out_path)
