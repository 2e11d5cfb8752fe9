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
from __future__ import annotations

import numpy as np
import pytest

from cribriform_mil.core import InvariantViolation, MissingInputError, MissingKeyError, PatchStoreError
from cribriform_mil.tiling import (
    PatchStore,
    concat_patch_stores,
    decode_patch,
    encode_patch,
    read_patch_store,
    write_patch_store,
)


@pytest.fixture
def payloads():
    return {"0000_0000": b"alpha", "0000_0001": b"beta" * 100, "0001_0001": b"\x00\xff" * 7}


def test_write_and_read(tmp_path, payloads):
    path = str(tmp_path / "scan.pstr")
    assert write_patch_store(payloads, path) == 3

    with PatchStore(path) as store:
        assert store.keys() == list(payloads), "Keys keep their insertion order"
        assert len(store) == 3 and "0000_0001" in store
        for key, payload in payloads.items():
            assert store.read(key) == payload
        offsets = store.offsets()
        assert offsets == sorted(offsets), "Payloads are laid out in key order"
        with pytest.raises(MissingKeyError):
            store.read("9999_9999")

    assert read_patch_store(path, "0000_0000") == b"alpha"


def test_store_rejects_bad_input(tmp_path):
    path = str(tmp_path / "bad.pstr")
    with pytest.raises(InvariantViolation):
        write_patch_store([("a", b"1"), ("a", b"2")], path)
    with pytest.raises(ValueError):
        write_patch_store([("a", b"")], path)
    with pytest.raises(MissingInputError):
        PatchStore(str(tmp_path / "absent.pstr"))


def test_corrupt_store(tmp_path, payloads):
    path = tmp_path / "scan.pstr"
    write_patch_store(payloads, str(path))
    data = path.read_bytes()

    # truncated payload section
    path.write_bytes(data[:-3])
    with pytest.raises(PatchStoreError):
        PatchStore(str(path))

    # bad magic
    path.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(PatchStoreError):
        PatchStore(str(path))

    # truncated header
    path.write_bytes(data[:6])
    with pytest.raises(PatchStoreError):
        PatchStore(str(path))


def test_concat_stores(tmp_path):
    first, second = str(tmp_path / "a.pstr"), str(tmp_path / "b.pstr")
    write_patch_store({"k": b"one"}, first)
    write_patch_store({"k": b"two"}, second)
    out = str(tmp_path / "all.pstr")
    assert concat_patch_stores([first, second], out, prefixes=["a/", "b/"]) == 2
    with PatchStore(out) as store:
        assert store.read("a/k") == b"one" and store.read("b/k") == b"two"

    # without prefixes the keys collide
    with pytest.raises(InvariantViolation):
        concat_patch_stores([first, second], str(tmp_path / "dup.pstr"))


def test_patch_codec_is_lossless():
    rng = np.random.default_rng(0)
    patch = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    assert np.array_equal(decode_patch(encode_patch(patch)), patch)
