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


class CribriformError(Exception):
    """Base class for every error raised by this library."""

    exit_code = 3


class ConfigError(CribriformError, ValueError):
    """Invalid or unparsable run configuration."""

    exit_code = 1


class MissingInputError(CribriformError, FileNotFoundError):
    """An upstream artifact or input file does not exist."""

    exit_code = 2


class InvariantViolation(CribriformError):
    """A data invariant was violated (duplicate ids, leakage, inconsistent shapes)."""

    exit_code = 3


class ManifestError(InvariantViolation):
    """Manifest parse or validation error.

    Args:
        message (str): Human readable description.
        line (int, optional): 1-based line number in the manifest file (header is line 1).
        offending_id (str, optional): The slide or patient id at fault.
    """

    def __init__(self, message: str, line: int | None = None, offending_id: str | None = None):
        self.line = line
        self.offending_id = offending_id
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class PatchStoreError(CribriformError):
    """Corrupt header, bad magic, or truncated patch store."""


class MissingKeyError(CribriformError, KeyError):
    """A key is not present in a patch store."""

    def __str__(self):
        return str(self.args[0]) if self.args else "missing key"


class RegistrationError(CribriformError, ValueError):
    """Masks cannot be registered (empty mask or dimension mismatch)."""


class DegenerateMetricError(CribriformError, ValueError):
    """A metric is undefined on the given input (e.g. single-class labels)."""


class CheckpointError(InvariantViolation):
    """Corrupt, truncated or shape-mismatched checkpoint file."""
