"""Portable bank artifact bundling codewords, hints, and their composition.

The file is a single JSON document with round-trip exact floats, so saves
are byte-identical for a given bank and loads reproduce every coordinate.
The composition ``f_k = f_q + f_h`` is re-derived and enforced both before
writing and after reading, which makes hand-edited files detectable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParseError, PreconditionError
from .hints import HintSet
from .quantizer import Codebook

BANK_FORMAT_VERSION = 1


@dataclass(frozen=True)
class KnowledgeBank:
    """Versioned container for the quantized codewords ``f_q``, the learned
    hints ``f_h``, and the composed features ``f_k``."""

    n: int
    dim: int
    f_q: np.ndarray
    f_h: np.ndarray
    f_k: np.ndarray
    meta: dict[str, str] = field(default_factory=dict)
    version: int = BANK_FORMAT_VERSION

    def __post_init__(self):
        for name in ("f_q", "f_h", "f_k"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        self.validate()

    def validate(self) -> None:
        """Re-check every invariant; also called by ``save_bank``."""
        if self.version != BANK_FORMAT_VERSION:
            raise PreconditionError(
                f"unsupported bank format version {self.version!r} "
                f"(supported: {BANK_FORMAT_VERSION})"
            )
        if self.n < 1 or self.dim < 1:
            raise PreconditionError("n and dim must be positive")
        for name in ("f_q", "f_h", "f_k"):
            arr = getattr(self, name)
            if arr.shape != (self.n, self.dim):
                raise DimensionError(
                    f"{name} has shape {arr.shape}, expected ({self.n}, {self.dim})"
                )
            if not np.all(np.isfinite(arr)):
                raise PreconditionError(f"{name} must be finite")
        if not np.array_equal(self.f_k, self.f_q + self.f_h):
            raise PreconditionError(
                "composed features f_k must equal f_q + f_h exactly"
            )
        if not all(
            isinstance(k, str) and isinstance(v, str) for k, v in self.meta.items()
        ):
            raise PreconditionError("meta must map strings to strings")


def assemble_bank(codebook: Codebook, hints: HintSet, meta: dict[str, str]) -> KnowledgeBank:
    """Compose ``f_k = f_q + f_h`` and bundle it with provenance metadata."""
    if (codebook.n, codebook.dim) != (hints.n, hints.dim):
        raise DimensionError(
            f"codebook (n, dim)=({codebook.n}, {codebook.dim}) does not match "
            f"hints ({hints.n}, {hints.dim})"
        )
    f_q = codebook.centroids.copy()
    f_h = hints.hints.copy()
    return KnowledgeBank(
        n=codebook.n, dim=codebook.dim, f_q=f_q, f_h=f_h, f_k=f_q + f_h, meta=dict(meta)
    )


def _matrix_to_lists(arr: np.ndarray) -> list[list[float]]:
    return [[float(x) for x in row] for row in arr]


def _lists_to_matrix(value, n: int, dim: int, path, key: str) -> np.ndarray:
    if not isinstance(value, list) or len(value) != n:
        raise ParseError(f"{path}: {key} must be a list of {n} rows")
    for row in value:
        if (
            not isinstance(row, list)
            or len(row) != dim
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in row)
        ):
            raise ParseError(f"{path}: {key} rows must be number arrays of length {dim}")
    return np.asarray(value, dtype=np.float64)


def save_bank(bank: KnowledgeBank, path) -> None:
    """Write the bank as one JSON document; output bytes are deterministic."""
    bank.validate()
    doc = {
        "version": bank.version,
        "n": bank.n,
        "dim": bank.dim,
        "f_q": _matrix_to_lists(bank.f_q),
        "f_h": _matrix_to_lists(bank.f_h),
        "f_k": _matrix_to_lists(bank.f_k),
        "meta": {str(k): str(v) for k, v in sorted(bank.meta.items())},
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(doc, sort_keys=True, allow_nan=False))
        fh.write("\n")


def load_bank(path) -> KnowledgeBank:
    """Parse and validate a bank file; a tampered composition is rejected."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: expected a JSON object")
    missing = {"version", "n", "dim", "f_q", "f_h", "f_k", "meta"} - set(doc)
    if missing:
        raise ParseError(f"{path}: missing keys {sorted(missing)}")
    version = doc["version"]
    if not isinstance(version, int) or version != BANK_FORMAT_VERSION:
        raise ParseError(
            f"{path}: unsupported bank format version {version!r} "
            f"(supported: {BANK_FORMAT_VERSION})"
        )
    n, dim = doc["n"], doc["dim"]
    if not isinstance(n, int) or not isinstance(dim, int) or n < 1 or dim < 1:
        raise ParseError(f"{path}: n and dim must be positive integers")
    f_q = _lists_to_matrix(doc["f_q"], n, dim, path, "f_q")
    f_h = _lists_to_matrix(doc["f_h"], n, dim, path, "f_h")
    f_k = _lists_to_matrix(doc["f_k"], n, dim, path, "f_k")
    meta = doc["meta"]
    if not isinstance(meta, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in meta.items()
    ):
        raise ParseError(f"{path}: meta must map strings to strings")
    return KnowledgeBank(n=n, dim=dim, f_q=f_q, f_h=f_h, f_k=f_k, meta=meta, version=version)
