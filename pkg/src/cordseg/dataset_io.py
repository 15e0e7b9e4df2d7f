"""Bit-exact persistence: binary PGM images and JSON dataset manifests."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class PgmError(ValueError):
    """Base for malformed PGM files."""


class UnsupportedPgmError(PgmError):
    """Wrong magic or maxval; only binary P5 with maxval 255 is accepted."""


class TruncatedPgmError(PgmError):
    """Pixel payload shorter than width * height."""


class NotBinaryError(ValueError):
    """Image carries gray values other than 0 and 255."""


class ManifestError(ValueError):
    """Base for malformed manifests."""


class DuplicateCaseIdError(ManifestError):
    pass


class MissingFileError(ManifestError):
    pass


@dataclass
class Case:
    id: str
    image: str
    mask: str | None
    split: str  # "train" | "test"
    label: str | None = None  # "positive" | "negative"
    true_count: int | None = None


@dataclass
class DatasetManifest:
    cases: list[Case]
    root: Path = field(default_factory=Path)  # resolved at load time, not serialized

    def split(self, which: str) -> list[Case]:
        return [c for c in self.cases if c.split == which]

    def image_path(self, case: Case) -> Path:
        return self.root / case.image

    def mask_path(self, case: Case) -> Path | None:
        return None if case.mask is None else self.root / case.mask


def save_pgm(image: np.ndarray, path: str | Path) -> None:
    """Write binary P5 with the exact header `P5\\n<w> <h>\\n255\\n`."""
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError(f"expected a 2D uint8 image, got {img.dtype} {img.shape}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def _read_token(blob: bytes, pos: int) -> tuple[bytes, int]:
    # skip whitespace and '#' comment lines between header fields
    n = len(blob)
    while pos < n:
        if blob[pos : pos + 1].isspace():
            pos += 1
        elif blob[pos : pos + 1] == b"#":
            while pos < n and blob[pos : pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and not blob[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise TruncatedPgmError("header ended before all fields were read")
    return blob[start:pos], pos


def load_pgm(path: str | Path) -> np.ndarray:
    """Read a binary P5 PGM with maxval 255 into a 2D uint8 array."""
    blob = Path(path).read_bytes()
    magic, pos = _read_token(blob, 0)
    if magic != b"P5":
        raise UnsupportedPgmError(f"{path}: unsupported format {magic!r}, need binary P5")
    fields = []
    for _ in range(3):
        token, pos = _read_token(blob, pos)
        try:
            fields.append(int(token))
        except ValueError as exc:
            raise PgmError(f"{path}: non-numeric header field {token!r}") from exc
    w, h, maxval = fields
    if maxval != 255:
        raise UnsupportedPgmError(f"{path}: maxval {maxval} unsupported, need 255")
    if w <= 0 or h <= 0:
        raise PgmError(f"{path}: non-positive dimensions {w}x{h}")
    pos += 1  # single whitespace byte after maxval
    payload = blob[pos : pos + w * h]
    if len(payload) < w * h:
        raise TruncatedPgmError(
            f"{path}: payload holds {len(payload)} bytes, expected {w * h}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()


def mask_to_image(mask: np.ndarray) -> np.ndarray:
    """Binary mask to 8-bit image: 1 -> 255, 0 -> 0."""
    return np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)


def image_to_mask(image: np.ndarray) -> np.ndarray:
    """8-bit image to binary mask; any value besides 0 and 255 is an error."""
    img = np.asarray(image)
    if not np.isin(img, (0, 255)).all():
        bad = img[~np.isin(img, (0, 255))].flat[0]
        raise NotBinaryError(f"gray value {bad} is neither 0 nor 255")
    return img == 255


_SPLITS = ("train", "test")
_LABELS = ("positive", "negative")


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    doc = {
        "cases": [
            {
                "id": c.id,
                "image": c.image,
                "mask": c.mask,
                "split": c.split,
                "label": c.label,
                "true_count": c.true_count,
            }
            for c in manifest.cases
        ]
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_manifest(path: str | Path, check_files: bool = True) -> DatasetManifest:
    """Parse and validate a manifest; file paths resolve against its directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("cases"), list):
        raise ManifestError(f"{path}: expected an object with a 'cases' list")
    root = path.parent
    cases: list[Case] = []
    seen: set[str] = set()
    for i, rec in enumerate(doc["cases"]):
        if not isinstance(rec, dict):
            raise ManifestError(f"{path}: case {i} is not an object")
        try:
            case = Case(
                id=rec["id"],
                image=rec["image"],
                mask=rec.get("mask"),
                split=rec["split"],
                label=rec.get("label"),
                true_count=rec.get("true_count"),
            )
        except KeyError as exc:
            raise ManifestError(f"{path}: case {i} is missing field {exc}") from exc
        if not isinstance(case.id, str) or not isinstance(case.image, str):
            raise ManifestError(f"{path}: case {i} has non-string id/image")
        if case.split not in _SPLITS:
            raise ManifestError(f"{path}: case {case.id!r} has split {case.split!r}")
        if case.label is not None and case.label not in _LABELS:
            raise ManifestError(f"{path}: case {case.id!r} has label {case.label!r}")
        if case.id in seen:
            raise DuplicateCaseIdError(f"{path}: duplicate case id {case.id!r}")
        seen.add(case.id)
        if check_files:
            if not (root / case.image).is_file():
                raise MissingFileError(f"{path}: missing image file {case.image}")
            if case.mask is not None and not (root / case.mask).is_file():
                raise MissingFileError(f"{path}: missing mask file {case.mask}")
        cases.append(case)
    return DatasetManifest(cases=cases, root=root)
