"""Feature-level fusion and template persistence.

A fused template is the order-preserving concatenation of a fingerprint
feature set followed by an ear feature set, each keypoint keeping its
modality tag so unimodal match scores stay available downstream.

File format (little-endian): magic ``FUSD``, version u16 = 1,
subject-id as u16 length + UTF-8 bytes, entry count u32, then per entry
modality u8 (0 = fingerprint, 1 = ear), x/y/scale/orientation f32 and a
128 x f32 descriptor; a CRC32 of all preceding bytes closes the file.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from fuseid.sift import FeatureSet, Keypoint

MAGIC = b"FUSD"
VERSION = 1

FINGERPRINT = "fingerprint"
EAR = "ear"
_MODALITY_CODE = {FINGERPRINT: 0, EAR: 1}
_MODALITY_NAME = {0: FINGERPRINT, 1: EAR}


class TemplateError(ValueError):
    """Malformed template file or invalid fusion input."""


@dataclass
class FusedTemplate:
    """Stored biometric record: tagged keypoints of one subject.

    Templates are immutable after construction. ``reduced`` and
    ``provenance`` are in-memory bookkeeping; the wire format (and
    template equality) covers the subject id and entries.
    """

    subject_id: str
    entries: list[tuple[str, Keypoint]]
    reduced: bool = False
    provenance: tuple[str, ...] = field(default_factory=tuple)
    _desc_matrix: np.ndarray | None = field(
        default=None, repr=False, init=False, compare=False
    )

    def __len__(self) -> int:
        return len(self.entries)

    def descriptor_matrix(self) -> np.ndarray:
        """(n, 128) float64 stack of entry descriptors, computed once."""
        if self._desc_matrix is None:
            if self.entries:
                stacked = np.stack([kp.descriptor for _, kp in self.entries])
                self._desc_matrix = stacked.astype(np.float64)
            else:
                self._desc_matrix = np.zeros((0, 128), dtype=np.float64)
        return self._desc_matrix

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FusedTemplate):
            return NotImplemented
        return self.subject_id == other.subject_id and self.entries == other.entries

    def filter(self, modality: str) -> "FusedTemplate":
        """Sub-template holding only the entries of one modality."""
        if modality not in _MODALITY_CODE:
            raise TemplateError(f"unknown modality {modality!r}")
        return FusedTemplate(
            subject_id=self.subject_id,
            entries=[e for e in self.entries if e[0] == modality],
            reduced=self.reduced,
            provenance=self.provenance,
        )

    def keypoints(self) -> list[Keypoint]:
        return [kp for _, kp in self.entries]


def fuse(fp: FeatureSet, ear: FeatureSet) -> FusedTemplate:
    """Concatenate fingerprint then ear keypoints into one template."""
    if fp.modality != FINGERPRINT:
        raise TemplateError(f"first argument must be a fingerprint set, got {fp.modality!r}")
    if ear.modality != EAR:
        raise TemplateError(f"second argument must be an ear set, got {ear.modality!r}")
    if fp.source_id != ear.source_id:
        raise TemplateError(
            f"subject mismatch: {fp.source_id!r} vs {ear.source_id!r}"
        )
    entries = [(FINGERPRINT, kp) for kp in fp.keypoints]
    entries += [(EAR, kp) for kp in ear.keypoints]
    return FusedTemplate(
        subject_id=fp.source_id,
        entries=entries,
        reduced=False,
        provenance=(fp.source_id,),
    )


def feature_set_template(fs: FeatureSet) -> FusedTemplate:
    """Wrap a single-modality feature set as a template for persistence."""
    if fs.modality not in _MODALITY_CODE:
        raise TemplateError(f"unknown modality {fs.modality!r}")
    return FusedTemplate(
        subject_id=fs.source_id,
        entries=[(fs.modality, kp) for kp in fs.keypoints],
        reduced=False,
        provenance=(fs.source_id,),
    )


def as_feature_set(t: FusedTemplate, default_modality: str = FINGERPRINT) -> FeatureSet:
    """Unwrap a single-modality template back into a feature set.

    ``default_modality`` labels an empty template, which carries no tags
    of its own.
    """
    modalities = {m for m, _ in t.entries}
    if len(modalities) > 1:
        raise TemplateError(
            f"template {t.subject_id!r} mixes modalities {sorted(modalities)}"
        )
    modality = modalities.pop() if modalities else default_modality
    return FeatureSet(
        modality=modality, source_id=t.subject_id, keypoints=t.keypoints()
    )


_ENTRY_HEAD = struct.Struct("<Bffff")


def write_template(t: FusedTemplate, path: str | os.PathLike) -> None:
    sid = t.subject_id.encode("utf-8")
    if len(sid) > 0xFFFF:
        raise TemplateError("subject id too long to encode")
    parts = [MAGIC, struct.pack("<H", VERSION), struct.pack("<H", len(sid)), sid]
    parts.append(struct.pack("<I", len(t.entries)))
    for modality, kp in t.entries:
        code = _MODALITY_CODE.get(modality)
        if code is None:
            raise TemplateError(f"unknown modality {modality!r}")
        parts.append(_ENTRY_HEAD.pack(code, kp.x, kp.y, kp.scale, kp.orientation))
        parts.append(np.asarray(kp.descriptor, dtype="<f4").tobytes())
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def read_template(path: str | os.PathLike) -> FusedTemplate:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise TemplateError(f"unreadable template file: {path}: {exc}") from exc
    if len(data) < len(MAGIC) + 2 + 2 + 4 + 4:
        raise TemplateError(f"truncated template file: {path}")
    if data[:4] != MAGIC:
        raise TemplateError(f"bad magic bytes (not a template file): {path}")

    body, (crc_stored,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise TemplateError(f"checksum failure: {path}")

    pos = 4
    (version,) = struct.unpack_from("<H", body, pos)
    pos += 2
    if version != VERSION:
        raise TemplateError(f"unsupported template version {version}: {path}")
    (sid_len,) = struct.unpack_from("<H", body, pos)
    pos += 2
    if pos + sid_len > len(body):
        raise TemplateError(f"truncated template file: {path}")
    subject_id = body[pos : pos + sid_len].decode("utf-8")
    pos += sid_len
    if pos + 4 > len(body):
        raise TemplateError(f"truncated template file: {path}")
    (count,) = struct.unpack_from("<I", body, pos)
    pos += 4

    entry_size = _ENTRY_HEAD.size + 128 * 4
    if pos + count * entry_size != len(body):
        raise TemplateError(f"truncated template file: {path}")
    entries: list[tuple[str, Keypoint]] = []
    for _ in range(count):
        code, x, y, scale, orientation = _ENTRY_HEAD.unpack_from(body, pos)
        pos += _ENTRY_HEAD.size
        modality = _MODALITY_NAME.get(code)
        if modality is None:
            raise TemplateError(f"unknown modality code {code}: {path}")
        descriptor = np.frombuffer(body, dtype="<f4", count=128, offset=pos).copy()
        pos += 128 * 4
        entries.append(
            (modality, Keypoint(x=x, y=y, scale=scale, orientation=orientation, descriptor=descriptor))
        )
    return FusedTemplate(subject_id=subject_id, entries=entries)
