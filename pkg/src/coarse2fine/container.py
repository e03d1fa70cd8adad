"""Single-file dataset container.

Layout, all little-endian: magic "C2FD", format version u16, record count
u32, class count u16, then per record: id length u16 + UTF-8 id, domain tag
u8, height u16, width u16, image as 3*H*W float32 (planar, channel-major),
label as H*W u8 (255 = IGNORE), provenance as H*W u8. Numeric payloads are
written bit for bit, so parse(serialize(d)) reproduces d exactly.
"""

from __future__ import annotations

import struct

import numpy as np

from .records import (
    DOMAIN_CODE,
    DOMAINS,
    IGNORE,
    SceneDataset,
    SceneRecord,
    check_provenance,
)

MAGIC = b"C2FD"
VERSION = 1
_HEADER = struct.Struct("<HIH")  # version, count, classes
_RECORD_HEAD = struct.Struct("<BHH")  # domain, height, width


def save_dataset(path, dataset: SceneDataset) -> None:
    if not 1 <= dataset.num_classes <= 0xFFFF:
        raise ValueError(f"class count {dataset.num_classes} does not fit the format")
    if len(dataset) > 0xFFFFFFFF:
        raise ValueError("too many records")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_HEADER.pack(VERSION, len(dataset), dataset.num_classes))
        for rec in dataset:
            if rec.domain not in DOMAIN_CODE:
                raise ValueError(
                    f"record {rec.record_id!r}: domain {rec.domain!r} is not storable"
                )
            rid = rec.record_id.encode("utf-8")
            if len(rid) > 0xFFFF:
                raise ValueError(f"record id too long ({len(rid)} bytes)")
            h, w = rec.label.shape
            if h > 0xFFFF or w > 0xFFFF or h < 1 or w < 1:
                raise ValueError(f"record {rec.record_id!r}: size {h}x{w} unstorable")
            f.write(struct.pack("<H", len(rid)))
            f.write(rid)
            f.write(_RECORD_HEAD.pack(DOMAIN_CODE[rec.domain], h, w))
            f.write(np.ascontiguousarray(rec.image, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(rec.label, dtype=np.uint8).tobytes())
            f.write(np.ascontiguousarray(rec.provenance, dtype=np.uint8).tobytes())


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise ValueError(
                f"@ byte {self.pos}: truncated (need {n} bytes, "
                f"{len(self.blob) - self.pos} left)"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out


def _parse_records(blob: bytes):
    """Yield (record, start_offset); raises ValueError on structural damage."""
    r = _Reader(blob)
    if r.take(4) != MAGIC:
        raise ValueError("@ byte 0: bad magic, not a dataset container")
    version, count, classes = _HEADER.unpack(r.take(_HEADER.size))
    if version != VERSION:
        raise ValueError(f"@ byte 4: unsupported format version {version}")
    if classes < 1:
        raise ValueError("@ byte 10: class count must be positive")
    records = []
    for k in range(count):
        start = r.pos
        (id_len,) = struct.unpack("<H", r.take(2))
        try:
            rid = r.take(id_len).decode("utf-8")
        except UnicodeDecodeError as err:
            raise ValueError(f"@ byte {start}: record id is not UTF-8") from err
        domain_code, h, w = _RECORD_HEAD.unpack(r.take(_RECORD_HEAD.size))
        if domain_code >= len(DOMAINS):
            raise ValueError(f"@ byte {start}: unknown domain tag {domain_code}")
        if h < 1 or w < 1:
            raise ValueError(f"@ byte {start}: empty record {h}x{w}")
        image = np.frombuffer(r.take(3 * h * w * 4), dtype="<f4").reshape(3, h, w).copy()
        label = np.frombuffer(r.take(h * w), dtype=np.uint8).reshape(h, w).copy()
        prov = np.frombuffer(r.take(h * w), dtype=np.uint8).reshape(h, w).copy()
        records.append((
            SceneRecord(record_id=rid, domain=DOMAINS[domain_code], image=image,
                        label=label, provenance=prov),
            start,
        ))
    if r.pos != len(blob):
        raise ValueError(f"@ byte {r.pos}: {len(blob) - r.pos} trailing bytes")
    return classes, records


def load_dataset(path) -> SceneDataset:
    with open(path, "rb") as f:
        blob = f.read()
    classes, records = _parse_records(blob)
    return SceneDataset(classes, [rec for rec, _ in records])


def verify_dataset(path) -> list[str]:
    """All container invariants, as human-readable violation strings.

    Structural damage stops the walk (nothing after it can be trusted);
    semantic problems are collected per record with its id and byte offset.
    """
    with open(path, "rb") as f:
        blob = f.read()
    try:
        classes, records = _parse_records(blob)
    except ValueError as err:
        return [str(err)]
    problems = []
    seen_ids = {}
    for rec, start in records:
        where = f"record {rec.record_id!r} @ byte {start}"
        if rec.record_id in seen_ids:
            problems.append(f"{where}: duplicate id (first @ byte {seen_ids[rec.record_id]})")
        else:
            seen_ids[rec.record_id] = start
        labeled = rec.label[rec.label != IGNORE]
        if labeled.size and int(labeled.max()) >= classes:
            problems.append(
                f"{where}: label value {int(labeled.max())} outside {classes} classes"
            )
        for msg in check_provenance(rec.label, rec.provenance):
            problems.append(f"{where}: {msg}")
        if not np.all(np.isfinite(rec.image)):
            problems.append(f"{where}: non-finite image values")
        if rec.domain == "synthetic" and np.any(rec.label == IGNORE):
            problems.append(f"{where}: synthetic record has IGNORE pixels")
    return problems
