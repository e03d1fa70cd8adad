"""Shared dataset records: scenes, label masks, provenance.

Labels are uint8 (H, W) with 255 reserved for IGNORE. Every record carries a
per-pixel provenance channel saying where each label came from: drawn by the
annotator (manual), filled in by a pseudo-labeling round (pseudo), or not
labeled at all (ignore). Images are stored channel-major float32 in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

IGNORE = 255

# provenance codes
PROV_MANUAL = 0
PROV_PSEUDO = 1
PROV_IGNORE = 2

# domain codes used on disk; in memory we use the strings
DOMAINS = ("synthetic", "real-coarse", "real-fine")
DOMAIN_CODE = {name: i for i, name in enumerate(DOMAINS)}


@dataclass
class SceneRecord:
    """One image with its label mask and per-pixel provenance."""

    record_id: str
    domain: str  # one of DOMAINS, or "augmented" for transient training items
    image: np.ndarray  # (3, H, W) float32, values in [0, 1]
    label: np.ndarray  # (H, W) uint8, IGNORE = 255
    provenance: np.ndarray | None = None  # (H, W) uint8, derived when omitted

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ValueError(f"image must be (3, H, W), got {self.image.shape}")
        if self.label.shape != self.image.shape[1:]:
            raise ValueError(
                f"label {self.label.shape} does not match image {self.image.shape}"
            )
        if self.label.dtype != np.uint8:
            self.label = self.label.astype(np.uint8)
        if self.provenance is None:
            self.provenance = provenance_from_label(self.label)

    @property
    def height(self) -> int:
        return self.image.shape[1]

    @property
    def width(self) -> int:
        return self.image.shape[2]

    def copy(self) -> "SceneRecord":
        return SceneRecord(
            record_id=self.record_id,
            domain=self.domain,
            image=self.image.copy(),
            label=self.label.copy(),
            provenance=self.provenance.copy(),
        )

    def with_labels(self, label: np.ndarray, provenance: np.ndarray) -> "SceneRecord":
        return replace(self, label=label, provenance=provenance)


def provenance_from_label(label: np.ndarray) -> np.ndarray:
    """Default provenance: labeled pixels are manual, the rest ignore."""
    prov = np.where(label == IGNORE, PROV_IGNORE, PROV_MANUAL)
    return prov.astype(np.uint8)


def check_provenance(label: np.ndarray, provenance: np.ndarray) -> list[str]:
    """Return human-readable consistency violations (empty list when clean)."""
    problems = []
    ign = label == IGNORE
    if np.any((provenance == PROV_MANUAL) & ign):
        problems.append("provenance 'manual' on IGNORE pixel")
    if np.any((provenance == PROV_PSEUDO) & ign):
        problems.append("provenance 'pseudo' on IGNORE pixel")
    if np.any((provenance == PROV_IGNORE) & ~ign):
        problems.append("provenance 'ignore' on labeled pixel")
    if np.any(provenance > PROV_IGNORE):
        problems.append("provenance code out of range")
    return problems


@dataclass
class SceneDataset:
    """An ordered collection of records sharing one class count."""

    num_classes: int
    records: list[SceneRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def ids(self) -> list[str]:
        return [r.record_id for r in self.records]

    def by_domain(self, domain: str) -> list[SceneRecord]:
        return [r for r in self.records if r.domain == domain]

    def extend(self, records):
        self.records.extend(records)
        return self
