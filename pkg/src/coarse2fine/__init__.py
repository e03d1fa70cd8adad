"""Self-training semantic segmentation from coarse labels on toy scenes."""

from .records import IGNORE, PROV_IGNORE, PROV_MANUAL, PROV_PSEUDO, SceneDataset, SceneRecord

__version__ = "0.1.0"

__all__ = [
    "IGNORE",
    "PROV_MANUAL",
    "PROV_PSEUDO",
    "PROV_IGNORE",
    "SceneRecord",
    "SceneDataset",
    "__version__",
]
