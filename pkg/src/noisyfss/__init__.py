"""Few-shot point cloud segmentation under noisy support labels."""

from .core import Episode, NoiseConfig, PointCloud, ScaleSpec, SupportShot
from .embed import EmbeddingNet
from .mdns import mdns_filter

__all__ = ["Episode", "NoiseConfig", "PointCloud", "ScaleSpec", "SupportShot", "EmbeddingNet", "mdns_filter"]
__version__ = "0.1.0"
