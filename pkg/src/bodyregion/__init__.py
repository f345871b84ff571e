"""Training-free body region detection for CT/MR volumes from multi-organ label maps."""

from .decision import ClassificationResult, DecisionPolicy, aggregate, classify_volume, score_region
from .labels import RegionSet, format_label, normalize, parse, region_order
from .taxonomy import Taxonomy, builtin, load_override
from .volume_io import Volume, build_presence_index, canonicalize, load_volume, save_volume

__version__ = "0.1.0"

__all__ = [
    "ClassificationResult", "DecisionPolicy", "RegionSet", "Taxonomy", "Volume", "aggregate",
    "build_presence_index", "builtin", "canonicalize", "classify_volume", "format_label",
    "load_override", "load_volume", "normalize", "parse", "region_order", "save_volume",
    "score_region",
]
