from .discretize import DEFAULT_BIN_WIDTH, EmptyRegionError, QuantizedRegion, discretize
from .extract import ExtractionSettings, as_dict, crop_to_region, extract_all, to_csv, to_json
from .firstorder import first_order
from .names import FAMILIES, FEATURES, NUM_FEATURES, QUALIFIED_NAMES
from .shape import shape_features, slab_mesh
from .texture import (glcm_features, glcm_matrices, gldm_features, glrlm_features,
                      glszm_features, ngtdm_features)

__all__ = [
    "DEFAULT_BIN_WIDTH", "EmptyRegionError", "QuantizedRegion", "discretize",
    "ExtractionSettings", "as_dict", "crop_to_region", "extract_all", "to_csv", "to_json",
    "first_order", "FAMILIES", "FEATURES", "NUM_FEATURES", "QUALIFIED_NAMES",
    "shape_features", "slab_mesh", "glcm_features", "glcm_matrices", "gldm_features",
    "glrlm_features", "glszm_features", "ngtdm_features",
]
