"""Feature preparation: standardization, optical flow, stereo disparity."""

from .normalize import apply_zscore, zscore_normalize
from .flow import FarnebackParams, FlowField, farneback_flow, flow_polar, flow_to_rgb
from .disparity import DisparityMap, sgbm_disparity

__all__ = [
    "zscore_normalize", "apply_zscore",
    "FarnebackParams", "FlowField", "farneback_flow", "flow_polar", "flow_to_rgb",
    "DisparityMap", "sgbm_disparity",
]
