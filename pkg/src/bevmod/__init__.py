"""BEV moving-object-detection tooling.

Auto moving/static labeling from ego-motion and 3D tracks, BEV
ground-truth rasterization, an IPM re-projection baseline, a toy
two-stream RGB+flow segmentation network, and range-binned mIoU
evaluation.
"""

__version__ = "0.1.0"
