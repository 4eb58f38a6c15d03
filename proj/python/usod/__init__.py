"""Unsupervised salient-object-detection core operations.

All array arguments are numpy arrays of doubles. Image batches use NCHW
layout; single HxW or CxHxW planes are accepted wherever a batch is and are
returned in the caller's shape.
"""

try:  # installed wheel: the extension lives inside the package
    from . import _usod as _ext
except ImportError:  # build tree: the extension directory is on PYTHONPATH
    import _usod as _ext

binarize_certain = _ext.binarize_certain
component_areas = _ext.component_areas
unss = _ext.unss
refine = _ext.refine
f_beta = _ext.f_beta
mae = _ext.mae
e_measure = _ext.e_measure
partial_bce = _ext.partial_bce
iou_loss = _ext.iou_loss
lsc_loss = _ext.lsc_loss
generate_synthetic_dataset = _ext.generate_synthetic_dataset
train = _ext.train
evaluate = _ext.evaluate

__version__ = "0.1.0"
__all__ = [
    "binarize_certain",
    "component_areas",
    "unss",
    "refine",
    "f_beta",
    "mae",
    "e_measure",
    "partial_bce",
    "iou_loss",
    "lsc_loss",
    "generate_synthetic_dataset",
    "train",
    "evaluate",
]
