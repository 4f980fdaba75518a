"""Graph-convolution networks for point-cloud classification and
segmentation, built on a small numpy autograd core with numba-accelerated
neighbor search."""

__version__ = "0.1.0"

from .backend import active_backend, set_backend
from .cloud import PointCloud
from .module import PointViGConfig, PointViGModule
from .networks import ModelSpec, StageSpec, build_model
from .tensor import Tensor

__all__ = [
    "PointCloud", "Tensor", "PointViGConfig", "PointViGModule",
    "ModelSpec", "StageSpec", "build_model",
    "active_backend", "set_backend",
    "__version__",
]
