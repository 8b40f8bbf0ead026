"""2D Gaussian splatting with directional-consistency adaptive density control.

The modules are layered: ``core`` (primitives, rasters, footprints), ``render``,
``grad`` (analytic gradients), ``adc`` (split criteria and placement),
``optim`` (Adam fit loop), ``metrics`` and the experiment harness
(``scenes``, ``toybench``, ``io``, ``config``, ``cli``).
"""

from .adc import AdcConfig, Criterion, Placement
from .core import Gaussian2D, GaussianSet, Raster
from .metrics import dc_map, psnr, ssim
from .optim import TrainConfig, fit
from .render import render

__all__ = ["AdcConfig", "Criterion", "Placement", "Gaussian2D", "GaussianSet", "Raster",
           "dc_map", "psnr", "ssim", "TrainConfig", "fit", "render"]
__version__ = "0.1.0"
