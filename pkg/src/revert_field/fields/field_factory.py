import logging
from typing import Optional

from ..core.models import FieldConfig, KernelConfig, PlateConfig
from .base_field import DistanceField
from .baselines import LogGpisField, RectangleField, SmoothMinField, build_loggpis_model
from .distance import FusedDistanceField, GpDistanceField
from .gp_field import PointCloud, build_model
from .kernels import KernelKind, KernelModel

logger = logging.getLogger(__name__)


class FieldFactory:
    """Builds distance fields by method name: ours[-kind], loggpis, smoothmin, fused, rect."""

    def __init__(self, kernel_config: Optional[KernelConfig] = None, field_config: Optional[FieldConfig] = None,
                 logger: logging.Logger = logger):
        self.kernel_config = kernel_config or KernelConfig()
        self.field_config = field_config or FieldConfig()
        self.logger = logger
        self.methods = {
            'ours': self._create_ours,
            'loggpis': self._create_loggpis,
            'smoothmin': self._create_smoothmin,
            'fused': self._create_fused,
            'rect': self._create_rect,
        }

    @property
    def supported_methods(self):
        kinds = [f"ours-{kind.value}" for kind in KernelKind]
        return list(self.methods) + kinds

    def kernel_for(self, method: str) -> KernelModel:
        kernel = KernelModel.from_config(self.kernel_config)
        if method.startswith('ours-'):
            kernel = kernel.with_kind(method.split('-', 1)[1])
        elif method == 'fused' and self.field_config.fusion_kernel:
            kernel = kernel.with_kind(self.field_config.fusion_kernel)
        return kernel

    def create_field(self, method: str = None, cloud: Optional[PointCloud] = None, sigma_n: Optional[float] = None,
                     plate: Optional[PlateConfig] = None) -> DistanceField:
        if method is None:
            method = self.field_config.method
        if method not in self.supported_methods:
            raise ValueError(f"Method '{method}' is not supported. Supported methods are: {self.supported_methods}")
        if method != 'rect' and cloud is None:
            raise ValueError(f"Method '{method}' needs a point cloud")

        sigma_n = self.field_config.sigma_n if sigma_n is None else sigma_n
        base = method.split('-', 1)[0]
        if base == 'rect':
            return self._create_rect(plate or PlateConfig())
        field = self.methods[base](method, cloud, sigma_n)
        field.set_logger(self.logger)
        self.logger.debug(f"Created {method} field over {cloud.count} points (sigma_n={sigma_n:.3e})")
        return field

    def _create_ours(self, method, cloud, sigma_n):
        return GpDistanceField(build_model(cloud, self.kernel_for(method), sigma_n, logger=self.logger))

    def _create_loggpis(self, method, cloud, sigma_n):
        return LogGpisField(build_loggpis_model(cloud, self.kernel_config.lengthscale, sigma_n))

    def _create_smoothmin(self, method, cloud, sigma_n):
        return SmoothMinField(cloud, self.field_config.smooth_min_lambda)

    def _create_fused(self, method, cloud, sigma_n):
        model = build_model(cloud, self.kernel_for(method), sigma_n, logger=self.logger)
        return FusedDistanceField(model, cloud, self.field_config.smooth_min_lambda,
                                  self.field_config.fusion_center, self.field_config.fusion_width)

    def _create_rect(self, plate: PlateConfig):
        return RectangleField(plate.width, plate.height)
