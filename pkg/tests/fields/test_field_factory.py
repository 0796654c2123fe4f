import numpy as np
import pytest
from unittest.mock import Mock

from revert_field.core.models import FieldConfig, KernelConfig, PlateConfig
from revert_field.fields.baselines import LogGpisField, RectangleField, SmoothMinField
from revert_field.fields.distance import FusedDistanceField, GpDistanceField
from revert_field.fields.field_factory import FieldFactory
from revert_field.fields.gp_field import PointCloud
from revert_field.fields.kernels import KernelKind


@pytest.fixture
def mock_logger():
    return Mock()


@pytest.fixture
def factory(mock_logger):
    return FieldFactory(KernelConfig(kind="rq", lengthscale=0.1), FieldConfig(sigma_n=1e-3), logger=mock_logger)


@pytest.fixture
def cloud():
    xs = np.linspace(0.0, 1.0, 21)
    return PointCloud(np.column_stack([xs, np.zeros_like(xs)]))


@pytest.mark.parametrize("method, cls", [
    ("ours", GpDistanceField),
    ("ours-se", GpDistanceField),
    ("loggpis", LogGpisField),
    ("smoothmin", SmoothMinField),
    ("fused", FusedDistanceField),
])
def test_create_field(factory, cloud, mock_logger, method, cls):
    field = factory.create_field(method, cloud)
    assert isinstance(field, cls)
    assert field.logger is mock_logger


def test_default_method_comes_from_config(factory, cloud):
    assert isinstance(factory.create_field(cloud=cloud), GpDistanceField)


def test_kernel_kind_suffix(factory, cloud):
    assert factory.kernel_for("ours-matern").kind is KernelKind.MATERN32
    assert factory.kernel_for("ours").kind is KernelKind.RATIONAL_QUADRATIC
    assert factory.create_field("ours-se", cloud).name == "ours-se"


def test_sigma_n_override(factory, cloud):
    field = factory.create_field("ours", cloud, sigma_n=0.05)
    assert field.model.sigma_n == 0.05


def test_rect_needs_no_cloud(factory):
    field = factory.create_field("rect", plate=PlateConfig(width=2.0, height=1.0))
    assert isinstance(field, RectangleField)
    assert field.width == 2.0


def test_unsupported_method(factory, cloud):
    with pytest.raises(ValueError, match="Method 'ours-cubic' is not supported"):
        factory.create_field("ours-cubic", cloud)


def test_missing_cloud(factory):
    with pytest.raises(ValueError, match="needs a point cloud"):
        factory.create_field("smoothmin")


def test_supported_methods(factory):
    assert set(factory.supported_methods) == {
        "ours", "loggpis", "smoothmin", "fused", "rect", "ours-se", "ours-rq", "ours-matern"}


def test_fused_field_uses_its_own_kernel(factory, cloud, mock_logger):
    assert factory.kernel_for("fused").kind is KernelKind.MATERN32
    assert factory.create_field("fused", cloud).model.kernel.kind is KernelKind.MATERN32
    plain = FieldFactory(KernelConfig(kind="rq", lengthscale=0.1), FieldConfig(fusion_kernel=None), logger=mock_logger)
    assert plain.kernel_for("fused").kind is KernelKind.RATIONAL_QUADRATIC
