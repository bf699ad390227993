import numpy as np
import pytest

from ceilloc import synthbench as sb
from ceilloc.config import PipelineConfig


@pytest.fixture(scope="session")
def small_scene():
    """Compact clean scene for fast pipeline tests (200x160 views)."""
    params = sb.SceneParams(
        texture_width=720,
        texture_height=560,
        scale_m_per_px=0.05,
        path_points=12,
        path_spacing_m=0.2,
        view_width=200,
        view_height=160,
        n_lines=25,
        n_blobs=15,
    )
    return sb.generate_scene(7, params)


@pytest.fixture(scope="session")
def small_cfg():
    """Matching configuration sized for the small scene."""
    return PipelineConfig(
        l_patch=21,
        l_sr=40,
        n_points=12,
        grid_points=12,
        margin=30,
        scale_m_per_px=0.05,
    )


@pytest.fixture(scope="session")
def distractor_scene():
    """Small scene with ~20% of the footprint violating planarity."""
    params = sb.SceneParams(
        texture_width=800,
        texture_height=640,
        scale_m_per_px=0.05,
        path_points=10,
        path_spacing_m=0.2,
        view_width=200,
        view_height=160,
        distractor_fraction=0.2,
        distractor_radius=(36, 60),
        parallax_factor=1.8,
        n_lines=25,
        n_blobs=15,
    )
    return sb.generate_scene(11, params)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
