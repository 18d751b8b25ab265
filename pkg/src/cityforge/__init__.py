"""Deterministic city-scene synthesis toolkit.

Pipeline: vector geometry or a seeded sampler produces a semantic map and
height field; the pair extrudes into an implicit 3D layout; volumetric
renderers draw the background and each building instance; a compositor
merges them; trajectories, annotations, and metrics round out dataset
production. An HTTP studio service exposes the interactive workflow.
"""

from .compositor import (
    CompositeResult,
    camera_error,
    composite,
    composite_channels,
    depth_error,
    derive_masks,
    style_interpolate,
)
from .dataset import DatasetSample, export_dataset, load_dataset, verify_manifest
from .errors import DegenerateInputError, StaleRevisionError, ValidationError
from .geo import (
    GeoFeature,
    GeoVectorSet,
    HeightField,
    RasterConfig,
    SemanticClass,
    SemanticMap,
    load_city,
    lonlat_to_pixel,
    meters_per_pixel,
    perlin_height,
    pixel_to_lonlat,
    rasterize,
    save_city,
    synthetic_config,
)
from .layout import (
    BACKGROUND_WINDOW_DIMS,
    BUILDING_WINDOW_DIMS,
    FACADE,
    ROOF,
    BuildingInstance,
    CityLayout,
    LocalWindow,
    edit_building_height,
    extract_window,
    instance_label_map,
    instantiate_buildings,
    layout_at,
    relabel_instance_window,
)
from .pipeline import FeatureFactory, render_city_frame
from .sceneparam import (
    HASH_PRIMES,
    HashGridConfig,
    HashGridTable,
    MlpGlobalEncoder,
    ProceduralGlobalEncoder,
    ProceduralLocalEncoder,
    StyleCode,
    building_feature,
    grid_lookup,
    hash_index,
    sincos_encode,
)
from .synth import (
    Codebook,
    ExemplarTokenizer,
    MetricConfig,
    PatchSpec,
    ProceduralSampler,
    ReplaySampler,
    TokenGrid,
    combined_patch_loss,
    extrapolate,
    height_l1,
    height_smoothness,
    inpaint,
    semantic_cross_entropy,
)
from .trajectory import (
    OrbitSpec,
    Trajectory,
    evaluation_preset,
    keypoint_trajectory,
    look_at_pose,
    orbit_trajectory,
    project_annotations,
)
from .volren import (
    CameraIntrinsics,
    CameraPose,
    MlpField,
    MlpLayer,
    MlpWeights,
    ProceduralField,
    Ray,
    RayBundle,
    RenderOutput,
    RenderSettings,
    lambertian_shade,
    make_rays,
    march,
    mlp_forward,
    project_points,
    shadow_map,
    surface_normals,
)

__version__ = "0.1.0"
