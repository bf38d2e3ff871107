"""Neural fields as a representation: fit, embed, decode, analyze."""

from .errors import DivergenceError, EmptySurfaceError, FormatError, NfError, RenderError, ValidationError
from .fields import (
    CameraPose,
    FieldKind,
    MultiViewSet,
    PointCloud,
    ScaleCenter,
    TriangleMesh,
    VoxelGrid,
    frequency_encode,
    occupancy_from_voxels,
    sdf_from_mesh,
    sdf_sphere,
    udf_from_pointcloud,
)
from .mlp import ArchSpec, FieldMLP, MLPWeights, nf_field, radiance_arch, shape_arch, shared_init
from .codec import StackedWeights, StackLayout, stack_weights, unstack_weights
from .embedder import (
    Nf2vecConfig,
    RowEncoder,
    ZooItem,
    encode,
    encode_many,
    interpolate_embeddings,
    train_nf2vec,
)
from .decoder import DecoderSpec, ImplicitDecoder, decode, reconstruct, render_embedding
from .fitting import FitConfig, NerfFitConfig, fit_nerf, fit_shape_nf
from .rendering import RayBatch, camera_rays, composite, orbit_pose, render_image, render_rays
from .surfaces import extract_surface
from .analysis import embedding_distance_matrix, lmc_curve, match_weights, permute_hidden_units

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
