"""Pose refinement by rendering geometric correspondence fields.

The toolkit renders per-pixel geometry buffers for a mesh under a pose
estimate, obtains a 2D correspondence field from a pluggable predictor,
disperses the field onto mesh vertices through the rasterization records,
chains it into a 6-DoF pose gradient, and iterates a first-order optimizer
until the reprojection error is minimized.
"""

from .backprop import PoseGradient, VertexGradients, pose_gradient, vertex_gradients
from .errors import (BehindCamera, BufferMismatch, ConfigError, DegenerateMesh,
                     DimensionMismatch, EmptyRenderAtStart, GcfError, NotARotation,
                     NoValidVertices, ParseError, PredictorFailure, ZeroGtTranslation)
from .field import (AttentionConfig, AttentionMask, CorrespondenceField,
                    OracleNoiseConfig, OraclePredictor, Predictor, attention_mask,
                    predict, render_gt_gcf)
from .geometry import (NEAR_PLANE, CameraIntrinsics, PerturbationConfig, Pose,
                       PoseDelta, TriangleMesh, apply_delta, load_obj, perturb_pose,
                       project, project_points, projection_jacobian, save_obj)
from .metrics import (AggregateReport, MetricContext, SampleErrors, aggregate,
                      metric_context, pose_error, projection_error, rotation_error,
                      sample_errors, translation_error)
from .raster import RenderBuffers, channel_stack, normalized_depth, rasterize
from .refine import (AdamState, RefinementConfig, RefinementResult, adam_step,
                     refine, reprojection_loss)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
