//! Analytic shapes, sampling, point-cloud preprocessing, and depth rendering.
//!
//! Everything here is exact or deterministic: shapes are closed-form SDFs
//! with analytic normals, sampling is seeded, and the renderer sphere-traces
//! the oracle directly. This is what makes downstream training targets
//! ground truth rather than approximations.

mod corpus;
mod fps;
mod render;
mod sample;
mod shape;
mod vec3;

pub use corpus::{mini_corpus, training_corpus};
pub use fps::{furthest_point_sampling, knn_group};
pub use render::{
    fibonacci_cameras, render_depth, select_best_view, Camera, DepthImage, CAMERA_RADIUS,
    DEFAULT_VFOV_DEG,
};
pub use sample::{point_cloud, sample_batch, PointCloud, SdfSampleBatch};
pub use shape::{spec_from_manifest, spec_to_manifest, Pose, ShapeSpec};
pub use vec3::{vec3, Mat3, Vec3};
