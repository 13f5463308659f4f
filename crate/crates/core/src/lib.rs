//! Multi-view caption aggregation for 3D objects.
//!
//! Each object is rendered from six viewpoints. A vision-language model
//! proposes several captions per view; the crate scores them by token
//! confidence and image relevance, collapses near-duplicates, picks one per
//! view with a multi-armed bandit, fuses the six picks into one annotation and
//! checks it against the object's point cloud.
//!
//! Stages, in pipeline order:
//!
//! * [`model`]: manifests, point clouds, embeddings
//! * [`confidence`], [`clustering`], [`scoring`]: per-candidate scores
//! * [`bandit`]: per-view selection
//! * [`synthesis`]: cross-view fusion
//! * [`gating`]: text/point-cloud consistency gate and threshold analysis
//! * [`providers`]: model interfaces, mocks, HTTP adapter, response cache
//! * [`pipeline`]: orchestration, config, cost estimate
//! * [`simulate`]: bandit strategy comparison harness

pub mod bandit;
pub mod clustering;
pub mod confidence;
pub mod gating;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod providers;
pub mod scoring;
pub mod seed;
pub mod simulate;
pub mod synthesis;

pub use model::{CandidateDescription, EmbeddingVector, ObjectManifest, PointCloud, Viewpoint};
pub use par::Exec;
