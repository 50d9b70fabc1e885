//! Joint vehicle detection, discrete-intent classification and 3-second
//! trajectory forecasting on voxelized bird's-eye-view LiDAR and rasterized
//! dynamic HD maps, trained on a seeded synthetic dataset.
//!
//! The crate is organized bottom-up:
//!
//! - [`geom`]: rotated-rectangle geometry, polygon clipping / IoU, grid
//!   rasterization and rigid-motion transforms.
//! - [`tensor`]: the dense row-major tensor carrier shared by the encoder and
//!   the network.
//! - [`scene`]: scenario data model, on-disk format and the seeded synthetic
//!   scenario generator with per-frame action labeling.
//! - [`encoder`]: LiDAR voxelization and 17-channel map rasterization.
//! - [`anchors`]: anchor grid, ground-truth assignment and regression target
//!   encoding / decoding.
//! - [`net`]: a minimal reverse-mode autodiff engine and the two-stream
//!   detector / forecaster network.
//! - [`loss`]: focal detection loss with hard negative mining, discounted
//!   smooth-L1 trajectory regression and downsampled intention cross-entropy.
//! - [`infer`]: score thresholding, rotated NMS and tracklet decoding.
//! - [`metrics`]: rotated-IoU average precision, along/across-track errors
//!   and per-class intention metrics.
//! - [`pipeline`]: batch orchestration (synth / encode / train / eval /
//!   predict) shared by the CLI and the acceptance suite.
//! - [`viz`]: static SVG rendering of scenes and predictions.

pub mod anchors;
pub mod encoder;
pub mod geom;
pub mod infer;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod scene;
pub mod tensor;
pub mod viz;
