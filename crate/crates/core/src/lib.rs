//! Emotion recognition from multi-channel physiological recordings.
//!
//! The crate covers the whole offline pipeline:
//!
//! ```text
//! corpus (manifest + f32 tensors) -> features (343 per 1-s window) -> labels
//!     -> forest (CART / random forest, OOB, Gini importance)
//!     -> eval (k-fold, leave-one-trial-out, leave-one-subject-out, neighbor voting)
//! ```
//!
//! [`synthgen`] produces recordings with known ground truth so every stage can
//! be checked without the licensed recordings.

pub mod corpus;
pub mod dsp;
pub mod eval;
pub mod features;
pub mod forest;
pub mod labels;
pub mod seed;
pub mod synthgen;

pub use corpus::{ChannelMap, SubjectRecord, Window};
pub use dsp::{Band, Spectrum};
pub use features::{FeatureMatrix, REGISTRY_VERSION};
pub use forest::{ConfusionMatrix, ForestModel, ForestParams};
pub use labels::LabelMode;

/// Runs `f` inside a dedicated rayon pool with `workers` threads.
///
/// `None` uses the global pool. Results never depend on the worker count.
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match workers {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("failed to build worker pool")
            .install(f),
    }
}
