//! Unit-sphere geometry, prediction metrics, the K-means codebook and the
//! simple multi-viewpoint predictors.

mod geometry;
mod kmeans;
mod predict;

pub use geometry::{avg_great_circle_distance, great_circle_distance, Vec3};
pub use kmeans::{kmeans_fit, kmeans_fit_traced, Codebook};
pub(crate) use predict::{argmax, top_indices};
pub use predict::{
    baseline_predict, best_of_many, synthetic_walk, top_i_decode, PredictionSet, WalkConfig,
};
