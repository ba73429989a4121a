//! Unsupervised domain adaptation for semantic segmentation on synthetic
//! two-domain data: adversarial alignment of pooled feature statistics and
//! category-adaptive entropy thresholds for pseudo labels.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod pseudo;
pub mod report;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph64 = autodiff::Graph<f64>;
pub type Graph32 = autodiff::Graph<f32>;
pub type SegNetwork64 = network::SegNetwork<f64>;
pub type SegNetwork32 = network::SegNetwork<f32>;
pub type Trainer64 = train::Trainer<f64>;
pub type Trainer32 = train::Trainer<f32>;
