pub mod channel;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod error;
pub mod experiment;
pub mod hec;
pub mod hyperprior;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optimizer;
pub mod overhead;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod shared;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{concat_channels, mean_channels, FeatureTensor, ImageBatch};

pub type Tensor = FeatureTensor<f64>;
pub type Images = ImageBatch<f64>;
pub type Model = model::SystemModel<f64>;
pub type Model32 = model::SystemModel<f32>;
