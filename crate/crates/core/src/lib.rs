//! Deep metric learning engine: a small convolutional embedder trained with
//! a triplet hinge loss, nearest-neighbor and MLP classification over the
//! learned embedding space, one-shot class enrollment, post-training int8
//! quantization, 2-D projection for inspection, and a binary model format.
//!
//! Everything is deterministic for a fixed seed: one seeded ChaCha8 stream
//! per concern, single-threaded kernels, f64 accumulation where order could
//! matter.

pub mod check;
pub mod classifier;
pub mod data;
pub mod embedder;
pub mod error;
pub mod eval;
mod init;
pub mod model_file;
pub mod ops;
pub mod optim;
pub mod pca;
pub mod quant;
pub mod tape;
pub mod tensor;
pub mod triplet;

pub use classifier::{mlp_predict, KnnIndex, KnnPrediction, MlpHead};
pub use data::synth::{generate_synthetic, SyntheticSpec};
pub use data::{load_dataset_dir, load_image, Dataset};
pub use embedder::{build_embedder, EmbedderConfig, EmbedderNet};
pub use error::{Error, Result};
pub use eval::{
    enroll_dataset, evaluate, evaluate_model, fewshot_enroll_eval, repeated_splits,
    separation_ratio, ClassifierKind, EvalReport, SplitSummary,
};
pub use model_file::{load_model, save_model, EmbedderModel, Model};
pub use optim::{
    split_stratified, train_classifier_head, train_embedder, AdamConfig, HeadConfig, TrainConfig,
    TrainHistory,
};
pub use pca::{pca_project, Projection2D};
pub use quant::{
    benchmark_inference, calibrate_static, quantize_net, quantized_embed, BenchmarkReport,
    CalibrationRanges, QuantMode, QuantizedNet,
};
pub use tensor::Tensor;
pub use triplet::{Mining, TripletConfig};
