//! Switch-guided hybrid single-image super-resolution.
//!
//! The crate implements a complete desk-scale pipeline: a small dense-tensor
//! core with hand-derived gradients, bicubic resampling and image quality
//! metrics, a zoo of five CPU-trainable SR network families, an
//! SSIM-difference patch labeler with a compact routing classifier, coupled
//! classifier/expert training, and a benchmark harness that accounts wall
//! time and multiply-accumulate counts per configuration.
//!
//! Start with [`dataset::synth_corpus`] to build a self-contained corpus,
//! [`models::ModelSpec`] to instantiate networks, and [`bench::sweep`] to
//! compare configurations. The `book/` directory of the repository walks
//! through each stage with runnable examples.

pub mod bench;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod models;
pub mod net;
pub mod optim;
pub mod par;
pub mod resample;
pub mod rng;
pub mod switch;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::Tensor;

// Keep the book's code samples compiling and passing: every ```rust fence in
// the guide runs under `cargo test --doc`.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(tensors_and_layers, "../../../book/src/tensors-and-layers.md");
    chapter!(gradient_checking, "../../../book/src/gradient-checking.md");
    chapter!(resampling, "../../../book/src/resampling.md");
    chapter!(metrics_chapter, "../../../book/src/metrics.md");
    chapter!(model_zoo, "../../../book/src/model-zoo.md");
    chapter!(dataset_chapter, "../../../book/src/dataset.md");
    chapter!(switch_chapter, "../../../book/src/switch.md");
    chapter!(coupled_training, "../../../book/src/coupled-training.md");
    chapter!(benchmarking, "../../../book/src/benchmarking.md");
    chapter!(cli_chapter, "../../../book/src/cli.md");
}
