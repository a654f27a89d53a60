//! Tensor regression layers with stochastic rank regularization.
//!
//! The crate provides dense tensors and their multilinear operators, CP and Tucker
//! factorized weights, Bernoulli and with-replacement rank sketching, a tensor
//! regression layer with hand-derived gradients, the deterministic regularizer that
//! Bernoulli CP sketching is equivalent to in expectation, and a seeded SGD runner
//! for the synthetic equivalence experiment.

pub mod decomp;
pub mod error;
pub mod rng;
pub mod sketch;
pub mod tensor;
pub mod textio;
pub mod train;
pub mod trl;
pub mod verify;

pub use decomp::{kruskal_to_full, super_diagonal_core, tucker_to_full, Decomposition, KruskalTensor, TuckerTensor};
pub use error::{Result, TrlError};
pub use sketch::{apply_sketch_kruskal, apply_sketch_tucker, draw_sketch, ModeSketch, SketchDraw, SketchScheme, SketchSpec};
pub use tensor::{fold, inner_contract, khatri_rao, mode_dot, unfold, vectorize, DenseTensor, Matrix};
pub use trl::{ScaleMode, TrlModel};
pub use train::{generate_synthetic, run_experiment, LossCurve, SyntheticSpec, TrainConfig};
