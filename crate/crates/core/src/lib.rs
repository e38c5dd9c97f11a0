//! Approximate matrix multiplication by product quantization with
//! hash-tree encoders.
//!
//! The pipeline learns per-subspace prototypes (k-means in [`pq`], or
//! balanced hash trees in [`maddness`]), precomputes a lookup table of
//! prototype–weight dot products, and replaces each multiply with one
//! encoding per subspace plus table lookups. [`difftree`] writes the trees
//! as matrices for gradient-based fine-tuning, [`quantsim`] models the
//! INT8/INT24 datapath and [`accel`] simulates the accelerator cycle by cycle.
//!
//! ```
//! use maddness::{fit, amm_maddness, frobenius_error, matmul_exact, synth, ForestParams};
//!
//! let a = synth::gaussian(256, 32, 1);
//! let b = synth::gaussian(32, 8, 2);
//! let (forest, lut) = fit(&a, &b, 8, 16, &ForestParams::default()).unwrap();
//! let approx = amm_maddness(&a, &forest, &lut).unwrap();
//! let err = frobenius_error(&approx, &matmul_exact(&a, &b).unwrap()).unwrap();
//! assert!(err.rel_frobenius < 1.0);
//! ```

pub mod accel;
pub mod difftree;
pub mod error;
pub mod im2col;
pub mod io;
pub mod maddness;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod pq;
pub mod quantsim;
pub mod synth;

pub use accel::{peak_efficiency, simulate_matmul, tile_plan, AccelConfig, EnergyModel, SimReport};
pub use difftree::{
    amm_ste_backward, amm_ste_forward, encode_hard, encode_soft, finetune_toy, SoftParams, TreeMatrices,
};
pub use error::{Error, Result};
pub use im2col::{conv2d_direct, conv2d_im2col, im2col};
pub use maddness::{amm_conv2d, amm_maddness, encode_tree, fit, learn_forest, ForestParams, HashForest, HashTree};
pub use matrix::{matmul_exact, Matrix, Tensor4};
pub use metrics::{frobenius_error, ErrorReport};
pub use model::{Encoder, ModelBundle};
pub use pq::{build_lut, decode_accumulate, encode_pq, learn_prototypes, EncodingMatrix, KMeansParams, LookupTable, PrototypeBook};
pub use quantsim::{decode_quantized, quantize_lut, Acc24, QuantLut};
