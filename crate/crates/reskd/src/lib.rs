//! Residual-guided knowledge distillation at desk scale.
//!
//! A teacher's knowledge rarely fits in one small student. This crate trains
//! a first student against the teacher, then a chain of even lighter
//! "res-students", each fitted to the logit gap the previous combination
//! left open. Summing everyone's logits gives a combined student that creeps
//! toward the teacher one residual at a time; a confidence ("energy")
//! criterion decides when the chain is long enough, and the same energy
//! gates how many res-students each sample actually pays for at inference
//! time. A numerical analysis toolkit measures how informative each stage's
//! gradients still are and verifies the layer-norm bounds behind that
//! measure.
//!
//! The pieces:
//!
//! - [`matrix`], [`net`], [`optim`]: a bias-free MLP engine (forward,
//!   backward, per-layer traces) with SGD.
//! - [`softmax`], [`loss`]: temperature softmax and the distillation
//!   objective with selectable match terms and analytic gradients.
//! - [`energy`], [`pipeline`]: the staged residual training loop with its
//!   energy-based termination.
//! - [`infer`]: sample-adaptive truncated inference and cost accounting.
//! - [`gi`], [`spectral`]: gradient-informativeness statistics, layer
//!   bounds, power-iteration spectral norms, and a 2-D PCA.
//! - [`data`], [`idx`], [`bundle`]: dataset generation and splits, IDX
//!   ingestion, and all serialization.
//!
//! ```
//! use reskd::data::gen_spirals;
//! use reskd::loss::{CeTargetMode, LossKind};
//! use reskd::net::Activation;
//! use reskd::pipeline::{run_reskd, DistillConfig};
//!
//! let data = gen_spirals(7, 60, 1.5, 0.1)?;
//! let config = DistillConfig {
//!     tau_s0: 0.9,
//!     tau_res: 0.9,
//!     temperature: 1.0,
//!     loss_kind: LossKind::L2Logit,
//!     ce_target_mode: CeTargetMode::Combined,
//!     epochs: 20,
//!     batch_size: 16,
//!     lr: 0.3,
//!     lr_decay_epochs: vec![15],
//!     lr_decay_factor: 0.1,
//!     momentum: 0.9,
//!     weight_decay: 1e-4,
//!     energy_fraction: 0.9,
//!     th_scale: 0.9,
//!     max_stages: 2,
//!     val_fraction: 0.1,
//!     seed: 1,
//!     activation: Activation::Tanh,
//!     teacher_widths: vec![16],
//!     s0_widths: vec![4],
//!     res_widths: vec![vec![4], vec![4]],
//! };
//! let artifact = run_reskd(&data, &config)?;
//! assert!(artifact.num_res_students() >= 1);
//! # Ok::<(), reskd::Error>(())
//! ```

pub mod bundle;
pub mod data;
pub mod energy;
pub mod error;
pub mod gi;
pub mod idx;
pub mod infer;
pub mod loss;
pub mod matrix;
pub mod net;
pub mod optim;
pub mod pipeline;
mod rng;
pub mod softmax;
pub mod spectral;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use net::{Activation, ActivationTrace, LayerGrads, Mlp};
pub use pipeline::{run_reskd, DistillConfig, StageArtifact};

pub use rng::derive_seed;
