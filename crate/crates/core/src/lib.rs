//! Multitask polarity and subjectivity classification.
//!
//! Two BiLSTM + self-attention sentence encoders (one per task) whose pooled
//! representations are fused through a neural tensor network and fed into
//! task-specific softmax heads. Everything runs on a small reverse-mode
//! autodiff engine in [`tensor`], generic over `f32` (training) and `f64`
//! (verification).
//!
//! ```text
//! tokens/embeddings -> BiLSTM -> TDFC -> dropout -> attention -> FC -> dropout -> Fn
//!                                                               Fn -> FC -> X
//! NTN(Fn_subj, Fn_pol) -> N;   softmax((X ⊕ N) W + b) per task
//! ```

pub mod data;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod layers;
pub mod rng;
pub mod model;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use data::Task;
pub use model::{EmbeddingKind, Mode, Model, ModelConfig, Pass};
pub use tensor::{Float, ParamId, ParamStore, Tape, Tensor, Var};
