//! Track-to-sequence classification toolkit for drone vs bird discrimination.
//!
//! The pipeline turns object-tracker output into a labeled video-clip dataset,
//! trains five classifier modalities over it (a single-image baseline, a fully
//! convolutional (2+1)D video network, and 2D-backbone models with
//! LSTM/MLP/Transformer temporal necks), and reports per-class F1, macro F1,
//! confusion matrices and parameter counts.
//!
//! Runnable entry points live in `examples/`; the thin `dvbseq` binary exposes
//! the same capabilities as subcommands (`build-dataset`, `synth`, `train`,
//! `eval`, `params`, `report`).

pub mod clipsampling;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod seqdataset;
pub mod synthgen;
pub mod trackio;
pub mod training;

pub use error::{Error, Result};
