//! Desk-scale foundation models for multichannel ECG-like signals.
//!
//! The crate covers the full pipeline:
//!
//! - [`data`] — ingestion, standardization (250 Hz / 10 s / 1.0 mV-unit),
//!   patient-disjoint splitting, scarcity subsampling, and a synthetic
//!   12-lead generator so everything runs without clinical data.
//! - [`nn`] — the 1D-conv patch projection + transformer encoder/decoder
//!   backbone with pooling, projection, and classification heads.
//! - [`ssl`] — contrastive (patient- and sample-level InfoNCE), generative
//!   (masked reconstruction), and hybrid pre-training.
//! - [`downstream`] — linear probing, fine-tuning, and supervised baselines.
//! - [`metrics`] — AUROC / AUPRC / F1, the criteria aggregate, and the
//!   four-component risk decomposition.
//! - [`exp`] — grid orchestration, scarcity suites, and report emission.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod downstream;
pub mod error;
pub mod exp;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod ssl;
pub(crate) mod util;

pub use checkpoint::Checkpoint;
pub use data::{Dataset, ECGRecord, LabelSet, SplitSpec, SplitTag, SynthSpec, Task};
pub use downstream::{Regime, TaskSpec, TrainedModel};
pub use error::{Error, Result};
pub use exp::{CaseStatus, GridSpec, ResultRow};
pub use metrics::{EvalReport, RiskReport, TaskMetrics};
pub use nn::{ModelConfig, Parameters, Parts, TokenBatch};
pub use ssl::{AugmentPolicy, LossBreakdown, Method, PretrainBatchPlan, PretrainHyper};
