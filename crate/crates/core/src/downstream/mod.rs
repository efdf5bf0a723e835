//! Task heads on top of checkpoints: frozen-encoder linear probing, full
//! fine-tuning, the end-to-end supervised baseline, and prediction.

mod train;

pub use train::{
    fine_tune, linear_probe, pooled_embeddings, predict, random_probe, supervised_baseline,
};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, LossSummary};
use crate::data::Task;
use crate::error::{Error, Result};
use crate::nn::{ModelConfig, Parameters};

/// Training regimes for downstream heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Probe,
    Finetune,
    Supervised,
    RandomProbe,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::Probe,
        Regime::Finetune,
        Regime::Supervised,
        Regime::RandomProbe,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Regime::Probe => "probe",
            Regime::Finetune => "finetune",
            Regime::Supervised => "supervised",
            Regime::RandomProbe => "random-probe",
        }
    }

    pub fn parse(s: &str) -> Result<Regime> {
        match s.to_ascii_lowercase().as_str() {
            "probe" => Ok(Regime::Probe),
            "finetune" => Ok(Regime::Finetune),
            "supervised" => Ok(Regime::Supervised),
            "random-probe" | "random_probe" => Ok(Regime::RandomProbe),
            other => Err(Error::invalid(format!("unknown regime `{other}`"))),
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameters for one downstream training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task: Task,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl TaskSpec {
    pub fn new(task: Task, seed: u64) -> TaskSpec {
        TaskSpec {
            task,
            epochs: 8,
            batch_size: 32,
            lr: 1e-4,
            weight_decay: 1e-5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }
}

/// Where a trained model came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Identity of the source checkpoint ("random" for fresh inits).
    pub source: String,
    pub regime: Regime,
    pub task: Task,
    pub seed: u64,
}

/// Encoder plus classification head for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    /// `embed.*` and `enc.*` arrays. Bit-identical to the source checkpoint
    /// in the probe regimes.
    pub encoder: Parameters,
    /// `head.*` arrays.
    pub head: Parameters,
    pub frozen_encoder: bool,
    pub provenance: Provenance,
}

impl TrainedModel {
    /// Encoder and head merged into one parameter set for forward passes.
    pub fn combined_params(&self) -> Parameters {
        let mut all = self.encoder.clone();
        for (name, value) in self.head.iter() {
            all.insert(name.clone(), value.clone());
        }
        all
    }

    /// Persist as a checkpoint container with the regime as its kind.
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            method: None,
            kind: format!("{}:{}", self.provenance.regime, self.provenance.task),
            seed: self.provenance.seed,
            steps: 0,
            loss_summary: LossSummary::empty(),
            params: self.combined_params(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint, provenance: Provenance) -> TrainedModel {
        TrainedModel {
            config: ck.config.clone(),
            encoder: ck.params.subset(&["embed.", "enc."]),
            head: ck.params.subset(&["head."]),
            frozen_encoder: matches!(
                provenance.regime,
                Regime::Probe | Regime::RandomProbe
            ),
            provenance,
        }
    }
}
