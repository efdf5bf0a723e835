//! Self-supervised pre-training: objectives and the training loop.
//!
//! Three methods are supported. Contrastive learning (CL) pulls augmented
//! views and same-patient records together with InfoNCE at the sample and
//! patient level. Generative learning (GL) masks patches and reconstructs
//! them with a mean-absolute-error objective. Hybrid learning (HL) runs both
//! pipelines on the same batch and sums the three terms.

mod augment;
mod losses;
mod pretrain;

pub use augment::{augment, mask_patches, AugmentPolicy};
pub use losses::{
    hybrid_loss, info_nce, patient_contrastive_loss, reconstruction_loss,
    sample_contrastive_loss,
};
pub use pretrain::{pretrain, write_loss_history_csv, StepLoss};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Parts;

/// Pre-training method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cl,
    Gl,
    Hl,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Cl, Method::Gl, Method::Hl];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Cl => "CL",
            Method::Gl => "GL",
            Method::Hl => "HL",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s.to_ascii_lowercase().as_str() {
            "cl" => Ok(Method::Cl),
            "gl" => Ok(Method::Gl),
            "hl" => Ok(Method::Hl),
            other => Err(Error::invalid(format!("unknown method `{other}`"))),
        }
    }

    /// Which auxiliary parameter groups the method trains: contrastive
    /// methods carry the projection head, generative methods the decoder.
    pub fn parts(&self) -> Parts {
        match self {
            Method::Cl => Parts {
                projection: true,
                ..Parts::default()
            },
            Method::Gl => Parts {
                decoder: true,
                ..Parts::default()
            },
            Method::Hl => Parts {
                decoder: true,
                projection: true,
                ..Parts::default()
            },
        }
    }

    pub fn uses_contrastive(&self) -> bool {
        matches!(self, Method::Cl | Method::Hl)
    }

    pub fn uses_reconstruction(&self) -> bool {
        matches!(self, Method::Gl | Method::Hl)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Batch composition: P patients × R records × V views.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PretrainBatchPlan {
    pub patients_per_batch: usize,
    pub records_per_patient: usize,
    pub views_per_record: usize,
}

impl Default for PretrainBatchPlan {
    fn default() -> Self {
        PretrainBatchPlan {
            patients_per_batch: 8,
            records_per_patient: 2,
            views_per_record: 2,
        }
    }
}

impl PretrainBatchPlan {
    pub fn validate(&self) -> Result<()> {
        if self.patients_per_batch == 0 || self.records_per_patient == 0 {
            return Err(Error::invalid("batch plan dimensions must be positive"));
        }
        if !(1..=2).contains(&self.views_per_record) {
            return Err(Error::invalid(
                "views_per_record must be 1 or 2 (sample-level loss pairs sibling views)",
            ));
        }
        Ok(())
    }
}

/// Per-step loss components. Absent components are `None`; `total` always
/// equals the sum of the present components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub patient_contrastive: Option<f64>,
    pub sample_contrastive: Option<f64>,
    pub reconstruction: Option<f64>,
}

impl LossBreakdown {
    pub fn component_sum(&self) -> f64 {
        self.reconstruction.unwrap_or(0.0)
            + self.patient_contrastive.unwrap_or(0.0)
            + self.sample_contrastive.unwrap_or(0.0)
    }

    pub fn all_finite(&self) -> bool {
        self.total.is_finite()
            && self.patient_contrastive.is_none_or(f64::is_finite)
            && self.sample_contrastive.is_none_or(f64::is_finite)
            && self.reconstruction.is_none_or(f64::is_finite)
    }
}

/// Pre-training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainHyper {
    pub steps: usize,
    pub plan: PretrainBatchPlan,
    pub lr: f64,
    pub weight_decay: f64,
    /// InfoNCE temperature.
    pub tau: f64,
    /// Fraction of patches hidden from the encoder for reconstruction.
    pub mask_ratio: f64,
    pub augment: AugmentPolicy,
}

impl Default for PretrainHyper {
    fn default() -> Self {
        PretrainHyper {
            steps: 200,
            plan: PretrainBatchPlan::default(),
            lr: 1e-4,
            weight_decay: 1e-5,
            tau: 0.1,
            mask_ratio: 0.75,
            augment: AugmentPolicy::default(),
        }
    }
}

impl PretrainHyper {
    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        self.augment.validate()?;
        if !(self.tau > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::invalid("mask_ratio must lie in [0, 1)"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}
