//! Four-component risk decomposition.
//!
//! The risk measure is `R = 1 − AUROC` on the indicated evaluation set.
//! Four trained constituents produce four risk measurements per task, and
//! the errors are differences of those measurements:
//!
//! - approximation error — the supervised end-to-end model's risk on its
//!   own training data;
//! - representation usability error — the train-evaluated probe risk on the
//!   full-data encoder, minus the approximation error;
//! - probe generalization error — the probe's test risk minus its train
//!   risk;
//! - encoder generalization error — the test risk of a probe on an encoder
//!   pre-trained on half the unlabeled data, minus the test risk of the
//!   probe on the full-data encoder.
//!
//! All but the approximation error may be negative.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{split_by_patient, Dataset, SplitSpec, Task};
use crate::downstream::{linear_probe, predict, supervised_baseline, TaskSpec};
use crate::error::{Error, Result};
use crate::metrics::auroc;
use crate::nn::ModelConfig;
use crate::ssl::{pretrain, Method, PretrainHyper};
use crate::util::mix_seed;

/// The four error estimators for one task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub approximation_error: f64,
    pub representation_usability_error: f64,
    pub probe_generalization_error: f64,
    pub encoder_generalization_error: f64,
}

/// The measured risks the decomposition is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskMeasurements {
    /// Supervised end-to-end model, evaluated on its own training data.
    pub r_train_supervised: f64,
    /// Probe on the full-data encoder, train-evaluated.
    pub r_train_probe_full: f64,
    /// Probe on the full-data encoder, test-evaluated.
    pub r_test_probe_full: f64,
    /// Probe on the half-data encoder, test-evaluated.
    pub r_test_probe_half: f64,
}

/// Pure arithmetic core shared by the orchestrated path and the tests.
pub fn decompose_from_risks(m: &RiskMeasurements) -> RiskReport {
    RiskReport {
        approximation_error: m.r_train_supervised,
        representation_usability_error: m.r_train_probe_full - m.r_train_supervised,
        probe_generalization_error: m.r_test_probe_full - m.r_train_probe_full,
        encoder_generalization_error: m.r_test_probe_half - m.r_test_probe_full,
    }
}

/// Training budgets for the constituent runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskBudgets {
    pub pretrain: PretrainHyper,
    pub probe_epochs: usize,
    pub supervised_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for RiskBudgets {
    fn default() -> Self {
        RiskBudgets {
            pretrain: PretrainHyper::default(),
            probe_epochs: 30,
            supervised_epochs: 5,
            batch_size: 32,
            lr: 1e-4,
            weight_decay: 1e-5,
        }
    }
}

fn risk(scores: &[f64], labels: &[bool], what: &str) -> Result<f64> {
    let a = auroc(scores, labels)
        .map_err(|e| Error::invalid(format!("risk constituent `{what}`: {e}")))?;
    Ok(1.0 - a)
}

/// Run the constituent trainings and decompose the risks for each task.
///
/// Any constituent failure propagates with the constituent's identity in
/// the message.
pub fn risk_decomposition(
    cfg: &ModelConfig,
    method: Method,
    unlabeled: &Dataset,
    train: &Dataset,
    test: &Dataset,
    tasks: &[Task],
    budgets: &RiskBudgets,
    seed: u64,
) -> Result<BTreeMap<Task, RiskReport>> {
    let ctx = |what: String| move |e: Error| Error::invalid(format!("risk constituent `{what}`: {e}"));

    // Patient-disjoint half of the unlabeled pool as the finite-U contrast.
    let half_spec = SplitSpec {
        train: 0.5,
        val: 0.0,
        test: 0.5,
        seed: mix_seed(seed, 1),
    };
    let (half, _, _) =
        split_by_patient(unlabeled, &half_spec).map_err(ctx("half-unlabeled split".into()))?;
    let mut half = half;
    half.split_tag = None;

    let (ck_full, _) = pretrain(unlabeled, cfg, method, &budgets.pretrain, mix_seed(seed, 2))
        .map_err(ctx("pretrain full".into()))?;
    let (ck_half, _) = pretrain(&half, cfg, method, &budgets.pretrain, mix_seed(seed, 3))
        .map_err(ctx("pretrain half".into()))?;

    let mut out = BTreeMap::new();
    for (ti, &task) in tasks.iter().enumerate() {
        let task_seed = mix_seed(seed, 16 + ti as u64);
        let train_labels = train.task_labels(task)?;
        let test_labels = test.task_labels(task)?;

        let sup_spec = TaskSpec {
            epochs: budgets.supervised_epochs,
            batch_size: budgets.batch_size,
            lr: budgets.lr,
            weight_decay: budgets.weight_decay,
            ..TaskSpec::new(task, task_seed)
        };
        let supervised = supervised_baseline(cfg, train, None, &sup_spec)
            .map_err(ctx(format!("supervised {task}")))?;
        let sup_train_scores = predict(&supervised, &train.records)
            .map_err(ctx(format!("supervised predict {task}")))?;
        let r_train_supervised =
            risk(&sup_train_scores, &train_labels, &format!("supervised {task}"))?;

        let probe_spec = TaskSpec {
            epochs: budgets.probe_epochs,
            batch_size: budgets.batch_size,
            lr: budgets.lr,
            weight_decay: budgets.weight_decay,
            ..TaskSpec::new(task, mix_seed(task_seed, 1))
        };
        let probe_full = linear_probe(&ck_full, train, None, &probe_spec)
            .map_err(ctx(format!("probe-full {task}")))?;
        let full_train_scores = predict(&probe_full, &train.records)?;
        let full_test_scores = predict(&probe_full, &test.records)?;
        let r_train_probe_full =
            risk(&full_train_scores, &train_labels, &format!("probe-full train {task}"))?;
        let r_test_probe_full =
            risk(&full_test_scores, &test_labels, &format!("probe-full test {task}"))?;

        let probe_half = linear_probe(&ck_half, train, None, &probe_spec)
            .map_err(ctx(format!("probe-half {task}")))?;
        let half_test_scores = predict(&probe_half, &test.records)?;
        let r_test_probe_half =
            risk(&half_test_scores, &test_labels, &format!("probe-half test {task}"))?;

        out.insert(
            task,
            decompose_from_risks(&RiskMeasurements {
                r_train_supervised,
                r_train_probe_full,
                r_test_probe_full,
                r_test_probe_half,
            }),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_risks_zero_the_difference_errors() {
        let m = RiskMeasurements {
            r_train_supervised: 0.2,
            r_train_probe_full: 0.2,
            r_test_probe_full: 0.2,
            r_test_probe_half: 0.2,
        };
        let r = decompose_from_risks(&m);
        assert_eq!(r.approximation_error, 0.2);
        assert_eq!(r.representation_usability_error, 0.0);
        assert_eq!(r.probe_generalization_error, 0.0);
        assert_eq!(r.encoder_generalization_error, 0.0);
    }

    #[test]
    fn negative_values_are_representable() {
        let m = RiskMeasurements {
            r_train_supervised: 0.30,
            r_train_probe_full: 0.25,
            r_test_probe_full: 0.185,
            r_test_probe_half: 0.15,
        };
        let r = decompose_from_risks(&m);
        assert!(r.representation_usability_error < 0.0);
        assert!((r.probe_generalization_error - (-0.065)).abs() < 1e-12);
        assert!(r.encoder_generalization_error < 0.0);
        assert!(r.approximation_error >= 0.0);
    }
}
