//! Data-scarcity simulations: data-usage and case-ratio sweeps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::DownstreamHyper;
use crate::checkpoint::Checkpoint;
use crate::data::{subsample_case_ratio, subsample_data_usage, Dataset, Task};
use crate::downstream::{
    fine_tune, linear_probe, predict, random_probe, supervised_baseline, Regime, TaskSpec,
};
use crate::error::{Error, Result};
use crate::metrics::TaskMetrics;
use crate::nn::ModelConfig;
use crate::util::mix_seed;

/// What kind of scarcity a row simulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LevelKind {
    DataUsage,
    CaseRatio,
}

/// Where the model for a scarcity run comes from.
pub enum ScarcitySource<'a> {
    Checkpoint(&'a Checkpoint),
    Supervised(&'a ModelConfig),
}

/// One model entry in the sweep: a label for reporting, its source, and the
/// training regime.
pub struct ScarcityModelSpec<'a> {
    pub name: String,
    pub source: ScarcitySource<'a>,
    pub regime: Regime,
}

/// One evaluated (model × level × seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScarcityRow {
    pub model: String,
    pub regime: Regime,
    pub level_kind: LevelKind,
    pub level: f64,
    pub seed: u64,
    pub metrics: BTreeMap<Task, TaskMetrics>,
    pub criteria: f64,
    pub train_size: usize,
    pub test_size: usize,
}

fn evaluate(
    scores: &[f64],
    labels: &[bool],
) -> Result<TaskMetrics> {
    Ok(TaskMetrics {
        auroc: crate::metrics::auroc(scores, labels)?,
        auprc: crate::metrics::auprc(scores, labels)?,
        f1: crate::metrics::f1(scores, labels, 0.5)?,
    })
}

fn train_and_eval(
    model: &ScarcityModelSpec,
    train: &Dataset,
    val: Option<&Dataset>,
    test: &Dataset,
    task: Task,
    hyper: &DownstreamHyper,
    seed: u64,
) -> Result<TaskMetrics> {
    let spec = TaskSpec {
        epochs: match model.regime {
            Regime::Probe | Regime::RandomProbe => hyper.probe_epochs,
            _ => hyper.epochs,
        },
        batch_size: hyper.batch_size,
        lr: hyper.lr,
        weight_decay: hyper.weight_decay,
        ..TaskSpec::new(task, seed)
    };
    let trained = match (&model.source, model.regime) {
        (ScarcitySource::Checkpoint(ck), Regime::Probe) => linear_probe(ck, train, val, &spec)?,
        (ScarcitySource::Checkpoint(ck), Regime::RandomProbe) => {
            random_probe(ck, train, val, &spec)?
        }
        (ScarcitySource::Checkpoint(ck), Regime::Finetune) => fine_tune(ck, train, val, &spec)?,
        (ScarcitySource::Supervised(cfg), Regime::Supervised) => {
            supervised_baseline(cfg, train, val, &spec)?
        }
        (ScarcitySource::Supervised(_), regime) => {
            return Err(Error::invalid(format!(
                "supervised source cannot run the {regime} regime"
            )));
        }
        (ScarcitySource::Checkpoint(_), Regime::Supervised) => {
            return Err(Error::invalid(
                "supervised regime takes a config, not a checkpoint",
            ));
        }
    };
    let scores = predict(&trained, &test.records)?;
    let labels = test.task_labels(task)?;
    evaluate(&scores, &labels)
}

/// Run the scarcity sweep.
///
/// For each model × level × seed, the train split is thinned with
/// `subsample_data_usage` (usage levels) or per-task `subsample_case_ratio`
/// (ratio levels), a model is trained per task, and test metrics are
/// emitted. The test split is never modified.
#[allow(clippy::too_many_arguments)]
pub fn scarcity_suite(
    models: &[ScarcityModelSpec],
    train: &Dataset,
    val: Option<&Dataset>,
    test: &Dataset,
    usage_levels: &[f64],
    ratio_levels: &[f64],
    seeds: &[u64],
    tasks: &[Task],
    hyper: &DownstreamHyper,
) -> Result<Vec<ScarcityRow>> {
    let mut rows = Vec::new();
    let levels: Vec<(LevelKind, f64)> = usage_levels
        .iter()
        .map(|&u| (LevelKind::DataUsage, u))
        .chain(ratio_levels.iter().map(|&r| (LevelKind::CaseRatio, r)))
        .collect();

    for model in models {
        for (li, &(kind, level)) in levels.iter().enumerate() {
            for &seed in seeds {
                let sub_seed = mix_seed(seed, 0xA000 + li as u64);
                let mut metrics = BTreeMap::new();
                let mut train_size = 0usize;
                for (ti, &task) in tasks.iter().enumerate() {
                    let thinned = match kind {
                        LevelKind::DataUsage => subsample_data_usage(train, level, sub_seed)?,
                        LevelKind::CaseRatio => {
                            subsample_case_ratio(train, task, level, sub_seed)?
                        }
                    };
                    train_size = thinned.len();
                    let m = train_and_eval(
                        model,
                        &thinned,
                        val,
                        test,
                        task,
                        hyper,
                        mix_seed(seed, 0xB000 + (li * 16 + ti) as u64),
                    )?;
                    metrics.insert(task, m);
                }
                let criteria = metrics
                    .values()
                    .map(|m| m.auroc + m.auprc)
                    .sum::<f64>();
                rows.push(ScarcityRow {
                    model: model.name.clone(),
                    regime: model.regime,
                    level_kind: kind,
                    level,
                    seed,
                    metrics,
                    criteria,
                    train_size,
                    test_size: test.len(),
                });
            }
        }
    }
    Ok(rows)
}
