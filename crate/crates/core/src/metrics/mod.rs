//! Evaluation metrics: AUROC, AUPRC, F1, the criteria aggregate, and the
//! four-component risk decomposition.

mod ranking;
mod risk;

pub use ranking::{auprc, auroc, f1};
pub use risk::{
    decompose_from_risks, risk_decomposition, RiskBudgets, RiskMeasurements, RiskReport,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};

/// Ranking metrics for one binary task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub auroc: f64,
    pub auprc: f64,
    pub f1: f64,
}

/// Where a report came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub model: String,
    pub split: String,
    pub seed: u64,
}

/// Per-task metrics plus the criteria aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: BTreeMap<Task, TaskMetrics>,
    pub criteria: f64,
    pub meta: ReportMeta,
}

impl EvalReport {
    /// Build a report over the four tasks; the criteria field is the metric
    /// sum and always satisfies `criteria = Σ auroc + Σ auprc`.
    pub fn new(tasks: BTreeMap<Task, TaskMetrics>, meta: ReportMeta) -> Result<EvalReport> {
        for task in Task::ALL {
            if !tasks.contains_key(&task) {
                return Err(Error::invalid(format!(
                    "report is missing metrics for {task}"
                )));
            }
        }
        let criteria = criteria_of(&tasks);
        Ok(EvalReport {
            tasks,
            criteria,
            meta,
        })
    }
}

fn criteria_of(tasks: &BTreeMap<Task, TaskMetrics>) -> f64 {
    let mut total = 0.0;
    for task in Task::ALL {
        if let Some(m) = tasks.get(&task) {
            total += m.auroc;
        }
    }
    for task in Task::ALL {
        if let Some(m) = tasks.get(&task) {
            total += m.auprc;
        }
    }
    total
}

/// The criteria aggregate: the sum of the four per-task AUROCs and the four
/// per-task AUPRCs.
pub fn criteria(report: &EvalReport) -> f64 {
    criteria_of(&report.tasks)
}

/// Convenience for tests and tables: criteria from raw metric arrays.
pub fn criteria_from_values(aurocs: &[f64; 4], auprcs: &[f64; 4]) -> f64 {
    aurocs.iter().sum::<f64>() + auprcs.iter().sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report_from(aurocs: [f64; 4], auprcs: [f64; 4]) -> EvalReport {
        let tasks: BTreeMap<Task, TaskMetrics> = Task::ALL
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                (
                    t,
                    TaskMetrics {
                        auroc: aurocs[i],
                        auprc: auprcs[i],
                        f1: 0.0,
                    },
                )
            })
            .collect();
        EvalReport::new(tasks, ReportMeta::default()).unwrap()
    }

    #[test]
    fn criteria_is_metric_sum() {
        let r = report_from([0.5, 0.5, 0.5, 0.5], [0.25, 0.25, 0.25, 0.25]);
        assert!((criteria(&r) - 3.0).abs() < 1e-12);
        assert!((r.criteria - 3.0).abs() < 1e-12);
        let zero = report_from([0.0; 4], [0.0; 4]);
        assert_eq!(criteria(&zero), 0.0);
    }

    #[test]
    fn missing_task_is_rejected() {
        let mut tasks = BTreeMap::new();
        tasks.insert(
            Task::Mi,
            TaskMetrics {
                auroc: 0.5,
                auprc: 0.5,
                f1: 0.5,
            },
        );
        assert!(EvalReport::new(tasks, ReportMeta::default()).is_err());
    }
}
