//! Experiment orchestration: grid enumeration and execution, scarcity
//! suites, and report emission.

mod grid;
mod report;
mod scarcity;

pub use grid::{enumerate_cases, run_grid, CaseSpec, GridPaths};
pub use report::{emit_report, parse_report_csv, ReportFormat};
pub use scarcity::{scarcity_suite, LevelKind, ScarcityModelSpec, ScarcityRow, ScarcitySource};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::downstream::Regime;
use crate::error::{Error, Result};
use crate::metrics::TaskMetrics;
use crate::ssl::{Method, PretrainHyper};

fn default_version() -> u32 {
    0 // invalid; the version field is mandatory and checked by validate()
}
fn default_tasks() -> Vec<Task> {
    Task::ALL.to_vec()
}
fn default_regimes() -> Vec<Regime> {
    vec![Regime::Probe]
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// Shared downstream training hyperparameters for grid and scarcity runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownstreamHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Probe heads train on precomputed embeddings and can afford more
    /// epochs than end-to-end regimes.
    pub probe_epochs: usize,
}

impl Default for DownstreamHyper {
    fn default() -> Self {
        DownstreamHyper {
            epochs: 8,
            batch_size: 32,
            lr: 1e-4,
            weight_decay: 1e-5,
            probe_epochs: 40,
        }
    }
}

/// The experiment matrix: architecture lists, methods, downstream regimes,
/// scarcity levels, seeds, and the parameter budget that models OOM.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_version")]
    pub version: u32,
    pub patch: Vec<usize>,
    pub depth: Vec<usize>,
    pub dim: Vec<usize>,
    pub methods: Vec<Method>,
    #[serde(default = "default_tasks")]
    pub tasks: Vec<Task>,
    #[serde(default = "default_regimes")]
    pub regimes: Vec<Regime>,
    #[serde(default)]
    pub data_usage: Vec<f64>,
    #[serde(default)]
    pub case_ratio: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Maximum trainable scalars; configs above it are emitted as OOM.
    pub parameter_budget: usize,
    #[serde(default)]
    pub pretrain: PretrainHyper,
    #[serde(default)]
    pub downstream: DownstreamHyper,
}

impl GridSpec {
    /// The paper's full matrix with a given budget.
    pub fn paper_grid(parameter_budget: usize) -> GridSpec {
        GridSpec {
            version: 1,
            patch: vec![60, 125, 250],
            depth: vec![2, 4, 8],
            dim: vec![256, 512, 1024],
            methods: Method::ALL.to_vec(),
            tasks: default_tasks(),
            regimes: default_regimes(),
            data_usage: vec![],
            case_ratio: vec![],
            seeds: default_seeds(),
            parameter_budget,
            pretrain: PretrainHyper::default(),
            downstream: DownstreamHyper::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != 1 {
            return Err(Error::parse(format!(
                "unsupported grid spec version {} (expected 1)",
                self.version
            )));
        }
        for (name, empty) in [
            ("patch", self.patch.is_empty()),
            ("depth", self.depth.is_empty()),
            ("dim", self.dim.is_empty()),
            ("methods", self.methods.is_empty()),
            ("tasks", self.tasks.is_empty()),
            ("regimes", self.regimes.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ] {
            if empty {
                return Err(Error::invalid(format!("grid list `{name}` is empty")));
            }
        }
        if self.parameter_budget == 0 {
            return Err(Error::invalid("parameter budget must be positive"));
        }
        if self.data_usage.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::invalid("data_usage levels must lie in (0, 1]"));
        }
        if self.case_ratio.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
            return Err(Error::invalid("case_ratio levels must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Outcome of one grid case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CaseStatus {
    Ok,
    Oom,
    Failed,
}

impl CaseStatus {
    pub fn label(&self) -> &'static str {
        match self {
            CaseStatus::Ok => "ok",
            CaseStatus::Oom => "OOM",
            CaseStatus::Failed => "FAILED",
        }
    }
}

/// One grid result: case identity, per-task metrics, and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub case: usize,
    pub method: Method,
    pub regime: Regime,
    pub windows: usize,
    pub depth: usize,
    pub dims: usize,
    pub status: CaseStatus,
    pub metrics: Option<BTreeMap<Task, TaskMetrics>>,
    pub criteria: Option<f64>,
    pub seed: u64,
    pub checkpoint: Option<String>,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ResultRow {
    /// Criteria recomputed from the stored metrics (sum of present AUROCs
    /// and AUPRCs).
    pub fn recompute_criteria(&self) -> Option<f64> {
        self.metrics.as_ref().map(|m| {
            let mut total = 0.0;
            for task in Task::ALL {
                if let Some(t) = m.get(&task) {
                    total += t.auroc;
                }
            }
            for task in Task::ALL {
                if let Some(t) = m.get(&task) {
                    total += t.auprc;
                }
            }
            total
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_grid_validates() {
        let spec = GridSpec::paper_grid(1_000_000);
        spec.validate().unwrap();
    }

    #[test]
    fn version_is_mandatory() {
        let json = r#"{"patch":[125],"depth":[2],"dim":[64],
            "methods":["gl"],"parameter_budget":100}"#;
        let spec: GridSpec = serde_json::from_str(json).unwrap();
        assert!(spec.validate().is_err());

        let json = r#"{"version":1,"patch":[125],"depth":[2],"dim":[64],
            "methods":["gl"],"parameter_budget":100}"#;
        let spec: GridSpec = serde_json::from_str(json).unwrap();
        spec.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let json = r#"{"version":1,"patch":[125],"depth":[2],"dim":[64],
            "methods":["gl"],"parameter_budget":100,"bogus":true}"#;
        assert!(serde_json::from_str::<GridSpec>(json).is_err());
    }
}
