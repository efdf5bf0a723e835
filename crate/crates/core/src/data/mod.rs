//! Dataset types, standardization, splitting, subsampling, synthesis, and
//! the on-disk container format.
//!
//! Every record is brought to the canonical form of 12 leads × 2500 samples
//! at 250 Hz with a 1.0 mV unit before any model sees it.

mod container;
mod split;
mod standardize;
mod synth;

pub use container::{read_dataset, write_dataset};
pub use split::{split_by_patient, subsample_case_ratio, subsample_data_usage};
pub use standardize::{fit_duration, resample, rescale_units, standardize};
pub use synth::{synth_generate, SynthSpec};

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical number of leads.
pub const CANONICAL_LEADS: usize = 12;
/// Canonical samples per lead (10 s at 250 Hz).
pub const CANONICAL_SAMPLES: usize = 2500;
/// Canonical sample rate in Hz.
pub const CANONICAL_RATE: u32 = 250;

/// The four binary diagnostic tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Mi,
    Sttc,
    Cd,
    Hyp,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Mi, Task::Sttc, Task::Cd, Task::Hyp];

    pub fn name(&self) -> &'static str {
        match self {
            Task::Mi => "MI",
            Task::Sttc => "STTC",
            Task::Cd => "CD",
            Task::Hyp => "HYP",
        }
    }

    pub fn parse(s: &str) -> Result<Task> {
        match s.to_ascii_lowercase().as_str() {
            "mi" => Ok(Task::Mi),
            "sttc" => Ok(Task::Sttc),
            "cd" => Ok(Task::Cd),
            "hyp" => Ok(Task::Hyp),
            other => Err(Error::invalid(format!("unknown task `{other}`"))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Four independent binary diagnostic flags. A record may carry zero, one,
/// or several.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub mi: bool,
    pub sttc: bool,
    pub cd: bool,
    pub hyp: bool,
}

impl LabelSet {
    pub fn get(&self, task: Task) -> bool {
        match task {
            Task::Mi => self.mi,
            Task::Sttc => self.sttc,
            Task::Cd => self.cd,
            Task::Hyp => self.hyp,
        }
    }

    pub fn set(&mut self, task: Task, value: bool) {
        match task {
            Task::Mi => self.mi = value,
            Task::Sttc => self.sttc = value,
            Task::Cd => self.cd = value,
            Task::Hyp => self.hyp = value,
        }
    }
}

/// One multichannel signal with identity and unit metadata.
///
/// `leads` is `[n_leads × n_samples]` in millivolts after multiplying by
/// `mv_unit` (raw files may store counts with a sub-millivolt unit).
#[derive(Debug, Clone, PartialEq)]
pub struct ECGRecord {
    pub record_id: String,
    pub patient_id: String,
    pub leads: Array2<f64>,
    pub sample_rate: u32,
    pub mv_unit: f64,
}

impl ECGRecord {
    pub fn n_leads(&self) -> usize {
        self.leads.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.leads.ncols()
    }

    /// True when the record satisfies the post-standardization invariants.
    pub fn is_canonical(&self) -> bool {
        self.n_leads() == CANONICAL_LEADS
            && self.n_samples() == CANONICAL_SAMPLES
            && self.sample_rate == CANONICAL_RATE
            && self.mv_unit == 1.0
    }

    pub fn all_finite(&self) -> bool {
        self.leads.iter().all(|v| v.is_finite())
    }
}

/// Which split a dataset came out of; training loops refuse `Test`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

/// An ordered collection of records with an optional label map.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<ECGRecord>,
    pub labels: Option<BTreeMap<String, LabelSet>>,
    /// Provenance tag set by `split_by_patient` and preserved by the
    /// subsampling operations.
    pub split_tag: Option<SplitTag>,
    /// Free-form warnings accumulated by operations (e.g. a case-ratio
    /// request that exceeded the available positives).
    pub notes: Vec<String>,
}

impl Dataset {
    /// Build a dataset, checking record-id uniqueness and label coverage.
    pub fn new(
        records: Vec<ECGRecord>,
        labels: Option<BTreeMap<String, LabelSet>>,
    ) -> Result<Dataset> {
        let mut seen = std::collections::HashSet::new();
        for r in &records {
            if !seen.insert(r.record_id.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate record_id `{}`",
                    r.record_id
                )));
            }
        }
        if let Some(map) = &labels {
            for r in &records {
                if !map.contains_key(&r.record_id) {
                    return Err(Error::invalid(format!(
                        "record `{}` has no label entry",
                        r.record_id
                    )));
                }
            }
        }
        Ok(Dataset {
            records,
            labels,
            split_tag: None,
            notes: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn label_of(&self, record_id: &str) -> Option<LabelSet> {
        self.labels.as_ref().and_then(|m| m.get(record_id).copied())
    }

    /// Labels for `task` in record order. Errors when the dataset is
    /// unlabeled.
    pub fn task_labels(&self, task: Task) -> Result<Vec<bool>> {
        let map = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::invalid("dataset has no labels"))?;
        self.records
            .iter()
            .map(|r| {
                map.get(&r.record_id)
                    .map(|l| l.get(task))
                    .ok_or_else(|| {
                        Error::invalid(format!("record `{}` has no label entry", r.record_id))
                    })
            })
            .collect()
    }

    /// Distinct patient ids in first-appearance order.
    pub fn patient_ids(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for r in &self.records {
            if seen.insert(r.patient_id.as_str()) {
                out.push(r.patient_id.clone());
            }
        }
        out
    }

    /// Keep the records at `indices` (in the given order), carrying labels,
    /// tag, and notes along.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let records: Vec<ECGRecord> =
            indices.iter().map(|&i| self.records[i].clone()).collect();
        let labels = self.labels.as_ref().map(|m| {
            records
                .iter()
                .filter_map(|r| m.get(&r.record_id).map(|l| (r.record_id.clone(), *l)))
                .collect()
        });
        Dataset {
            records,
            labels,
            split_tag: self.split_tag,
            notes: self.notes.clone(),
        }
    }
}

/// Train/val/test fractions plus the seed driving the patient shuffle.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    /// 80% train+val (split 90/10) and 20% test.
    pub fn default_with_seed(seed: u64) -> SplitSpec {
        SplitSpec {
            train: 0.72,
            val: 0.08,
            test: 0.20,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train < 0.0 || self.val < 0.0 || self.test < 0.0 {
            return Err(Error::invalid("split fractions must be non-negative"));
        }
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split fractions must sum to 1 (got {sum})"
            )));
        }
        Ok(())
    }
}
