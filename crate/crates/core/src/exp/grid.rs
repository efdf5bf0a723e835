//! Grid enumeration and execution with content-hash resume.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{CaseStatus, GridSpec, ResultRow};
use crate::checkpoint::{Checkpoint, LossSummary};
use crate::data::{Dataset, Task};
use crate::downstream::{
    fine_tune, linear_probe, predict, random_probe, supervised_baseline, Regime, TaskSpec,
    TrainedModel,
};
use crate::error::{Error, Result};
use crate::metrics::TaskMetrics;
use crate::nn::{count_params, init_params, ModelConfig};
use crate::ssl::{pretrain, Method};
use crate::util::mix_seed;

/// One pre-training case in the grid: the per-method index follows the
/// result-table convention (windows-major, then depth, then dims).
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CaseSpec {
    pub case: usize,
    pub method: Method,
    pub windows: usize,
    pub depth: usize,
    pub dims: usize,
}

impl CaseSpec {
    pub fn config(&self) -> ModelConfig {
        ModelConfig::new(self.windows, self.depth, self.dims)
    }
}

/// Deterministic Cartesian enumeration: methods in listed order, and within
/// each method windows-major, then depth, then dims.
pub fn enumerate_cases(spec: &GridSpec) -> Vec<CaseSpec> {
    let mut out = Vec::new();
    for &method in &spec.methods {
        let mut case = 0usize;
        for &windows in &spec.patch {
            for &depth in &spec.depth {
                for &dims in &spec.dim {
                    out.push(CaseSpec {
                        case,
                        method,
                        windows,
                        depth,
                        dims,
                    });
                    case += 1;
                }
            }
        }
    }
    out
}

/// Input locations for a grid run.
pub struct GridPaths<'a> {
    pub pretrain_data: &'a Dataset,
    pub train: &'a Dataset,
    pub val: Option<&'a Dataset>,
    pub test: &'a Dataset,
    pub out_dir: &'a Path,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Cheap content fingerprint of a dataset: identities, labels, and per-record
/// value sums.
fn dataset_fingerprint(ds: &Dataset) -> String {
    let mut h = Sha256::new();
    for r in &ds.records {
        h.update(r.record_id.as_bytes());
        h.update(r.patient_id.as_bytes());
        h.update(r.sample_rate.to_le_bytes());
        let sum: f64 = r.leads.iter().map(|v| v.abs()).sum();
        h.update(sum.to_le_bytes());
        if let Some(l) = ds.label_of(&r.record_id) {
            h.update([l.mi as u8, l.sttc as u8, l.cd as u8, l.hyp as u8]);
        }
    }
    hex(&h.finalize()[..8])
}

fn case_hash(spec: &GridSpec, case: &CaseSpec, seed: u64, data_fp: &str) -> String {
    let payload = serde_json::json!({
        "case": case,
        "seed": seed,
        "data": data_fp,
        "pretrain": &spec.pretrain,
        "downstream": &spec.downstream,
        "tasks": &spec.tasks,
        "budget": spec.parameter_budget,
    });
    let mut h = Sha256::new();
    h.update(payload.to_string().as_bytes());
    hex(&h.finalize()[..8])
}

fn evaluate_model(
    model: &TrainedModel,
    test: &Dataset,
    task: Task,
) -> Result<TaskMetrics> {
    let scores = predict(model, &test.records)?;
    let labels = test.task_labels(task)?;
    Ok(TaskMetrics {
        auroc: crate::metrics::auroc(&scores, &labels)?,
        auprc: crate::metrics::auprc(&scores, &labels)?,
        f1: crate::metrics::f1(&scores, &labels, 0.5)?,
    })
}

fn train_regime(
    regime: Regime,
    checkpoint: Option<&Checkpoint>,
    cfg: &ModelConfig,
    paths: &GridPaths,
    spec: &TaskSpec,
) -> Result<TrainedModel> {
    match regime {
        Regime::Probe => linear_probe(
            checkpoint.ok_or_else(|| Error::invalid("probe requires a checkpoint"))?,
            paths.train,
            paths.val,
            spec,
        ),
        Regime::Finetune => fine_tune(
            checkpoint.ok_or_else(|| Error::invalid("finetune requires a checkpoint"))?,
            paths.train,
            paths.val,
            spec,
        ),
        Regime::Supervised => supervised_baseline(cfg, paths.train, paths.val, spec),
        Regime::RandomProbe => {
            let fresh = Checkpoint {
                config: cfg.clone(),
                method: None,
                kind: "random".into(),
                seed: spec.seed,
                steps: 0,
                loss_summary: LossSummary::empty(),
                params: init_params(cfg, &crate::nn::Parts::encoder_only(), spec.seed),
            };
            random_probe(&fresh, paths.train, paths.val, spec)
        }
    }
}

fn run_case(
    spec: &GridSpec,
    case: &CaseSpec,
    seed: u64,
    hash: &str,
    paths: &GridPaths,
) -> Result<Vec<ResultRow>> {
    let cfg = case.config();
    cfg.validate()?;

    let ckpt_path = paths
        .out_dir
        .join("ckpts")
        .join(format!("{}_{:02}_{}.fmck", case.method.name().to_lowercase(), case.case, hash));
    let checkpoint = if ckpt_path.exists() {
        Checkpoint::load(&ckpt_path)?
    } else {
        let hyper = spec.pretrain.clone();
        hyper.validate()?;
        let (ck, _) = pretrain(
            paths.pretrain_data,
            &cfg,
            case.method,
            &hyper,
            mix_seed(seed, case.case as u64),
        )?;
        ck.save(&ckpt_path)?;
        ck
    };

    let mut rows = Vec::new();
    for &regime in &spec.regimes {
        let mut metrics = std::collections::BTreeMap::new();
        for (ti, &task) in spec.tasks.iter().enumerate() {
            let task_spec = TaskSpec {
                epochs: match regime {
                    Regime::Probe | Regime::RandomProbe => spec.downstream.probe_epochs,
                    _ => spec.downstream.epochs,
                },
                batch_size: spec.downstream.batch_size,
                lr: spec.downstream.lr,
                weight_decay: spec.downstream.weight_decay,
                ..TaskSpec::new(task, mix_seed(seed, 0xD0 + ti as u64))
            };
            let model = train_regime(regime, Some(&checkpoint), &cfg, paths, &task_spec)?;
            metrics.insert(task, evaluate_model(&model, paths.test, task)?);
        }
        let mut row = ResultRow {
            case: case.case,
            method: case.method,
            regime,
            windows: case.windows,
            depth: case.depth,
            dims: case.dims,
            status: CaseStatus::Ok,
            metrics: Some(metrics),
            criteria: None,
            seed,
            checkpoint: Some(ckpt_path.display().to_string()),
            config_hash: hash.to_string(),
            error: None,
        };
        row.criteria = row.recompute_criteria();
        rows.push(row);
    }
    Ok(rows)
}

fn row_file(paths: &GridPaths, case: &CaseSpec, seed: u64, hash: &str) -> PathBuf {
    paths.out_dir.join("rows").join(format!(
        "{}_{:02}_s{}_{}.json",
        case.method.name().to_lowercase(),
        case.case,
        seed,
        hash
    ))
}

/// Execute the grid. Cases whose parameter count exceeds the budget are
/// emitted with OOM status and skipped; individual failures are recorded
/// per-row without aborting; completed cases resume from their row files,
/// keyed by a content hash of (case, seed, data, hyperparameters).
pub fn run_grid(spec: &GridSpec, paths: &GridPaths) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    fs::create_dir_all(paths.out_dir.join("rows"))?;
    fs::create_dir_all(paths.out_dir.join("ckpts"))?;
    let data_fp = format!(
        "{}|{}|{}",
        dataset_fingerprint(paths.pretrain_data),
        dataset_fingerprint(paths.train),
        dataset_fingerprint(paths.test),
    );

    let mut results = Vec::new();
    for &seed in &spec.seeds {
        for case in enumerate_cases(spec) {
            let hash = case_hash(spec, &case, seed, &data_fp);
            let row_path = row_file(paths, &case, seed, &hash);
            if row_path.exists() {
                let text = fs::read_to_string(&row_path)?;
                let rows: Vec<ResultRow> = serde_json::from_str(&text)
                    .map_err(|e| Error::parse(format!("row file {}: {e}", row_path.display())))?;
                results.extend(rows);
                continue;
            }

            let cfg = case.config();
            let rows = if count_params(&cfg, &case.method.parts()) > spec.parameter_budget {
                spec.regimes
                    .iter()
                    .map(|&regime| ResultRow {
                        case: case.case,
                        method: case.method,
                        regime,
                        windows: case.windows,
                        depth: case.depth,
                        dims: case.dims,
                        status: CaseStatus::Oom,
                        metrics: None,
                        criteria: None,
                        seed,
                        checkpoint: None,
                        config_hash: hash.clone(),
                        error: None,
                    })
                    .collect()
            } else {
                match run_case(spec, &case, seed, &hash, paths) {
                    Ok(rows) => rows,
                    Err(e) => spec
                        .regimes
                        .iter()
                        .map(|&regime| ResultRow {
                            case: case.case,
                            method: case.method,
                            regime,
                            windows: case.windows,
                            depth: case.depth,
                            dims: case.dims,
                            status: CaseStatus::Failed,
                            metrics: None,
                            criteria: None,
                            seed,
                            checkpoint: None,
                            config_hash: hash.clone(),
                            error: Some(e.to_string()),
                        })
                        .collect(),
                }
            };
            fs::write(&row_path, serde_json::to_string_pretty(&rows)?)?;
            results.extend(rows);
        }
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split_by_patient, synth_generate, SplitSpec, SynthSpec};
    use crate::ssl::{PretrainBatchPlan, PretrainHyper};

    #[test]
    fn paper_grid_enumerates_81_cases_in_order() {
        let spec = GridSpec::paper_grid(usize::MAX);
        let cases = enumerate_cases(&spec);
        assert_eq!(cases.len(), 81);
        // Per-method index convention.
        assert_eq!(cases[0].case, 0);
        assert_eq!(
            (cases[0].windows, cases[0].depth, cases[0].dims),
            (60, 2, 256)
        );
        assert_eq!(
            (cases[1].windows, cases[1].depth, cases[1].dims),
            (60, 2, 512)
        );
        assert_eq!(
            (cases[3].windows, cases[3].depth, cases[3].dims),
            (60, 4, 256)
        );
        assert_eq!(
            (cases[9].windows, cases[9].depth, cases[9].dims),
            (125, 2, 256)
        );
        assert_eq!(cases[26].case, 26);
        assert_eq!(
            (cases[26].windows, cases[26].depth, cases[26].dims),
            (250, 8, 1024)
        );
        // Second method restarts its case numbering.
        assert_eq!(cases[27].case, 0);
        assert_eq!(cases[27].method, spec.methods[1]);
    }

    fn tiny_spec() -> GridSpec {
        GridSpec {
            version: 1,
            patch: vec![250],
            depth: vec![1],
            dim: vec![32],
            methods: vec![Method::Gl],
            tasks: vec![Task::Mi],
            regimes: vec![Regime::Probe],
            data_usage: vec![],
            case_ratio: vec![],
            seeds: vec![0],
            parameter_budget: 10_000_000,
            pretrain: PretrainHyper {
                steps: 2,
                plan: PretrainBatchPlan {
                    patients_per_batch: 2,
                    records_per_patient: 2,
                    views_per_record: 2,
                },
                ..Default::default()
            },
            downstream: super::super::DownstreamHyper {
                epochs: 1,
                probe_epochs: 2,
                ..Default::default()
            },
        }
    }

    fn tiny_data() -> (Dataset, Dataset, Dataset) {
        let ds = synth_generate(&SynthSpec::default(), 40, 2, 5);
        let (train, _val, test) =
            split_by_patient(&ds, &SplitSpec::default_with_seed(1)).unwrap();
        (ds, train, test)
    }

    #[test]
    fn budget_below_smallest_config_makes_all_rows_oom() {
        let mut spec = tiny_spec();
        spec.parameter_budget = 10;
        let (pre, train, test) = tiny_data();
        let dir = tempfile::tempdir().unwrap();
        let rows = run_grid(
            &spec,
            &GridPaths {
                pretrain_data: &pre,
                train: &train,
                val: None,
                test: &test,
                out_dir: dir.path(),
            },
        )
        .unwrap();
        assert!(rows.iter().all(|r| r.status == CaseStatus::Oom));
        assert!(rows.iter().all(|r| r.metrics.is_none() && r.criteria.is_none()));
    }

    #[test]
    fn grid_runs_and_resumes_identically() {
        let spec = tiny_spec();
        let (pre, train, test) = tiny_data();
        let dir = tempfile::tempdir().unwrap();
        let paths = GridPaths {
            pretrain_data: &pre,
            train: &train,
            val: None,
            test: &test,
            out_dir: dir.path(),
        };
        let first = run_grid(&spec, &paths).unwrap();
        assert_eq!(first.len(), 1);
        assert_eq!(first[0].status, CaseStatus::Ok);
        let c = first[0].criteria.unwrap();
        assert!((c - first[0].recompute_criteria().unwrap()).abs() < 1e-6);

        // Snapshot artifacts, re-run, and compare: resume is a no-op.
        let mut snapshot = std::collections::BTreeMap::new();
        for entry in walk(dir.path()) {
            snapshot.insert(entry.clone(), fs::read(&entry).unwrap());
        }
        let second = run_grid(&spec, &paths).unwrap();
        assert_eq!(first, second);
        for entry in walk(dir.path()) {
            assert_eq!(snapshot.get(&entry).unwrap(), &fs::read(&entry).unwrap());
        }
    }

    fn walk(dir: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in fs::read_dir(&d).unwrap() {
                let p = entry.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push(p);
                }
            }
        }
        out.sort();
        out
    }
}
