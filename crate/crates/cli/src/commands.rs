//! Command handlers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use foundry_core::data::{
    read_dataset, split_by_patient, standardize as standardize_record, subsample_case_ratio,
    subsample_data_usage, synth_generate, write_dataset, Dataset, SplitSpec, SynthSpec, Task,
};
use foundry_core::downstream::{
    fine_tune, linear_probe, predict, random_probe, supervised_baseline, TaskSpec, TrainedModel,
};
use foundry_core::exp::{emit_report, run_grid, GridPaths, GridSpec, ReportFormat, ResultRow};
use foundry_core::metrics::{auprc, auroc, f1, RiskBudgets};
use foundry_core::nn::{init_params, ModelConfig, Parts};
use foundry_core::ssl::{write_loss_history_csv, Method, PretrainHyper};
use foundry_core::Checkpoint;

use crate::{
    DownstreamArgs, GridArgs, PretrainArgs, ReportArgs, RiskArgs, SplitArgs, StandardizeArgs,
    SubsampleArgs, SynthArgs,
};

pub fn synth(args: SynthArgs) -> Result<()> {
    let spec: SynthSpec = match &args.spec {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)
            .with_context(|| format!("parsing generator spec {}", path.display()))?,
        None => SynthSpec::default(),
    };
    let ds = synth_generate(&spec, args.patients, args.records_per_patient, args.seed);
    write_dataset(&ds, &args.out)?;
    println!(
        "wrote {} records ({} patients) to {}",
        ds.len(),
        args.patients,
        args.out.display()
    );
    Ok(())
}

pub fn standardize(args: StandardizeArgs) -> Result<()> {
    let ds = read_dataset(&args.data)?;
    let records = ds
        .records
        .iter()
        .map(standardize_record)
        .collect::<foundry_core::Result<Vec<_>>>()?;
    let out = Dataset {
        records,
        labels: ds.labels.clone(),
        split_tag: ds.split_tag,
        notes: ds.notes.clone(),
    };
    write_dataset(&out, &args.out)?;
    println!("standardized {} records into {}", out.len(), args.out.display());
    Ok(())
}

pub fn split(args: SplitArgs) -> Result<()> {
    let parts: Vec<f64> = args
        .fractions
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .context("parsing --fractions")?;
    if parts.len() != 3 {
        bail!("--fractions needs exactly three comma-separated values");
    }
    let ds = read_dataset(&args.data)?;
    let spec = SplitSpec {
        train: parts[0],
        val: parts[1],
        test: parts[2],
        seed: args.seed,
    };
    let (train, val, test) = split_by_patient(&ds, &spec)?;
    for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
        write_dataset(part, &args.out.join(name))?;
        println!("{name}: {} records", part.len());
    }
    Ok(())
}

pub fn subsample(args: SubsampleArgs) -> Result<()> {
    let ds = read_dataset(&args.data)?;
    let out = match (args.usage, args.case_ratio, &args.task) {
        (Some(pct), None, None) => subsample_data_usage(&ds, pct, args.seed)?,
        (None, Some(r), Some(task)) => {
            subsample_case_ratio(&ds, Task::parse(task)?, r, args.seed)?
        }
        _ => bail!("pass either --usage, or --case-ratio with --task"),
    };
    for note in &out.notes {
        eprintln!("warning: {note}");
    }
    write_dataset(&out, &args.out)?;
    println!("kept {} of {} records", out.len(), ds.len());
    Ok(())
}

pub fn pretrain_hyper(args: &PretrainArgs) -> PretrainHyper {
    PretrainHyper {
        steps: args.steps,
        lr: args.lr,
        weight_decay: args.weight_decay,
        tau: args.tau,
        mask_ratio: args.mask_ratio,
        plan: foundry_core::PretrainBatchPlan {
            patients_per_batch: args.patients_per_batch,
            ..Default::default()
        },
        ..Default::default()
    }
}

pub fn pretrain(args: PretrainArgs) -> Result<()> {
    let method = Method::parse(&args.method)?;
    let cfg: ModelConfig = serde_json::from_str(&fs::read_to_string(&args.config)?)
        .with_context(|| format!("parsing model config {}", args.config.display()))?;
    let data = read_dataset(&args.data)?;
    let hyper = pretrain_hyper(&args);
    let (ck, history) = foundry_core::ssl::pretrain(&data, &cfg, method, &hyper, args.seed)?;
    ck.save(&args.out)?;
    if let Some(path) = &args.loss_csv {
        write_loss_history_csv(&history, path)?;
    }
    match (history.first(), history.last()) {
        (Some(first), Some(last)) => println!(
            "{method} pre-training: {} steps, loss {:.4} -> {:.4}, checkpoint {}",
            args.steps,
            first.loss.total,
            last.loss.total,
            args.out.display()
        ),
        _ => println!("wrote untrained checkpoint {}", args.out.display()),
    }
    Ok(())
}

pub enum Kind {
    Probe,
    Finetune,
    Supervised,
}

fn load_split(dir: &Path) -> Result<(Dataset, Option<Dataset>, Dataset)> {
    let train = read_dataset(&dir.join("train"))
        .with_context(|| format!("reading {}/train", dir.display()))?;
    let val = match read_dataset(&dir.join("val")) {
        Ok(v) if !v.is_empty() => Some(v),
        _ => None,
    };
    let test = read_dataset(&dir.join("test"))
        .with_context(|| format!("reading {}/test", dir.display()))?;
    Ok((train, val, test))
}

fn write_predictions(
    path: &Path,
    model: &TrainedModel,
    test: &Dataset,
    task: Task,
) -> Result<Vec<f64>> {
    let scores = predict(model, &test.records)?;
    let labels = test.task_labels(task)?;
    let mut f = fs::File::create(path)?;
    writeln!(f, "record_id,score,label")?;
    for ((r, s), l) in test.records.iter().zip(&scores).zip(&labels) {
        writeln!(f, "{},{},{}", r.record_id, s, u8::from(*l))?;
    }
    Ok(scores)
}

pub fn downstream(args: DownstreamArgs, kind: Kind) -> Result<()> {
    let task = Task::parse(&args.task)?;
    let (train, val, test) = load_split(&args.data)?;
    let spec = TaskSpec {
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr: args.lr,
        weight_decay: args.weight_decay,
        ..TaskSpec::new(task, args.seed)
    };

    let load_config = || -> Result<ModelConfig> {
        let path = args
            .config
            .as_ref()
            .context("--config is required for this command")?;
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    };

    let model = match kind {
        Kind::Supervised => supervised_baseline(&load_config()?, &train, val.as_ref(), &spec)?,
        Kind::Probe if args.ckpt == "random" => {
            let cfg = load_config()?;
            let fresh = Checkpoint {
                config: cfg.clone(),
                method: None,
                kind: "random".into(),
                seed: args.seed,
                steps: 0,
                loss_summary: foundry_core::checkpoint::LossSummary::empty(),
                params: init_params(&cfg, &Parts::encoder_only(), args.seed),
            };
            random_probe(&fresh, &train, val.as_ref(), &spec)?
        }
        Kind::Probe => {
            let ck = Checkpoint::load(Path::new(&args.ckpt))?;
            linear_probe(&ck, &train, val.as_ref(), &spec)?
        }
        Kind::Finetune => {
            let ck = Checkpoint::load(Path::new(&args.ckpt))?;
            fine_tune(&ck, &train, val.as_ref(), &spec)?
        }
    };
    model.to_checkpoint().save(&args.out)?;

    let scores = match &args.pred_csv {
        Some(path) => write_predictions(path, &model, &test, task)?,
        None => predict(&model, &test.records)?,
    };
    let labels = test.task_labels(task)?;
    let (a, p, f1v) = (
        auroc(&scores, &labels)?,
        auprc(&scores, &labels)?,
        f1(&scores, &labels, 0.5)?,
    );
    println!(
        "{} {task}: test AUROC {a:.4}  AUPRC {p:.4}  F1 {f1v:.4}",
        model.provenance.regime
    );
    if let Some(path) = &args.report {
        let report = serde_json::json!({
            "task": task,
            "regime": model.provenance.regime,
            "seed": args.seed,
            "auroc": a,
            "auprc": p,
            "f1": f1v,
        });
        fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

pub fn grid(args: GridArgs) -> Result<()> {
    let spec: GridSpec = serde_json::from_str(&fs::read_to_string(&args.spec)?)
        .with_context(|| format!("parsing grid spec {}", args.spec.display()))?;
    spec.validate()?;
    let (train, val, test) = load_split(&args.data)?;
    let pretrain_pool = match &args.pretrain_data {
        Some(dir) => read_dataset(dir)?,
        None => {
            let mut t = train.clone();
            t.split_tag = None;
            t
        }
    };
    let rows = run_grid(
        &spec,
        &GridPaths {
            pretrain_data: &pretrain_pool,
            train: &train,
            val: val.as_ref(),
            test: &test,
            out_dir: &args.out,
        },
    )?;
    let ok = rows
        .iter()
        .filter(|r| r.status == foundry_core::CaseStatus::Ok)
        .count();
    let oom = rows
        .iter()
        .filter(|r| r.status == foundry_core::CaseStatus::Oom)
        .count();
    println!(
        "grid finished: {} rows ({ok} ok, {oom} OOM, {} failed) in {}",
        rows.len(),
        rows.len() - ok - oom,
        args.out.display()
    );
    Ok(())
}

pub fn report(args: ReportArgs) -> Result<()> {
    let format = ReportFormat::parse(&args.format)?;
    let mut rows: Vec<ResultRow> = Vec::new();
    let rows_dir = if args.rows.join("rows").is_dir() {
        args.rows.join("rows")
    } else {
        args.rows.clone()
    };
    if rows_dir.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(&rows_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        for file in files {
            let text = fs::read_to_string(&file)?;
            let mut batch: Vec<ResultRow> = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", file.display()))?;
            rows.append(&mut batch);
        }
    } else {
        rows = serde_json::from_str(&fs::read_to_string(&args.rows)?)?;
    }
    rows.sort_by(|a, b| {
        (a.seed, a.method, a.case, a.regime.name())
            .cmp(&(b.seed, b.method, b.case, b.regime.name()))
    });
    let out = args.out.unwrap_or_else(|| args.rows.join("report"));
    let written = emit_report(&rows, format, &out)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct RiskConfig {
    version: u32,
    config: ModelConfig,
    method: Method,
    #[serde(default = "all_tasks")]
    tasks: Vec<Task>,
    #[serde(default)]
    budgets: RiskBudgets,
    #[serde(default)]
    seed: u64,
}

fn all_tasks() -> Vec<Task> {
    Task::ALL.to_vec()
}

pub fn riskdecomp(args: RiskArgs) -> Result<()> {
    let cfg: RiskConfig = serde_json::from_str(&fs::read_to_string(&args.config)?)
        .with_context(|| format!("parsing risk config {}", args.config.display()))?;
    if cfg.version != 1 {
        bail!("unsupported risk config version {}", cfg.version);
    }
    let (train, _val, test) = load_split(&args.data)?;
    let pool = match &args.pretrain_data {
        Some(dir) => read_dataset(dir)?,
        None => {
            let mut t = train.clone();
            t.split_tag = None;
            t
        }
    };
    let reports = foundry_core::metrics::risk_decomposition(
        &cfg.config,
        cfg.method,
        &pool,
        &train,
        &test,
        &cfg.tasks,
        &cfg.budgets,
        cfg.seed,
    )?;
    fs::write(&args.out, serde_json::to_string_pretty(&reports)?)?;
    for (task, r) in &reports {
        println!(
            "{task}: approx {:.4}  usability {:+.4}  probe-gen {:+.4}  encoder-gen {:+.4}",
            r.approximation_error,
            r.representation_usability_error,
            r.probe_generalization_error,
            r.encoder_generalization_error
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}
