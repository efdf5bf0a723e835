//! The pre-training loop.

use std::io::Write;
use std::path::Path;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::losses::{
    contrastive_loss_graph, group_masks, reconstruction_loss_graph, sample_masks,
};
use super::{AugmentPolicy, LossBreakdown, Method, PretrainBatchPlan, PretrainHyper};
use crate::checkpoint::{Checkpoint, LossSummary};
use crate::data::{Dataset, ECGRecord};
use crate::error::{Error, Result};
use crate::nn::{init_params, patchify, ModelConfig, ModelGraph, Parameters};
use crate::optim::{AdamW, AdamWConfig};
use crate::ssl::augment;
use crate::util::mix_seed;

/// Loss components logged at one step (evaluated before the update).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepLoss {
    pub step: usize,
    pub loss: LossBreakdown,
}

/// One assembled batch: the raw records plus the augmented contrastive
/// views and their grouping metadata.
pub(crate) struct Batch {
    /// `[n_records, 12, samples]` raw signals (reconstruction pipeline).
    pub raw: Array3<f64>,
    /// `[n_records · views, 12, samples]` augmented views, record-major
    /// (views of record r are rows r·V .. r·V+V). Empty for GL.
    pub views: Array3<f64>,
    /// Patient id per record.
    pub patients: Vec<String>,
    pub views_per_record: usize,
    /// Shared mask for the reconstruction pipeline.
    pub visible: Vec<usize>,
    pub masked: Vec<usize>,
}

fn stack_records(records: &[&ECGRecord]) -> Array3<f64> {
    let (leads, samples) = records[0].leads.dim();
    let mut out = Array3::zeros((records.len(), leads, samples));
    for (i, r) in records.iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(0), i).assign(&r.leads);
    }
    out
}

/// Draw P patients (then R records each) and build raw + view tensors.
pub(crate) fn assemble_batch(
    dataset: &Dataset,
    plan: &PretrainBatchPlan,
    method: Method,
    policy: &AugmentPolicy,
    cfg: &ModelConfig,
    mask_ratio: f64,
    step_seed: u64,
) -> Result<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(step_seed, 0));
    let mut by_patient: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
    for (i, r) in dataset.records.iter().enumerate() {
        by_patient.entry(r.patient_id.as_str()).or_default().push(i);
    }
    let mut patient_list: Vec<&str> = by_patient.keys().copied().collect();
    patient_list.shuffle(&mut rng);
    let take = plan.patients_per_batch.min(patient_list.len());

    let mut chosen: Vec<usize> = Vec::new();
    let mut patients = Vec::new();
    for &p in patient_list.iter().take(take) {
        let mut recs = by_patient[p].clone();
        recs.shuffle(&mut rng);
        for &ri in recs.iter().take(plan.records_per_patient) {
            chosen.push(ri);
            patients.push(dataset.records[ri].patient_id.clone());
        }
    }
    if chosen.is_empty() {
        return Err(Error::invalid("pre-training dataset is empty"));
    }

    let refs: Vec<&ECGRecord> = chosen.iter().map(|&i| &dataset.records[i]).collect();
    let raw = stack_records(&refs);

    let views = if method.uses_contrastive() {
        let mut view_recs = Vec::with_capacity(refs.len() * plan.views_per_record);
        for (k, rec) in refs.iter().enumerate() {
            for v in 0..plan.views_per_record {
                let seed = mix_seed(step_seed, 1 + (k * plan.views_per_record + v) as u64);
                view_recs.push(augment(rec, policy, seed)?);
            }
        }
        let view_refs: Vec<&ECGRecord> = view_recs.iter().collect();
        stack_records(&view_refs)
    } else {
        Array3::zeros((0, 0, 0))
    };

    let (visible, masked) = if method.uses_reconstruction() {
        super::mask_patches(cfg.seq_len(), mask_ratio, mix_seed(step_seed, 999))?
    } else {
        ((0..cfg.seq_len()).collect(), Vec::new())
    };

    Ok(Batch {
        raw,
        views,
        patients,
        views_per_record: plan.views_per_record,
        visible,
        masked,
    })
}

/// Build the full loss graph for one batch. Returns the graph, the total
/// loss node, and the per-component breakdown.
pub(crate) fn step_loss<'a>(
    cfg: &'a ModelConfig,
    params: &Parameters,
    method: Method,
    tau: f64,
    batch: &Batch,
    trainable: bool,
) -> Result<(ModelGraph<'a>, crate::autodiff::NodeId, LossBreakdown)> {
    let mut mg = ModelGraph::new(cfg, params, trainable);
    let mut terms: Vec<crate::autodiff::NodeId> = Vec::new();
    let mut recon_val = None;
    let mut patient_val = None;
    let mut sample_val = None;

    if method.uses_reconstruction() {
        let tokens = mg.embed(&batch.raw);
        let vis_tokens = mg.g.index_select(tokens, 1, &batch.visible);
        let encoded = mg.encode(vis_tokens);
        let pred = mg.decode(encoded, &batch.visible, &batch.masked);
        let targets = patchify(&batch.raw, cfg.patch, cfg.seq_len());
        if batch.masked.is_empty() {
            return Err(Error::invalid(
                "reconstruction requires a non-empty masked set",
            ));
        }
        let loss = reconstruction_loss_graph(&mut mg.g, pred, &targets, &batch.masked);
        recon_val = Some(mg.g.scalar(loss));
        terms.push(loss);
    }

    if method.uses_contrastive() {
        let tokens = mg.embed(&batch.views);
        let encoded = mg.encode(tokens);
        let pooled = mg.pool(encoded);
        let z = mg.project(pooled);
        let v = batch.views_per_record;
        let n_records = batch.patients.len();

        // Patient-level term over one view per record: positives are other
        // records of the same patient, so single-record patients drop out.
        let first_view_rows: Vec<usize> = (0..n_records).map(|r| r * v).collect();
        let z_patient = mg.g.index_select(z, 0, &first_view_rows);
        if let Some(masks) = group_masks(&batch.patients) {
            let loss = contrastive_loss_graph(&mut mg.g, z_patient, &masks, tau);
            patient_val = Some(mg.g.scalar(loss));
            terms.push(loss);
        }

        // Sample-level term pairs the two views of every record.
        if v == 2 {
            let view1_rows: Vec<usize> = (0..n_records).map(|r| r * v).collect();
            let view2_rows: Vec<usize> = (0..n_records).map(|r| r * v + 1).collect();
            let rows: Vec<usize> = view1_rows.into_iter().chain(view2_rows).collect();
            let z_pairs = mg.g.index_select(z, 0, &rows);
            let masks = sample_masks(n_records);
            let loss = contrastive_loss_graph(&mut mg.g, z_pairs, &masks, tau);
            sample_val = Some(mg.g.scalar(loss));
            terms.push(loss);
        }
    }

    if terms.is_empty() {
        return Err(Error::invalid(
            "no loss terms active; check the method and batch plan",
        ));
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = mg.g.add(total, t);
    }
    let breakdown = LossBreakdown {
        total: mg.g.scalar(total),
        patient_contrastive: patient_val,
        sample_contrastive: sample_val,
        reconstruction: recon_val,
    };
    Ok((mg, total, breakdown))
}

/// Pre-train a foundation model on an unlabeled (or label-ignored) dataset.
///
/// Decoupled-weight-decay Adam over the method's parameter groups; the loss
/// history records every step's components before the update. Deterministic
/// per seed.
pub fn pretrain(
    dataset: &Dataset,
    cfg: &ModelConfig,
    method: Method,
    hyper: &PretrainHyper,
    seed: u64,
) -> Result<(Checkpoint, Vec<StepLoss>)> {
    cfg.validate()?;
    hyper.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("cannot pre-train on an empty dataset"));
    }
    for r in &dataset.records {
        if !r.is_canonical() {
            return Err(Error::invalid(format!(
                "record `{}` is not standardized",
                r.record_id
            )));
        }
    }

    let mut params = init_params(cfg, &method.parts(), seed);
    let mut opt = AdamW::new(AdamWConfig {
        lr: hyper.lr,
        weight_decay: hyper.weight_decay,
        ..Default::default()
    });
    let mut history = Vec::with_capacity(hyper.steps);

    for step in 0..hyper.steps {
        let step_seed = mix_seed(seed, 0x9000 + step as u64);
        let batch = assemble_batch(
            dataset,
            &hyper.plan,
            method,
            &hyper.augment,
            cfg,
            hyper.mask_ratio,
            step_seed,
        )?;
        let (mut mg, total, breakdown) =
            step_loss(cfg, &params, method, hyper.tau, &batch, true)?;
        if !breakdown.all_finite() {
            return Err(Error::NumericFailure(format!(
                "non-finite loss at step {step}: {breakdown:?}"
            )));
        }
        history.push(StepLoss {
            step,
            loss: breakdown,
        });

        let grads_by_node = mg.g.backward(total);
        let mut grads = std::collections::BTreeMap::new();
        for (name, &node) in mg.param_nodes() {
            if let Some(g) = &grads_by_node[node] {
                grads.insert(name.clone(), g.clone());
            }
        }
        opt.step(&mut params, &grads);
    }

    let summary = LossSummary {
        steps: hyper.steps,
        initial: history.first().map(|s| s.loss),
        fin: history.last().map(|s| s.loss),
    };
    let ck = Checkpoint::new_pretrain(cfg.clone(), method, seed, hyper.steps, summary, params);
    Ok((ck, history))
}

/// Emit the loss history as CSV: `step,total,patient,sample,reconstruction`
/// with empty cells for absent components.
pub fn write_loss_history_csv(history: &[StepLoss], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "step,total,patient,sample,reconstruction")?;
    let fmt = |v: Option<f64>| v.map(crate::util::fmt_f64).unwrap_or_default();
    for s in history {
        writeln!(
            f,
            "{},{},{},{},{}",
            s.step,
            crate::util::fmt_f64(s.loss.total),
            fmt(s.loss.patient_contrastive),
            fmt(s.loss.sample_contrastive),
            fmt(s.loss.reconstruction),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthSpec};

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            n_heads: Some(2),
            decoder_depth: 1,
            proj_dim: 16,
            ..ModelConfig::new(250, 1, 32)
        }
    }

    fn small_hyper(steps: usize) -> PretrainHyper {
        PretrainHyper {
            steps,
            plan: PretrainBatchPlan {
                patients_per_batch: 4,
                records_per_patient: 2,
                views_per_record: 2,
            },
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_equals_init() {
        let ds = synth_generate(&SynthSpec::default(), 4, 2, 1);
        let cfg = small_cfg();
        let (ck, history) =
            pretrain(&ds, &cfg, Method::Gl, &small_hyper(0), 33).unwrap();
        assert!(history.is_empty());
        let init = init_params(&cfg, &Method::Gl.parts(), 33);
        assert_eq!(ck.params, init);
    }

    #[test]
    fn identical_seeds_identical_checkpoints() {
        let ds = synth_generate(&SynthSpec::default(), 4, 2, 2);
        let cfg = small_cfg();
        let (a, ha) = pretrain(&ds, &cfg, Method::Hl, &small_hyper(2), 7).unwrap();
        let (b, hb) = pretrain(&ds, &cfg, Method::Hl, &small_hyper(2), 7).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(ha, hb);
        let (c, _) = pretrain(&ds, &cfg, Method::Hl, &small_hyper(2), 8).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn checkpoints_carry_only_the_methods_parts() {
        let ds = synth_generate(&SynthSpec::default(), 4, 2, 3);
        let cfg = small_cfg();
        let (cl, _) = pretrain(&ds, &cfg, Method::Cl, &small_hyper(1), 1).unwrap();
        assert!(cl.params.contains("proj.w1"));
        assert!(!cl.params.contains("dec.mask_token"));
        let (gl, _) = pretrain(&ds, &cfg, Method::Gl, &small_hyper(1), 1).unwrap();
        assert!(gl.params.contains("dec.mask_token"));
        assert!(!gl.params.contains("proj.w1"));
        let (hl, _) = pretrain(&ds, &cfg, Method::Hl, &small_hyper(1), 1).unwrap();
        assert!(hl.params.contains("dec.mask_token") && hl.params.contains("proj.w1"));
    }

    #[test]
    fn breakdown_components_match_method() {
        let ds = synth_generate(&SynthSpec::default(), 4, 2, 4);
        let cfg = small_cfg();
        let (_, h) = pretrain(&ds, &cfg, Method::Cl, &small_hyper(1), 2).unwrap();
        let l = h[0].loss;
        assert!(l.reconstruction.is_none());
        assert!(l.patient_contrastive.is_some() && l.sample_contrastive.is_some());
        assert!((l.total - l.component_sum()).abs() < 1e-6);

        let (_, h) = pretrain(&ds, &cfg, Method::Gl, &small_hyper(1), 2).unwrap();
        let l = h[0].loss;
        assert!(l.reconstruction.is_some());
        assert!(l.patient_contrastive.is_none() && l.sample_contrastive.is_none());
    }

    #[test]
    fn full_batch_step_decreases_loss_at_small_lr() {
        let ds = synth_generate(&SynthSpec::default(), 4, 2, 5);
        let cfg = small_cfg();
        for method in Method::ALL {
            let hyper = small_hyper(1);
            let params = init_params(&cfg, &method.parts(), 9);
            let batch = assemble_batch(
                &ds,
                &hyper.plan,
                method,
                &hyper.augment,
                &cfg,
                hyper.mask_ratio,
                77,
            )
            .unwrap();
            let (mut mg, total, before) =
                step_loss(&cfg, &params, method, hyper.tau, &batch, true).unwrap();
            let grads_by_node = mg.g.backward(total);
            let mut grads = std::collections::BTreeMap::new();
            for (name, &node) in mg.param_nodes() {
                if let Some(g) = &grads_by_node[node] {
                    grads.insert(name.clone(), g.clone());
                }
            }
            let mut params2 = params.clone();
            let mut opt = AdamW::new(AdamWConfig {
                lr: 1e-5,
                weight_decay: 0.0,
                ..Default::default()
            });
            opt.step(&mut params2, &grads);
            let (_, _, after) =
                step_loss(&cfg, &params2, method, hyper.tau, &batch, false).unwrap();
            assert!(
                after.total <= before.total + 1e-9,
                "{method}: {} -> {}",
                before.total,
                after.total
            );
        }
    }

    #[test]
    fn loss_history_csv_layout() {
        let ds = synth_generate(&SynthSpec::default(), 4, 2, 6);
        let cfg = small_cfg();
        let (_, h) = pretrain(&ds, &cfg, Method::Gl, &small_hyper(2), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        write_loss_history_csv(&h, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,total,patient,sample,reconstruction"
        );
        let row = lines.next().unwrap();
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells.len(), 5);
        assert!(cells[2].is_empty() && cells[3].is_empty());
        assert!(!cells[4].is_empty());
    }
}
