//! Downstream training loops and prediction.

use ndarray::{Array2, Array3, Ix2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Provenance, Regime, TaskSpec, TrainedModel};
use crate::checkpoint::Checkpoint;
use crate::data::{Dataset, ECGRecord, SplitTag};
use crate::error::{Error, Result};
use crate::metrics::auroc;
use crate::nn::{init_classifier, ModelConfig, ModelGraph, Parameters};
use crate::optim::{AdamW, AdamWConfig};
use crate::util::mix_seed;

const EVAL_BATCH: usize = 64;
const EARLY_STOP_PATIENCE: usize = 5;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn guard_training_split(ds: &Dataset, what: &str) -> Result<()> {
    if ds.split_tag == Some(SplitTag::Test) {
        return Err(Error::invalid(format!(
            "{what} received the test split; training must never see it"
        )));
    }
    Ok(())
}

fn check_two_classes(labels: &[bool]) -> Result<()> {
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::invalid(
            "training set contains a single class for this task",
        ));
    }
    Ok(())
}

fn stack_batch(records: &[&ECGRecord]) -> Array3<f64> {
    let (leads, samples) = records[0].leads.dim();
    let mut out = Array3::zeros((records.len(), leads, samples));
    for (i, r) in records.iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(0), i).assign(&r.leads);
    }
    out
}

/// Pooled encoder vectors for every record, computed in evaluation batches.
pub fn pooled_embeddings(
    records: &[ECGRecord],
    params: &Parameters,
    cfg: &ModelConfig,
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((records.len(), cfg.dim));
    for (chunk_idx, chunk) in records.chunks(EVAL_BATCH).enumerate() {
        let refs: Vec<&ECGRecord> = chunk.iter().collect();
        let signals = stack_batch(&refs);
        let vectors = crate::nn::predict_vectors(&signals, params, cfg)?;
        let start = chunk_idx * EVAL_BATCH;
        out.slice_mut(ndarray::s![start..start + chunk.len(), ..])
            .assign(&vectors);
    }
    Ok(out)
}

fn head_logits(embeddings: &Array2<f64>, head: &Parameters) -> Result<Vec<f64>> {
    let logits = crate::nn::classify(embeddings, head)?;
    Ok(logits.column(0).to_vec())
}

/// Train only the classification head on frozen, precomputed embeddings.
fn train_head(
    embeddings: &Array2<f64>,
    labels: &[bool],
    val: Option<(&Array2<f64>, &[bool])>,
    cfg: &ModelConfig,
    spec: &TaskSpec,
) -> Result<Parameters> {
    let mut head = init_classifier(cfg, spec.seed);
    let mut opt = AdamW::new(AdamWConfig {
        lr: spec.lr,
        weight_decay: spec.weight_decay,
        ..Default::default()
    });
    let targets: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let n = embeddings.nrows();

    let mut best: Option<(f64, Parameters)> = None;
    let mut since_best = 0usize;
    for epoch in 0..spec.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 0xE000 + epoch as u64));
        order.shuffle(&mut rng);
        for batch in order.chunks(spec.batch_size) {
            let x = embeddings.select(ndarray::Axis(0), batch);
            let y: Vec<f64> = batch.iter().map(|&i| targets[i]).collect();
            let mut mg = ModelGraph::new(cfg, &head, true);
            let xn = mg.g.constant(x.into_dyn());
            let logits = mg.classify(xn);
            let flat = mg.g.reshape(logits, &[batch.len()]);
            let loss = mg.g.bce_with_logits(flat, &y);
            let grads = mg.g.backward(loss);
            let mut by_name = std::collections::BTreeMap::new();
            for (name, &node) in mg.param_nodes() {
                if let Some(g) = &grads[node] {
                    by_name.insert(name.clone(), g.clone());
                }
            }
            opt.step(&mut head, &by_name);
        }
        if let Some((val_emb, val_labels)) = val {
            let scores = head_logits(val_emb, &head)?;
            let score = auroc(&scores, val_labels)?;
            let improved = best.as_ref().is_none_or(|(b, _)| score > *b);
            if improved {
                best = Some((score, head.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= EARLY_STOP_PATIENCE {
                    break;
                }
            }
        }
    }
    Ok(match best {
        Some((_, h)) => h,
        None => head,
    })
}

/// Freeze the checkpoint's encoder and train a linear head on its pooled
/// embeddings (computed once).
pub fn linear_probe(
    checkpoint: &Checkpoint,
    train: &Dataset,
    val: Option<&Dataset>,
    spec: &TaskSpec,
) -> Result<TrainedModel> {
    probe_impl(checkpoint, train, val, spec, Regime::Probe)
}

/// The identical path with a freshly initialized encoder (the random-init
/// baseline) is expressed by passing such a checkpoint; this helper tags the
/// provenance accordingly.
pub fn random_probe(
    checkpoint: &Checkpoint,
    train: &Dataset,
    val: Option<&Dataset>,
    spec: &TaskSpec,
) -> Result<TrainedModel> {
    probe_impl(checkpoint, train, val, spec, Regime::RandomProbe)
}

fn probe_impl(
    checkpoint: &Checkpoint,
    train: &Dataset,
    val: Option<&Dataset>,
    spec: &TaskSpec,
    regime: Regime,
) -> Result<TrainedModel> {
    spec.validate()?;
    guard_training_split(train, "linear_probe")?;
    let labels = train.task_labels(spec.task)?;
    check_two_classes(&labels)?;

    let cfg = &checkpoint.config;
    let encoder = checkpoint.params.subset(&["embed.", "enc."]);
    let train_emb = pooled_embeddings(&train.records, &encoder, cfg)?;
    let val_data = match val {
        Some(v) => Some((
            pooled_embeddings(&v.records, &encoder, cfg)?,
            v.task_labels(spec.task)?,
        )),
        None => None,
    };
    let head = train_head(
        &train_emb,
        &labels,
        val_data.as_ref().map(|(e, l)| (e, l.as_slice())),
        cfg,
        spec,
    )?;
    Ok(TrainedModel {
        config: cfg.clone(),
        encoder,
        head,
        frozen_encoder: true,
        provenance: Provenance {
            source: checkpoint.kind.clone(),
            regime,
            task: spec.task,
            seed: spec.seed,
        },
    })
}

/// Shared end-to-end loop for fine-tuning and the supervised baseline.
fn train_end_to_end(
    mut params: Parameters,
    cfg: &ModelConfig,
    train: &Dataset,
    val: Option<&Dataset>,
    spec: &TaskSpec,
) -> Result<Parameters> {
    let labels = train.task_labels(spec.task)?;
    check_two_classes(&labels)?;
    let targets: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let mut opt = AdamW::new(AdamWConfig {
        lr: spec.lr,
        weight_decay: spec.weight_decay,
        ..Default::default()
    });
    let val_labels = match val {
        Some(v) => Some(v.task_labels(spec.task)?),
        None => None,
    };

    let n = train.records.len();
    let mut best: Option<(f64, Parameters)> = None;
    let mut since_best = 0usize;
    for epoch in 0..spec.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 0xF000 + epoch as u64));
        order.shuffle(&mut rng);
        for batch in order.chunks(spec.batch_size) {
            let refs: Vec<&ECGRecord> = batch.iter().map(|&i| &train.records[i]).collect();
            let signals = stack_batch(&refs);
            let y: Vec<f64> = batch.iter().map(|&i| targets[i]).collect();
            let mut mg = ModelGraph::new(cfg, &params, true);
            let tokens = mg.embed(&signals);
            let enc = mg.encode(tokens);
            let pooled = mg.pool(enc);
            let logits = mg.classify(pooled);
            let flat = mg.g.reshape(logits, &[batch.len()]);
            let loss = mg.g.bce_with_logits(flat, &y);
            if !mg.g.scalar(loss).is_finite() {
                return Err(Error::NumericFailure(format!(
                    "non-finite training loss at epoch {epoch}"
                )));
            }
            let grads = mg.g.backward(loss);
            let mut by_name = std::collections::BTreeMap::new();
            for (name, &node) in mg.param_nodes() {
                if let Some(g) = &grads[node] {
                    by_name.insert(name.clone(), g.clone());
                }
            }
            opt.step(&mut params, &by_name);
        }
        if let (Some(v), Some(vl)) = (val, val_labels.as_ref()) {
            let emb = pooled_embeddings(&v.records, &params.subset(&["embed.", "enc."]), cfg)?;
            let scores = head_logits(&emb, &params.subset(&["head."]))?;
            let score = auroc(&scores, vl)?;
            let improved = best.as_ref().is_none_or(|(b, _)| score > *b);
            if improved {
                best = Some((score, params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= EARLY_STOP_PATIENCE {
                    break;
                }
            }
        }
    }
    Ok(match best {
        Some((_, p)) => p,
        None => params,
    })
}

/// Update the whole network from a pre-trained checkpoint; decoder and
/// projection arrays from the checkpoint are dropped.
pub fn fine_tune(
    checkpoint: &Checkpoint,
    train: &Dataset,
    val: Option<&Dataset>,
    spec: &TaskSpec,
) -> Result<TrainedModel> {
    spec.validate()?;
    guard_training_split(train, "fine_tune")?;
    let cfg = &checkpoint.config;
    let mut params = checkpoint.params.subset(&["embed.", "enc."]);
    for (name, value) in init_classifier(cfg, spec.seed).iter() {
        params.insert(name.clone(), value.clone());
    }
    let trained = train_end_to_end(params, cfg, train, val, spec)?;
    Ok(TrainedModel {
        config: cfg.clone(),
        encoder: trained.subset(&["embed.", "enc."]),
        head: trained.subset(&["head."]),
        frozen_encoder: false,
        provenance: Provenance {
            source: checkpoint.kind.clone(),
            regime: Regime::Finetune,
            task: spec.task,
            seed: spec.seed,
        },
    })
}

/// Random init, then the identical end-to-end loop as fine-tuning.
pub fn supervised_baseline(
    cfg: &ModelConfig,
    train: &Dataset,
    val: Option<&Dataset>,
    spec: &TaskSpec,
) -> Result<TrainedModel> {
    spec.validate()?;
    cfg.validate()?;
    guard_training_split(train, "supervised_baseline")?;
    let params = crate::nn::init_params(
        cfg,
        &crate::nn::Parts::with_classifier(),
        spec.seed,
    );
    let trained = train_end_to_end(params, cfg, train, val, spec)?;
    Ok(TrainedModel {
        config: cfg.clone(),
        encoder: trained.subset(&["embed.", "enc."]),
        head: trained.subset(&["head."]),
        frozen_encoder: false,
        provenance: Provenance {
            source: "random".into(),
            regime: Regime::Supervised,
            task: spec.task,
            seed: spec.seed,
        },
    })
}

/// Logistic scores in record order: `sigmoid(classify(pool(encode(x))))` in
/// evaluation mode.
pub fn predict(model: &TrainedModel, records: &[ECGRecord]) -> Result<Vec<f64>> {
    let mut scores = Vec::with_capacity(records.len());
    for chunk in records.chunks(EVAL_BATCH) {
        let emb = pooled_embeddings(chunk, &model.encoder, &model.config)?;
        let logits = crate::nn::classify(&emb, &model.head)?
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap()
            .column(0)
            .to_vec();
        scores.extend(logits.into_iter().map(sigmoid));
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::LossSummary;
    use crate::data::{synth_generate, SynthSpec};
    use crate::nn::{init_params, Parts};
    use crate::ssl::Method;
    use ndarray::Array2;
    use rand::Rng;

    fn toy_cfg() -> ModelConfig {
        ModelConfig {
            n_heads: Some(2),
            decoder_depth: 1,
            proj_dim: 8,
            ..ModelConfig::new(250, 1, 32)
        }
    }

    fn random_checkpoint(cfg: &ModelConfig, seed: u64) -> Checkpoint {
        Checkpoint::new_pretrain(
            cfg.clone(),
            Method::Hl,
            seed,
            0,
            LossSummary::empty(),
            init_params(cfg, &Method::Hl.parts(), seed),
        )
    }

    fn labeled_set(n_patients: usize, seed: u64) -> Dataset {
        synth_generate(&SynthSpec::default(), n_patients, 2, seed)
    }

    #[test]
    fn probe_freezes_the_encoder() {
        let cfg = toy_cfg();
        let ck = random_checkpoint(&cfg, 3);
        let train = labeled_set(12, 1);
        let spec = TaskSpec {
            epochs: 2,
            ..TaskSpec::new(crate::data::Task::Mi, 5)
        };
        let model = linear_probe(&ck, &train, None, &spec).unwrap();
        assert!(model.frozen_encoder);
        let source = ck.params.subset(&["embed.", "enc."]);
        assert_eq!(model.encoder, source);
        assert_eq!(model.provenance.regime, Regime::Probe);
    }

    #[test]
    fn probe_rejects_single_class_and_test_split() {
        let cfg = toy_cfg();
        let ck = random_checkpoint(&cfg, 3);
        let mut ds = labeled_set(6, 2);
        if let Some(labels) = ds.labels.as_mut() {
            for l in labels.values_mut() {
                l.mi = false;
            }
        }
        let spec = TaskSpec::new(crate::data::Task::Mi, 0);
        assert!(linear_probe(&ck, &ds, None, &spec).is_err());

        let mut test_tagged = labeled_set(6, 3);
        test_tagged.split_tag = Some(SplitTag::Test);
        assert!(linear_probe(&ck, &test_tagged, None, &spec).is_err());
    }

    #[test]
    fn probe_separable_embeddings_reach_train_auroc_one() {
        // Train the head directly on constructed linearly separable
        // embeddings: positives at +e0, negatives at -e0.
        let cfg = toy_cfg();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 40;
        let mut emb = Array2::zeros((n, cfg.dim));
        let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        for i in 0..n {
            emb[[i, 0]] = if labels[i] { 1.0 } else { -1.0 };
            for d in 1..cfg.dim {
                emb[[i, d]] = rng.random_range(-0.1..0.1);
            }
        }
        let spec = TaskSpec {
            epochs: 60,
            lr: 0.05,
            ..TaskSpec::new(crate::data::Task::Mi, 4)
        };
        let head = train_head(&emb, &labels, None, &cfg, &spec).unwrap();
        let scores = head_logits(&emb, &head).unwrap();
        assert_eq!(auroc(&scores, &labels).unwrap(), 1.0);
        // 100% train accuracy at the 0-logit threshold.
        let correct = scores
            .iter()
            .zip(&labels)
            .filter(|(s, &l)| (**s > 0.0) == l)
            .count();
        assert_eq!(correct, n);
    }

    #[test]
    fn zero_epoch_finetune_matches_zero_epoch_probe() {
        let cfg = toy_cfg();
        let ck = random_checkpoint(&cfg, 7);
        let train = labeled_set(8, 4);
        let spec = TaskSpec {
            epochs: 0,
            ..TaskSpec::new(crate::data::Task::Mi, 11)
        };
        let probe = linear_probe(&ck, &train, None, &spec).unwrap();
        let ft = fine_tune(&ck, &train, None, &spec).unwrap();
        let p1 = predict(&probe, &train.records).unwrap();
        let p2 = predict(&ft, &train.records).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn finetune_drops_auxiliary_arrays() {
        let cfg = toy_cfg();
        let ck = random_checkpoint(&cfg, 8);
        let train = labeled_set(8, 5);
        let spec = TaskSpec {
            epochs: 1,
            ..TaskSpec::new(crate::data::Task::Mi, 2)
        };
        let model = fine_tune(&ck, &train, None, &spec).unwrap();
        let names = model.combined_params().names();
        assert!(names.iter().all(|n| !n.starts_with("dec.") && !n.starts_with("proj.")));
        assert!(names.iter().any(|n| n.starts_with("head.")));
    }

    #[test]
    fn supervised_is_deterministic_per_seed() {
        let cfg = toy_cfg();
        let train = labeled_set(8, 6);
        let spec = TaskSpec {
            epochs: 1,
            ..TaskSpec::new(crate::data::Task::Mi, 3)
        };
        let a = supervised_baseline(&cfg, &train, None, &spec).unwrap();
        let b = supervised_baseline(&cfg, &train, None, &spec).unwrap();
        assert_eq!(a.combined_params(), b.combined_params());
    }

    #[test]
    fn predict_is_batch_invariant_and_bounded() {
        let cfg = toy_cfg();
        let ck = random_checkpoint(&cfg, 9);
        let train = labeled_set(10, 7);
        let spec = TaskSpec {
            epochs: 1,
            ..TaskSpec::new(crate::data::Task::Mi, 6)
        };
        let model = linear_probe(&ck, &train, None, &spec).unwrap();
        let batched = predict(&model, &train.records).unwrap();
        let mut singly = Vec::new();
        for r in &train.records {
            singly.extend(predict(&model, std::slice::from_ref(r)).unwrap());
        }
        for (a, b) in batched.iter().zip(&singly) {
            assert!((a - b).abs() < 1e-6);
            assert!(*a >= 0.0 && *a <= 1.0);
        }
        // Duplicate records give duplicate scores.
        let dup = vec![train.records[0].clone(), train.records[0].clone()];
        let s = predict(&model, &dup).unwrap();
        assert_eq!(s[0], s[1]);
    }

    #[test]
    fn training_loss_decreases_on_learnable_data() {
        let cfg = toy_cfg();
        let train = labeled_set(16, 8);
        let spec = TaskSpec {
            epochs: 3,
            lr: 1e-3,
            ..TaskSpec::new(crate::data::Task::Hyp, 12)
        };
        let model = supervised_baseline(&cfg, &train, None, &spec).unwrap();
        // Compare BCE of the trained model against the freshly
        // initialized one on the training set.
        let labels = train.task_labels(crate::data::Task::Hyp).unwrap();
        let bce = |m: &TrainedModel| -> f64 {
            let scores = predict(m, &train.records).unwrap();
            scores
                .iter()
                .zip(&labels)
                .map(|(s, &l)| {
                    let y = if l { 1.0 } else { 0.0 };
                    let p = s.clamp(1e-9, 1.0 - 1e-9);
                    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
                })
                .sum::<f64>()
                / labels.len() as f64
        };
        let trained_loss = bce(&model);
        let init_params = crate::nn::init_params(&cfg, &Parts::with_classifier(), spec.seed);
        let fresh = TrainedModel {
            config: cfg.clone(),
            encoder: init_params.subset(&["embed.", "enc."]),
            head: init_params.subset(&["head."]),
            frozen_encoder: false,
            provenance: model.provenance.clone(),
        };
        assert!(trained_loss < bce(&fresh));
    }
}
