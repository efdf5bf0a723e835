//! Scratch harness for calibrating acceptance budgets. Not part of the
//! deliverable surface; run with --release.

use foundry_core::data::{split_by_patient, subsample_data_usage, synth_generate, SplitSpec, SynthSpec, Task};
use foundry_core::downstream::{fine_tune, linear_probe, predict, random_probe, supervised_baseline, TaskSpec};
use foundry_core::metrics::auroc;
use foundry_core::nn::{init_params, ModelConfig, Parts};
use foundry_core::ssl::{pretrain, Method, PretrainBatchPlan, PretrainHyper};
use foundry_core::Checkpoint;
use std::time::Instant;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "pretrain".into());
    match which.as_str() {
        "pretrain" => tune_pretrain(),
        "pretrain2" => tune_pretrain2(),
        "probe" => tune_probe(),
        "scarcity" => tune_scarcity(),
        _ => eprintln!("unknown stage"),
    }
}

fn cfg64() -> ModelConfig {
    ModelConfig {
        n_heads: Some(1),
        ..ModelConfig::new(125, 2, 64)
    }
}

fn tune_pretrain() {
    let t0 = Instant::now();
    let ds = synth_generate(&SynthSpec::default(), 250, 2, 11);
    println!("synth 500 records: {:?}", t0.elapsed());

    for lr in [1e-4, 5e-4, 1e-3] {
        for p in [8usize, 16] {
            let hyper = PretrainHyper {
                steps: 200,
                lr,
                plan: PretrainBatchPlan {
                    patients_per_batch: p,
                    records_per_patient: 2,
                    views_per_record: 2,
                },
                ..Default::default()
            };
            let t = Instant::now();
            let (_, h) = pretrain(&ds, &cfg64(), Method::Gl, &hyper, 1).unwrap();
            let first = h.first().unwrap().loss.reconstruction.unwrap();
            let last = h.last().unwrap().loss.reconstruction.unwrap();
            println!(
                "GL lr={lr} P={p}: recon {first:.4} -> {last:.4} (ratio {:.3}) in {:?}",
                last / first,
                t.elapsed()
            );
        }
    }

    for lr in [5e-4, 1e-3] {
        let hyper = PretrainHyper {
            steps: 200,
            lr,
            plan: PretrainBatchPlan {
                patients_per_batch: 8,
                records_per_patient: 2,
                views_per_record: 2,
            },
            ..Default::default()
        };
        for seed in [1u64, 2, 3] {
            let t = Instant::now();
            let (_, h) = pretrain(&ds, &cfg64(), Method::Hl, &hyper, seed).unwrap();
            let f = h.first().unwrap().loss;
            let l = h.last().unwrap().loss;
            println!(
                "HL lr={lr} seed={seed}: recon {:.4}->{:.4} pat {:.4}->{:.4} smp {:.4}->{:.4} in {:?}",
                f.reconstruction.unwrap(),
                l.reconstruction.unwrap(),
                f.patient_contrastive.unwrap(),
                l.patient_contrastive.unwrap(),
                f.sample_contrastive.unwrap(),
                l.sample_contrastive.unwrap(),
                t.elapsed()
            );
        }
    }
}

fn tune_pretrain2() {
    // Efficacy-test generator: predictable low-frequency structure dominates.
    let spec = SynthSpec {
        noise_sigma: 0.02,
        wander_amp: 0.05,
        baseline_offset: 0.5,
        ..Default::default()
    };
    let ds = synth_generate(&spec, 250, 2, 11);
    for lr in [1e-3, 3e-3] {
        for p in [16usize] {
            let hyper = PretrainHyper {
                steps: 200,
                lr,
                plan: PretrainBatchPlan {
                    patients_per_batch: p,
                    records_per_patient: 2,
                    views_per_record: 2,
                },
                ..Default::default()
            };
            for seed in [1u64, 2, 3] {
                let t = Instant::now();
                let (_, h) = pretrain(&ds, &cfg64(), Method::Gl, &hyper, seed).unwrap();
                let first = h.first().unwrap().loss.reconstruction.unwrap();
                let last = h.last().unwrap().loss.reconstruction.unwrap();
                println!(
                    "GL lr={lr} P={p} seed={seed}: recon {first:.4} -> {last:.4} (ratio {:.3}) in {:?}",
                    last / first,
                    t.elapsed()
                );
            }
        }
    }
    for tau in [0.2, 0.5] {
        for lr in [1e-3] {
            let hyper = PretrainHyper {
                steps: 200,
                lr,
                tau,
                plan: PretrainBatchPlan {
                    patients_per_batch: 16,
                    records_per_patient: 2,
                    views_per_record: 2,
                },
                ..Default::default()
            };
            for seed in [1u64, 2, 3] {
                let t = Instant::now();
                let (_, h) = pretrain(&ds, &cfg64(), Method::Hl, &hyper, seed).unwrap();
                let f = h.first().unwrap().loss;
                let l = h.last().unwrap().loss;
                println!(
                    "HL tau={tau} lr={lr} seed={seed}: recon {:.4}->{:.4} pat {:.4}->{:.4} smp {:.4}->{:.4} in {:?}",
                    f.reconstruction.unwrap(),
                    l.reconstruction.unwrap(),
                    f.patient_contrastive.unwrap(),
                    l.patient_contrastive.unwrap(),
                    f.sample_contrastive.unwrap(),
                    l.sample_contrastive.unwrap(),
                    t.elapsed()
                );
            }
        }
    }
}

fn bench_data() -> (foundry_core::Dataset, foundry_core::Dataset, foundry_core::Dataset, foundry_core::Dataset) {
    let ds = synth_generate(&SynthSpec::default(), 500, 4, 2024);
    let (train, val, test) = split_by_patient(&ds, &SplitSpec::default_with_seed(7)).unwrap();
    (ds, train, val, test)
}

fn tune_probe() {
    let t0 = Instant::now();
    let (full, train, val, test) = bench_data();
    println!(
        "bench data: {} train {} val {} test, {:?}",
        train.len(),
        val.len(),
        test.len(),
        t0.elapsed()
    );
    let cfg = cfg64();

    let hyper = PretrainHyper {
        steps: 300,
        lr: 1e-3,
        plan: PretrainBatchPlan {
            patients_per_batch: 8,
            records_per_patient: 2,
            views_per_record: 2,
        },
        ..Default::default()
    };
    for seed in [1u64, 2, 3] {
        let t = Instant::now();
        let mut pool = full.clone();
        pool.split_tag = None;
        // Pretrain on train split only to avoid leakage debates.
        let mut pre = train.clone();
        pre.split_tag = None;
        let (ck, _) = pretrain(&pre, &cfg, Method::Hl, &hyper, seed).unwrap();
        println!("pretrain seed {seed}: {:?}", t.elapsed());
        let rck = Checkpoint {
            params: init_params(&cfg, &Parts::encoder_only(), seed + 100),
            ..ck.clone()
        };
        for task in Task::ALL {
            let spec = TaskSpec {
                epochs: 40,
                lr: 1e-3,
                batch_size: 64,
                ..TaskSpec::new(task, seed + 10)
            };
            let t = Instant::now();
            let probe = linear_probe(&ck, &train, Some(&val), &spec).unwrap();
            let rand_probe_m = random_probe(&rck, &train, Some(&val), &spec).unwrap();
            let labels = test.task_labels(task).unwrap();
            let a_ssl = auroc(&predict(&probe, &test.records).unwrap(), &labels).unwrap();
            let a_rnd = auroc(&predict(&rand_probe_m, &test.records).unwrap(), &labels).unwrap();

            let ft_spec = TaskSpec {
                epochs: 5,
                lr: 1e-4,
                batch_size: 32,
                ..TaskSpec::new(task, seed + 20)
            };
            let t2 = Instant::now();
            let ft = fine_tune(&ck, &train, Some(&val), &ft_spec).unwrap();
            let a_ft = auroc(&predict(&ft, &test.records).unwrap(), &labels).unwrap();
            println!(
                "seed {seed} {task}: probe {a_ssl:.3} rand {a_rnd:.3} ft {a_ft:.3} (probe {:?} ft {:?})",
                t.elapsed(),
                t2.elapsed()
            );
        }
    }
}

fn tune_scarcity() {
    let (_, train, val, test) = bench_data();
    let cfg = cfg64();
    let hyper = PretrainHyper {
        steps: 300,
        lr: 1e-3,
        plan: PretrainBatchPlan {
            patients_per_batch: 8,
            records_per_patient: 2,
            views_per_record: 2,
        },
        ..Default::default()
    };
    for seed in [1u64, 2, 3] {
        let mut pre = train.clone();
        pre.split_tag = None;
        let (ck, _) = pretrain(&pre, &cfg, Method::Hl, &hyper, seed).unwrap();
        let thin = subsample_data_usage(&train, 0.1, seed + 5).unwrap();
        println!("thin train: {} records", thin.len());
        let mut crit_ft = 0.0;
        let mut crit_sl = 0.0;
        for task in Task::ALL {
            let spec = TaskSpec {
                epochs: 12,
                lr: 1e-4,
                batch_size: 16,
                ..TaskSpec::new(task, seed + 30)
            };
            let labels = test.task_labels(task).unwrap();
            let ft = fine_tune(&ck, &thin, Some(&val), &spec).unwrap();
            let sl = supervised_baseline(&cfg, &thin, Some(&val), &spec).unwrap();
            let sc_ft = predict(&ft, &test.records).unwrap();
            let sc_sl = predict(&sl, &test.records).unwrap();
            let (a_ft, a_sl) = (
                auroc(&sc_ft, &labels).unwrap(),
                auroc(&sc_sl, &labels).unwrap(),
            );
            let (p_ft, p_sl) = (
                foundry_core::metrics::auprc(&sc_ft, &labels).unwrap(),
                foundry_core::metrics::auprc(&sc_sl, &labels).unwrap(),
            );
            crit_ft += a_ft + p_ft;
            crit_sl += a_sl + p_sl;
            println!("seed {seed} {task}: ft {a_ft:.3}/{p_ft:.3} sl {a_sl:.3}/{p_sl:.3}");
        }
        println!("seed {seed}: criteria ft {crit_ft:.3} sl {crit_sl:.3}");
    }
}
