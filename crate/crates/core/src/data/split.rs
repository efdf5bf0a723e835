//! Patient-disjoint splitting and scarcity subsampling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, SplitSpec, SplitTag, Task};
use crate::error::{Error, Result};

/// Partition whole patients into train/val/test according to `spec`.
///
/// Patients are shuffled with the spec seed and allocated by cumulative
/// rounding of the fractions, so split sizes match the fractions as closely
/// as integer patient counts allow. Records keep their original relative
/// order within each split.
pub fn split_by_patient(
    dataset: &Dataset,
    spec: &SplitSpec,
) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    let mut patients = dataset.patient_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    patients.shuffle(&mut rng);

    let p = patients.len();
    let n_train = (spec.train * p as f64).round() as usize;
    let n_train_val = ((spec.train + spec.val) * p as f64).round() as usize;
    let n_train = n_train.min(p);
    let n_train_val = n_train_val.clamp(n_train, p);

    let train_set: std::collections::HashSet<&str> =
        patients[..n_train].iter().map(|s| s.as_str()).collect();
    let val_set: std::collections::HashSet<&str> =
        patients[n_train..n_train_val].iter().map(|s| s.as_str()).collect();

    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (i, r) in dataset.records.iter().enumerate() {
        if train_set.contains(r.patient_id.as_str()) {
            train_idx.push(i);
        } else if val_set.contains(r.patient_id.as_str()) {
            val_idx.push(i);
        } else {
            test_idx.push(i);
        }
    }

    let mut train = dataset.select(&train_idx);
    let mut val = dataset.select(&val_idx);
    let mut test = dataset.select(&test_idx);
    train.split_tag = Some(SplitTag::Train);
    val.split_tag = Some(SplitTag::Val);
    test.split_tag = Some(SplitTag::Test);
    Ok((train, val, test))
}

/// Keep `round(pct · N)` records, sampling whole patients where possible.
///
/// Patient groups are shuffled with the seed and taken greedily; the final
/// group is thinned (seeded, uniform) to hit the target count exactly, so
/// the output is deterministic per seed and roughly patient-stratified.
pub fn subsample_data_usage(labeled: &Dataset, pct: f64, seed: u64) -> Result<Dataset> {
    if labeled.labels.is_none() {
        return Err(Error::invalid("data-usage subsampling requires labels"));
    }
    if !(pct > 0.0 && pct <= 1.0) {
        return Err(Error::invalid(format!(
            "data usage percentage must lie in (0, 1] (got {pct})"
        )));
    }
    let n = labeled.len();
    let target = ((pct * n as f64).round() as usize).clamp(1, n);
    if target == n {
        return Ok(labeled.clone());
    }

    let patients = labeled.patient_ids();
    let mut order: Vec<usize> = (0..patients.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut indices_by_patient: std::collections::HashMap<&str, Vec<usize>> =
        std::collections::HashMap::new();
    for (i, r) in labeled.records.iter().enumerate() {
        indices_by_patient
            .entry(r.patient_id.as_str())
            .or_default()
            .push(i);
    }

    let mut chosen = Vec::with_capacity(target);
    for pi in order {
        if chosen.len() >= target {
            break;
        }
        let group = &indices_by_patient[patients[pi].as_str()];
        let remaining = target - chosen.len();
        if group.len() <= remaining {
            chosen.extend_from_slice(group);
        } else {
            let mut partial = group.clone();
            partial.shuffle(&mut rng);
            chosen.extend_from_slice(&partial[..remaining]);
        }
    }
    chosen.sort_unstable();
    Ok(labeled.select(&chosen))
}

/// Thin the positives of `task` so the positive fraction becomes `r`.
///
/// All negatives are kept; `round(r · n_neg / (1 − r))` positives are chosen
/// uniformly at random. When fewer positives exist than requested, all are
/// kept and a warning is recorded in the result's notes.
pub fn subsample_case_ratio(labeled: &Dataset, task: Task, r: f64, seed: u64) -> Result<Dataset> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::invalid(format!(
            "case ratio must lie in (0, 1) (got {r})"
        )));
    }
    let flags = labeled.task_labels(task)?;
    let pos: Vec<usize> = (0..flags.len()).filter(|&i| flags[i]).collect();
    let neg: Vec<usize> = (0..flags.len()).filter(|&i| !flags[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid(format!(
            "case-ratio subsampling for {task} needs both classes present"
        )));
    }

    let n_neg = neg.len();
    let want = (r * n_neg as f64 / (1.0 - r)).round() as usize;
    let want = want.max(1);
    let mut note = None;
    let keep_pos: Vec<usize> = if want >= pos.len() {
        if want > pos.len() {
            note = Some(format!(
                "case ratio {r} for {task} requires {want} positives but only {} exist; kept all",
                pos.len()
            ));
        }
        pos
    } else {
        let mut shuffled = pos;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        shuffled.shuffle(&mut rng);
        shuffled.truncate(want);
        shuffled
    };

    let mut chosen: Vec<usize> = neg.into_iter().chain(keep_pos).collect();
    chosen.sort_unstable();
    let mut out = labeled.select(&chosen);
    if let Some(n) = note {
        out.notes.push(n);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ECGRecord, LabelSet};
    use ndarray::Array2;
    use std::collections::BTreeMap;

    fn tiny_record(id: &str, patient: &str) -> ECGRecord {
        ECGRecord {
            record_id: id.to_string(),
            patient_id: patient.to_string(),
            leads: Array2::zeros((12, 4)),
            sample_rate: 250,
            mv_unit: 1.0,
        }
    }

    fn labeled_dataset(entries: &[(&str, &str, bool)]) -> Dataset {
        let records = entries
            .iter()
            .map(|(id, p, _)| tiny_record(id, p))
            .collect();
        let labels: BTreeMap<String, LabelSet> = entries
            .iter()
            .map(|(id, _, pos)| {
                (
                    id.to_string(),
                    LabelSet {
                        mi: *pos,
                        ..Default::default()
                    },
                )
            })
            .collect();
        Dataset::new(records, Some(labels)).unwrap()
    }

    #[test]
    fn split_never_shares_a_patient() {
        let entries: Vec<(String, String)> = (0..40)
            .map(|i| (format!("r{i}"), format!("p{}", i % 13)))
            .collect();
        let records = entries
            .iter()
            .map(|(id, p)| tiny_record(id, p))
            .collect();
        let ds = Dataset::new(records, None).unwrap();
        let spec = SplitSpec::default_with_seed(7);
        let (tr, va, te) = split_by_patient(&ds, &spec).unwrap();
        assert_eq!(tr.len() + va.len() + te.len(), ds.len());
        let pats = |d: &Dataset| {
            d.records
                .iter()
                .map(|r| r.patient_id.clone())
                .collect::<std::collections::HashSet<_>>()
        };
        let (a, b, c) = (pats(&tr), pats(&va), pats(&te));
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        assert_eq!(tr.split_tag, Some(SplitTag::Train));
        assert_eq!(te.split_tag, Some(SplitTag::Test));
    }

    #[test]
    fn split_single_patient_lands_in_one_split() {
        let records = vec![tiny_record("a", "p"), tiny_record("b", "p")];
        let ds = Dataset::new(records, None).unwrap();
        let spec = SplitSpec {
            train: 0.5,
            val: 0.0,
            test: 0.5,
            seed: 1,
        };
        let (tr, va, te) = split_by_patient(&ds, &spec).unwrap();
        let sizes = [tr.len(), va.len(), te.len()];
        assert_eq!(sizes.iter().filter(|&&s| s == 2).count(), 1);
        assert_eq!(sizes.iter().sum::<usize>(), 2);
    }

    #[test]
    fn split_is_deterministic() {
        let entries: Vec<(String, String)> = (0..100)
            .map(|i| (format!("r{i}"), format!("p{i}")))
            .collect();
        let records = entries
            .iter()
            .map(|(id, p)| tiny_record(id, p))
            .collect();
        let ds = Dataset::new(records, None).unwrap();
        let spec = SplitSpec::default_with_seed(99);
        let a = split_by_patient(&ds, &spec).unwrap();
        let b = split_by_patient(&ds, &spec).unwrap();
        assert_eq!(a.0.records, b.0.records);
        assert_eq!(a.1.records, b.1.records);
        assert_eq!(a.2.records, b.2.records);
    }

    #[test]
    fn split_rejects_bad_fractions_and_empty() {
        let ds = Dataset::new(vec![tiny_record("a", "p")], None).unwrap();
        let bad = SplitSpec {
            train: 0.5,
            val: 0.2,
            test: 0.2,
            seed: 0,
        };
        assert!(split_by_patient(&ds, &bad).is_err());
        let empty = Dataset::default();
        assert!(split_by_patient(&empty, &SplitSpec::default_with_seed(0)).is_err());
    }

    #[test]
    fn usage_identity_at_full_pct() {
        let ds = labeled_dataset(&[("a", "p1", true), ("b", "p2", false), ("c", "p3", true)]);
        let out = subsample_data_usage(&ds, 1.0, 3).unwrap();
        assert_eq!(out.records, ds.records);
    }

    #[test]
    fn usage_count_is_rounded() {
        let entries: Vec<(String, String, bool)> = (0..200)
            .map(|i| (format!("r{i}"), format!("p{}", i / 2), i % 4 == 0))
            .collect();
        let refs: Vec<(&str, &str, bool)> = entries
            .iter()
            .map(|(a, b, c)| (a.as_str(), b.as_str(), *c))
            .collect();
        let ds = labeled_dataset(&refs);
        let out = subsample_data_usage(&ds, 0.25, 11).unwrap();
        assert_eq!(out.len(), 50);
        let rerun = subsample_data_usage(&ds, 0.25, 11).unwrap();
        assert_eq!(out.records, rerun.records);
    }

    #[test]
    fn usage_rejects_out_of_range() {
        let ds = labeled_dataset(&[("a", "p", true), ("b", "p", false)]);
        assert!(subsample_data_usage(&ds, 0.0, 0).is_err());
        assert!(subsample_data_usage(&ds, 1.5, 0).is_err());
    }

    #[test]
    fn case_ratio_hits_exact_fraction() {
        let entries: Vec<(String, String, bool)> = (0..95)
            .map(|i| (format!("n{i}"), format!("p{i}"), false))
            .chain((0..20).map(|i| (format!("q{i}"), format!("pp{i}"), true)))
            .collect();
        let refs: Vec<(&str, &str, bool)> = entries
            .iter()
            .map(|(a, b, c)| (a.as_str(), b.as_str(), *c))
            .collect();
        let ds = labeled_dataset(&refs);
        let out = subsample_case_ratio(&ds, Task::Mi, 0.05, 5).unwrap();
        let flags = out.task_labels(Task::Mi).unwrap();
        let pos = flags.iter().filter(|&&b| b).count();
        assert_eq!(pos, 5);
        assert_eq!(out.len(), 100);
        assert!(out.notes.is_empty());
    }

    #[test]
    fn case_ratio_shortfall_flags_warning() {
        let ds = labeled_dataset(&[
            ("n0", "a", false),
            ("n1", "b", false),
            ("n2", "c", false),
            ("n3", "d", false),
            ("q0", "e", true),
        ]);
        // r = 0.5 over 4 negatives wants 4 positives; only 1 exists.
        let out = subsample_case_ratio(&ds, Task::Mi, 0.5, 5).unwrap();
        assert_eq!(out.len(), 5);
        assert_eq!(out.notes.len(), 1);
    }

    #[test]
    fn case_ratio_rejects_single_class_and_bad_r() {
        let ds = labeled_dataset(&[("a", "p", true), ("b", "q", true)]);
        assert!(subsample_case_ratio(&ds, Task::Mi, 0.1, 0).is_err());
        let ds2 = labeled_dataset(&[("a", "p", true), ("b", "q", false)]);
        assert!(subsample_case_ratio(&ds2, Task::Mi, 0.0, 0).is_err());
        assert!(subsample_case_ratio(&ds2, Task::Mi, 1.0, 0).is_err());
    }
}
