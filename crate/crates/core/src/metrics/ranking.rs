//! Ranking metrics with exact tie handling.

use crate::error::{Error, Result};

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels must have equal length"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

/// Probability that a random positive outscores a random negative, ties
/// counted one half (the Mann–Whitney formulation, computed via average
/// ranks so tied blocks are exact).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUROC needs both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // Average ranks over tied blocks (1-based ranks).
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Average precision: the sum over descending-score prefixes of
/// (recall increment × precision at that prefix), with tied scores
/// processed as one block.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (n_pos, _n_neg) = check_inputs(scores, labels)?;
    if n_pos == 0 {
        return Err(Error::UndefinedMetric(
            "AUPRC needs at least one positive".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());

    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &k in &order[i..=j] {
            if labels[k] {
                tp += 1;
            }
            seen += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Ok(ap)
}

/// F1 at a decision threshold (scores at or above it are predicted
/// positive); 0 by convention when precision + recall vanish.
pub fn f1(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    check_inputs(scores, labels)?;
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for (&s, &l) in scores.iter().zip(labels) {
        let pred = s >= threshold;
        match (pred, l) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            (false, false) => {}
        }
    }
    if tp == 0.0 {
        return Ok(0.0);
    }
    let precision = tp / (tp + fp);
    let recall = tp / (tp + fn_);
    Ok(2.0 * precision * recall / (precision + recall))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Brute force over all positive-negative pairs: 1 per win, 0.5 per tie.
    pub(crate) fn auroc_pair_oracle(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auroc_worked_example() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [false, false, true, true];
        assert_eq!(auroc(&scores, &labels).unwrap(), 0.75);
    }

    #[test]
    fn auroc_extremes() {
        let labels = [false, false, true, true];
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5, 0.5, 0.5, 0.5], &labels).unwrap(), 0.5);
        assert!(auroc(&[0.5, 0.6], &[true, true]).is_err());
    }

    #[test]
    fn auroc_matches_pair_oracle_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..300 {
            let n = rng.random_range(2..=40);
            let scores: Vec<f64> =
                (0..n).map(|_| rng.random_range(0..6) as f64 / 5.0).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.random_range(0..2) == 1).collect();
            if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
                continue;
            }
            let fast = auroc(&scores, &labels).unwrap();
            let slow = auroc_pair_oracle(&scores, &labels);
            assert_eq!(fast, slow, "scores={scores:?} labels={labels:?}");
        }
    }

    #[test]
    fn auroc_monotone_transform_invariance() {
        let scores = [0.1, 0.5, 0.3, 0.9, 0.2];
        let labels = [false, true, false, true, true];
        let base = auroc(&scores, &labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp()).collect();
        assert_eq!(auroc(&squashed, &labels).unwrap(), base);
    }

    #[test]
    fn auroc_complement_identity_without_ties() {
        let scores = [0.11, 0.52, 0.33, 0.94, 0.25];
        let labels = [false, true, false, true, true];
        let a = auroc(&scores, &labels).unwrap();
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let b = auroc(&neg, &labels).unwrap();
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auprc_worked_examples() {
        // Perfect ranking.
        assert_eq!(
            auprc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(),
            1.0
        );
        // Constant scores: one block, AP = prevalence.
        let ap = auprc(&[0.5; 8], &[true, false, false, true, false, false, false, false])
            .unwrap();
        assert!((ap - 0.25).abs() < 1e-12);
        // Interleaved example: 1/2 + (2/3)·(1/2) = 5/6.
        let ap = auprc(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);
        assert!(auprc(&[0.5, 0.6], &[false, false]).is_err());
    }

    /// Prefix enumeration at every distinct threshold (O(n²)).
    pub(crate) fn auprc_prefix_oracle(scores: &[f64], labels: &[bool]) -> f64 {
        let n_pos = labels.iter().filter(|&&l| l).count();
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for &t in &thresholds {
            let mut tp = 0usize;
            let mut seen = 0usize;
            for (&s, &l) in scores.iter().zip(labels) {
                if s >= t {
                    seen += 1;
                    if l {
                        tp += 1;
                    }
                }
            }
            let recall = tp as f64 / n_pos as f64;
            let precision = tp as f64 / seen as f64;
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        ap
    }

    #[test]
    fn auprc_matches_prefix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let n = rng.random_range(2..=40);
            let scores: Vec<f64> =
                (0..n).map(|_| rng.random_range(0..5) as f64 / 4.0).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.random_range(0..2) == 1).collect();
            if !labels.iter().any(|&l| l) {
                continue;
            }
            let fast = auprc(&scores, &labels).unwrap();
            let slow = auprc_prefix_oracle(&scores, &labels);
            assert!(
                (fast - slow).abs() < 1e-12,
                "scores={scores:?} labels={labels:?}"
            );
        }
    }

    #[test]
    fn auprc_constant_scores_equal_prevalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let n = rng.random_range(2..=30);
            let labels: Vec<bool> = (0..n).map(|_| rng.random_range(0..2) == 1).collect();
            if !labels.iter().any(|&l| l) {
                continue;
            }
            let prev = labels.iter().filter(|&&l| l).count() as f64 / n as f64;
            let ap = auprc(&vec![0.3; n], &labels).unwrap();
            assert!((ap - prev).abs() < 1e-12);
        }
    }

    #[test]
    fn f1_worked_examples() {
        // All correct.
        assert_eq!(
            f1(&[0.9, 0.8, 0.1], &[true, true, false], 0.5).unwrap(),
            1.0
        );
        // No predicted positives.
        assert_eq!(
            f1(&[0.1, 0.2, 0.3], &[true, false, true], 0.5).unwrap(),
            0.0
        );
        // TP=1, FP=1, FN=1.
        let v = f1(&[0.9, 0.8, 0.1], &[true, false, true], 0.5).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }
}
