//! View augmentation and patch masking.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::ECGRecord;
use crate::error::{Error, Result};
use crate::util::mix_seed;

/// Morphology-preserving transforms used to create contrastive views; each
/// component can be disabled independently.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentPolicy {
    /// Uniform multiplicative amplitude scale range.
    pub amplitude_scale: Option<(f64, f64)>,
    /// Additive Gaussian noise sigma, mV.
    pub noise_sigma: Option<f64>,
    /// Circular time shift as a fraction of the record length.
    pub max_time_shift: Option<f64>,
    /// Length of the contiguous zeroed span as a fraction of the record.
    pub time_mask_fraction: Option<f64>,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            amplitude_scale: Some((0.8, 1.2)),
            noise_sigma: Some(0.05),
            max_time_shift: Some(0.1),
            time_mask_fraction: Some(0.1),
        }
    }
}

impl AugmentPolicy {
    /// Identity policy: every component disabled.
    pub fn disabled() -> AugmentPolicy {
        AugmentPolicy {
            amplitude_scale: None,
            noise_sigma: None,
            max_time_shift: None,
            time_mask_fraction: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((lo, hi)) = self.amplitude_scale {
            if !(lo <= hi && lo > 0.0) {
                return Err(Error::invalid(format!(
                    "amplitude scale range ({lo}, {hi}) is not well-ordered"
                )));
            }
        }
        if let Some(s) = self.noise_sigma {
            if s < 0.0 {
                return Err(Error::invalid("noise sigma must be non-negative"));
            }
        }
        for (name, frac) in [
            ("max_time_shift", self.max_time_shift),
            ("time_mask_fraction", self.time_mask_fraction),
        ] {
            if let Some(f) = frac {
                if !(0.0..1.0).contains(&f) {
                    return Err(Error::invalid(format!("{name} must lie in [0, 1)")));
                }
            }
        }
        Ok(())
    }
}

/// Produce a seeded view: amplitude scaling, additive Gaussian noise,
/// circular time shift, then a contiguous zeroed span. Shape is unchanged
/// and each component draws from its own seed stream, so toggling one
/// component does not disturb the others.
pub fn augment(record: &ECGRecord, policy: &AugmentPolicy, seed: u64) -> Result<ECGRecord> {
    policy.validate()?;
    let (leads, n) = record.leads.dim();
    let mut out: Array2<f64> = record.leads.clone();

    if let Some((lo, hi)) = policy.amplitude_scale {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 1));
        let scale = rng.random_range(lo..=hi);
        out.mapv_inplace(|v| v * scale);
    }
    if let Some(sigma) = policy.noise_sigma {
        if sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 2));
            let normal = Normal::new(0.0, sigma).expect("valid sigma");
            out.mapv_inplace(|v| v + normal.sample(&mut rng));
        }
    }
    if let Some(max_shift) = policy.max_time_shift {
        let span = (max_shift * n as f64).floor() as i64;
        if span > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 3));
            let shift = rng.random_range(-span..=span);
            let shift = shift.rem_euclid(n as i64) as usize;
            if shift > 0 {
                let mut rolled = Array2::zeros((leads, n));
                for l in 0..leads {
                    for t in 0..n {
                        rolled[[l, (t + shift) % n]] = out[[l, t]];
                    }
                }
                out = rolled;
            }
        }
    }
    if let Some(frac) = policy.time_mask_fraction {
        let len = (frac * n as f64).round() as usize;
        if len > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 4));
            let start = rng.random_range(0..=(n - len));
            out.slice_mut(ndarray::s![.., start..start + len]).fill(0.0);
        }
    }

    Ok(ECGRecord {
        record_id: record.record_id.clone(),
        patient_id: record.patient_id.clone(),
        leads: out,
        sample_rate: record.sample_rate,
        mv_unit: record.mv_unit,
    })
}

/// Choose `round(ratio · seq_len)` positions to mask, uniformly without
/// replacement. Returns sorted `(visible, masked)` partitioning `0..seq_len`.
pub fn mask_patches(seq_len: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::invalid(format!(
            "mask ratio must lie in [0, 1) (got {ratio})"
        )));
    }
    let n_masked = (ratio * seq_len as f64).round() as usize;
    let mut order: Vec<usize> = (0..seq_len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    let mut masked: Vec<usize> = order[..n_masked].to_vec();
    let mut visible: Vec<usize> = order[n_masked..].to_vec();
    masked.sort_unstable();
    visible.sort_unstable();
    Ok((visible, masked))
}
