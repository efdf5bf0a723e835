//! Canonicalization: resampling, unit rescaling, and duration fitting.

use ndarray::Array2;

use super::{ECGRecord, CANONICAL_LEADS, CANONICAL_RATE, CANONICAL_SAMPLES};
use crate::error::{Error, Result};

/// Linearly interpolate `signal` from `src_rate` onto a uniform grid at
/// `dst_rate`. Output length is `round(n · dst_rate / src_rate)`.
pub fn resample(signal: &Array2<f64>, src_rate: u32, dst_rate: u32) -> Result<Array2<f64>> {
    if src_rate == 0 || dst_rate == 0 {
        return Err(Error::invalid("sample rates must be positive"));
    }
    let n = signal.ncols();
    if n < 2 {
        return Err(Error::invalid(format!(
            "resampling needs at least 2 samples per lead (got {n})"
        )));
    }
    if src_rate == dst_rate {
        return Ok(signal.clone());
    }
    let n_out = ((n as f64) * (dst_rate as f64) / (src_rate as f64)).round() as usize;
    let ratio = src_rate as f64 / dst_rate as f64;
    let mut out = Array2::zeros((signal.nrows(), n_out));
    for (l, row) in signal.rows().into_iter().enumerate() {
        for j in 0..n_out {
            let pos = j as f64 * ratio;
            let i0 = (pos.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            let frac = pos - i0 as f64;
            out[[l, j]] = row[i0] + frac * (row[i1] - row[i0]);
        }
    }
    Ok(out)
}

/// Multiply every value by `mv_unit`, bringing the signal to millivolts.
pub fn rescale_units(signal: &Array2<f64>, mv_unit: f64) -> Result<Array2<f64>> {
    if !(mv_unit > 0.0) {
        return Err(Error::invalid(format!(
            "mv_unit must be positive (got {mv_unit})"
        )));
    }
    Ok(signal.mapv(|v| v * mv_unit))
}

/// Center-crop or symmetrically zero-pad each lead to `target_len` samples.
pub fn fit_duration(signal: &Array2<f64>, target_len: usize) -> Array2<f64> {
    let n = signal.ncols();
    if n == target_len {
        return signal.clone();
    }
    let leads = signal.nrows();
    let mut out = Array2::zeros((leads, target_len));
    if n > target_len {
        let start = (n - target_len) / 2;
        out.assign(&signal.slice(ndarray::s![.., start..start + target_len]));
    } else {
        let start = (target_len - n) / 2;
        out.slice_mut(ndarray::s![.., start..start + n]).assign(signal);
    }
    out
}

/// Bring a record to the canonical 12 × 2500 @ 250 Hz / 1.0 mV form.
///
/// Pipeline: resample to 250 Hz, fit the duration to 2500 samples, then fold
/// the source unit into the values. Already-canonical records pass through
/// bitwise unchanged.
pub fn standardize(record: &ECGRecord) -> Result<ECGRecord> {
    if record.n_leads() != CANONICAL_LEADS {
        return Err(Error::shape(format!(
            "record `{}` has {} leads, expected {CANONICAL_LEADS}",
            record.record_id,
            record.n_leads()
        )));
    }
    if !record.all_finite() {
        return Err(Error::NumericFailure(format!(
            "record `{}` contains non-finite values",
            record.record_id
        )));
    }
    let resampled = resample(&record.leads, record.sample_rate, CANONICAL_RATE)?;
    let fitted = fit_duration(&resampled, CANONICAL_SAMPLES);
    let scaled = rescale_units(&fitted, record.mv_unit)?;
    Ok(ECGRecord {
        record_id: record.record_id.clone(),
        patient_id: record.patient_id.clone(),
        leads: scaled,
        sample_rate: CANONICAL_RATE,
        mv_unit: 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn record(leads: Array2<f64>, rate: u32, mv: f64) -> ECGRecord {
        ECGRecord {
            record_id: "r0".into(),
            patient_id: "p0".into(),
            leads,
            sample_rate: rate,
            mv_unit: mv,
        }
    }

    #[test]
    fn resample_halves_length() {
        let sig = Array2::from_shape_fn((12, 5000), |(l, t)| (l + t) as f64);
        let out = resample(&sig, 500, 250).unwrap();
        assert_eq!(out.dim(), (12, 2500));
    }

    #[test]
    fn resample_identity_when_rates_match() {
        let sig = Array2::from_shape_fn((3, 17), |(l, t)| (l * 31 + t) as f64 * 0.37);
        let out = resample(&sig, 400, 400).unwrap();
        assert_eq!(out, sig);
    }

    #[test]
    fn resample_constant_stays_constant() {
        let sig = Array2::from_elem((2, 400), 3.25);
        let out = resample(&sig, 400, 250).unwrap();
        assert_eq!(out.ncols(), 250);
        assert!(out.iter().all(|&v| v == 3.25));
    }

    #[test]
    fn resample_rejects_zero_rate() {
        let sig = Array2::zeros((1, 10));
        assert!(resample(&sig, 0, 250).is_err());
        assert!(resample(&sig, 250, 0).is_err());
    }

    #[test]
    fn rescale_brings_counts_to_millivolts() {
        let sig = Array2::from_elem((1, 4), 200.0);
        let out = rescale_units(&sig, 0.005).unwrap();
        assert!(out.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(rescale_units(&sig, 0.0).is_err());
        assert!(rescale_units(&sig, -1.0).is_err());
    }

    #[test]
    fn rescale_unit_one_is_identity() {
        let sig = Array2::from_shape_fn((2, 5), |(l, t)| (l as f64) - 0.3 * t as f64);
        assert_eq!(rescale_units(&sig, 1.0).unwrap(), sig);
    }

    #[test]
    fn fit_duration_crops_center() {
        let sig = Array2::from_shape_fn((1, 2600), |(_, t)| t as f64);
        let out = fit_duration(&sig, 2500);
        assert_eq!(out[[0, 0]], 50.0);
        assert_eq!(out[[0, 2499]], 2549.0);
    }

    #[test]
    fn fit_duration_pads_symmetrically() {
        let sig = Array2::from_elem((1, 2400), 1.0);
        let out = fit_duration(&sig, 2500);
        assert_eq!(out.ncols(), 2500);
        assert_eq!(out[[0, 49]], 0.0);
        assert_eq!(out[[0, 50]], 1.0);
        assert_eq!(out[[0, 2449]], 1.0);
        assert_eq!(out[[0, 2450]], 0.0);
    }

    #[test]
    fn standardize_mimic_shape() {
        let sig = Array2::from_shape_fn((12, 5000), |(l, t)| {
            ((l * 7 + t) % 13) as f64 * 40.0
        });
        let rec = record(sig, 500, 0.005);
        let out = standardize(&rec).unwrap();
        assert!(out.is_canonical());
    }

    #[test]
    fn standardize_code15_shape() {
        let sig = Array2::from_shape_fn((12, 4096), |(l, t)| ((l + t) % 5) as f64);
        let rec = record(sig, 400, 1.0);
        let out = standardize(&rec).unwrap();
        assert!(out.is_canonical());
    }

    #[test]
    fn standardize_is_bitwise_identity_on_canonical() {
        let sig = Array2::from_shape_fn((12, 2500), |(l, t)| {
            ((l as f64) * 0.1 + (t as f64) * 1e-3).sin()
        });
        let rec = record(sig, 250, 1.0);
        let once = standardize(&rec).unwrap();
        assert_eq!(once.leads, rec.leads);
        let twice = standardize(&once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn standardize_rejects_wrong_lead_count() {
        let rec = record(Array2::zeros((11, 2500)), 250, 1.0);
        assert!(matches!(
            standardize(&rec),
            Err(crate::error::Error::ShapeMismatch(_))
        ));
    }
}
