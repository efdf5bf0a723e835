//! On-disk dataset container.
//!
//! A dataset is a directory holding `manifest.jsonl` — one JSON object per
//! record with identity, shape, unit metadata, optional labels, and
//! `format_version: 1` — plus one raw binary file per record containing the
//! lead-major samples as 32-bit little-endian IEEE-754 floats.

use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Dataset, ECGRecord, LabelSet};
use crate::error::{Error, Result};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    record_id: String,
    patient_id: String,
    file: String,
    sample_rate: u32,
    mv_unit: f64,
    n_leads: usize,
    n_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<LabelSet>,
    format_version: u32,
}

/// Write `dataset` to `dir` (created if missing). Sample values are stored
/// as f32; callers who need exact round-trips must hold f32-representable
/// data, which everything produced by this crate does.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest_path = dir.join("manifest.jsonl");
    let mut manifest = BufWriter::new(fs::File::create(&manifest_path)?);
    for (i, rec) in dataset.records.iter().enumerate() {
        let file = format!("rec{i:06}.f32");
        let entry = ManifestEntry {
            record_id: rec.record_id.clone(),
            patient_id: rec.patient_id.clone(),
            file: file.clone(),
            sample_rate: rec.sample_rate,
            mv_unit: rec.mv_unit,
            n_leads: rec.n_leads(),
            n_samples: rec.n_samples(),
            labels: dataset.label_of(&rec.record_id),
            format_version: FORMAT_VERSION,
        };
        serde_json::to_writer(&mut manifest, &entry)?;
        manifest.write_all(b"\n")?;

        let mut bytes = Vec::with_capacity(rec.leads.len() * 4);
        for &v in rec.leads.iter() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        fs::write(dir.join(&file), bytes)?;
    }
    manifest.flush()?;
    Ok(())
}

/// Read a dataset written by [`write_dataset`]. Errors name the offending
/// record where possible.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.jsonl");
    let file = fs::File::open(&manifest_path).map_err(|e| {
        Error::parse(format!(
            "cannot open manifest `{}`: {e}",
            manifest_path.display()
        ))
    })?;
    let reader = std::io::BufReader::new(file);

    let mut records = Vec::new();
    let mut labels: std::collections::BTreeMap<String, LabelSet> = Default::default();
    let mut labeled = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| {
            Error::parse(format!("manifest line {}: {e}", lineno + 1))
        })?;
        if entry.format_version != FORMAT_VERSION {
            return Err(Error::parse(format!(
                "record `{}`: unknown format_version {}",
                entry.record_id, entry.format_version
            )));
        }
        let blob_path = dir.join(&entry.file);
        let bytes = fs::read(&blob_path).map_err(|e| {
            Error::parse(format!(
                "record `{}`: cannot read blob `{}`: {e}",
                entry.record_id, entry.file
            ))
        })?;
        let expected = entry.n_leads * entry.n_samples * 4;
        if bytes.len() != expected {
            return Err(Error::parse(format!(
                "record `{}`: blob `{}` holds {} bytes, expected {expected}",
                entry.record_id,
                entry.file,
                bytes.len()
            )));
        }
        let mut values = Vec::with_capacity(entry.n_leads * entry.n_samples);
        for chunk in bytes.chunks_exact(4) {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
            if !v.is_finite() {
                return Err(Error::parse(format!(
                    "record `{}`: non-finite sample value",
                    entry.record_id
                )));
            }
            values.push(v);
        }
        let leads = Array2::from_shape_vec((entry.n_leads, entry.n_samples), values)
            .map_err(|e| Error::parse(format!("record `{}`: {e}", entry.record_id)))?;
        if let Some(l) = entry.labels {
            labels.insert(entry.record_id.clone(), l);
            labeled += 1;
        }
        records.push(ECGRecord {
            record_id: entry.record_id,
            patient_id: entry.patient_id,
            leads,
            sample_rate: entry.sample_rate,
            mv_unit: entry.mv_unit,
        });
    }

    let labels = if labeled == 0 {
        None
    } else if labeled == records.len() {
        Some(labels)
    } else {
        let missing = records
            .iter()
            .find(|r| !labels.contains_key(&r.record_id))
            .map(|r| r.record_id.clone())
            .unwrap_or_default();
        return Err(Error::parse(format!(
            "record `{missing}`: label entry missing while other records are labeled"
        )));
    };
    Dataset::new(records, labels)
        .map_err(|e| Error::parse(format!("invalid dataset in `{}`: {e}", dir.display())))
}
