//! Pre-training objectives.
//!
//! The public functions here are the numeric (non-differentiable) forms used
//! for evaluation and testing; the `*_graph` builders express the same
//! quantities on the autodiff tape for training. Unit tests pin the two
//! against each other and against naive brute-force oracles.

use ndarray::{Array1, Array2, Array3};

use super::LossBreakdown;
use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};

/// Additive mask value standing in for "excluded": exp(-1e30 - m) underflows
/// to zero for any finite row maximum m without producing NaN.
const EXCLUDED: f64 = -1e30;

fn logsumexp(values: impl Iterator<Item = f64>) -> f64 {
    let vals: Vec<f64> = values.collect();
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + vals.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

fn check_unit_rows(name: &str, rows: &Array2<f64>) -> Result<()> {
    for row in rows.rows() {
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-4 {
            return Err(Error::invalid(format!(
                "{name} rows must be unit-norm (found {norm})"
            )));
        }
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!(
            "temperature must be positive (got {tau})"
        )));
    }
    Ok(())
}

/// InfoNCE: mean over anchors of `-log(exp(a·c⁺/τ) / Σ_k exp(a·c_k/τ))`,
/// with the denominator running over all candidates including the positive.
pub fn info_nce(
    anchors: &Array2<f64>,
    candidates: &Array2<f64>,
    positive_index: &[usize],
    tau: f64,
) -> Result<f64> {
    check_tau(tau)?;
    if anchors.nrows() != positive_index.len() {
        return Err(Error::invalid(
            "positive_index must map every anchor to a candidate",
        ));
    }
    if anchors.ncols() != candidates.ncols() {
        return Err(Error::shape("anchor and candidate widths differ"));
    }
    check_unit_rows("anchor", anchors)?;
    check_unit_rows("candidate", candidates)?;
    if positive_index.iter().any(|&j| j >= candidates.nrows()) {
        return Err(Error::invalid("positive index out of range"));
    }

    let sims = anchors.dot(&candidates.t());
    let mut total = 0.0;
    for (i, row) in sims.rows().into_iter().enumerate() {
        let lse = logsumexp(row.iter().map(|&s| s / tau));
        total += lse - row[positive_index[i]] / tau;
    }
    Ok(total / anchors.nrows() as f64)
}

/// Symmetric sample-level InfoNCE over sibling views.
///
/// Both view matrices hold one row per record, row i of each being the same
/// record. For each of the 2N embeddings the positive is its sibling and the
/// candidates are all other 2N−1 embeddings; directions are averaged by
/// taking the mean over all 2N anchors.
pub fn sample_contrastive_loss(
    view1: &Array2<f64>,
    view2: &Array2<f64>,
    tau: f64,
) -> Result<f64> {
    check_tau(tau)?;
    if view1.dim() != view2.dim() {
        return Err(Error::shape("view matrices must share a shape"));
    }
    check_unit_rows("view1", view1)?;
    check_unit_rows("view2", view2)?;
    let n = view1.nrows();
    if n == 0 {
        return Err(Error::invalid("sample-level loss needs at least one pair"));
    }
    let m = 2 * n;
    let z = ndarray::concatenate(ndarray::Axis(0), &[view1.view(), view2.view()])
        .expect("concat views");
    let sims = z.dot(&z.t());
    let mut total = 0.0;
    for i in 0..m {
        let pos = (i + n) % m;
        let lse = logsumexp((0..m).filter(|&j| j != i).map(|j| sims[[i, j]] / tau));
        total += lse - sims[[i, pos]] / tau;
    }
    Ok(total / m as f64)
}

/// Multi-positive patient-level InfoNCE.
///
/// For each anchor the positives are the other embeddings sharing its
/// patient id; the loss is `-log(Σ_pos e^{s/τ} / Σ_{all≠anchor} e^{s/τ})`
/// averaged over anchors. Anchors with no same-patient partner are excluded;
/// returns `None` when no anchor has a positive.
pub fn patient_contrastive_loss(
    projections: &Array2<f64>,
    patient_ids: &[String],
    tau: f64,
) -> Result<Option<f64>> {
    check_tau(tau)?;
    if projections.nrows() != patient_ids.len() {
        return Err(Error::invalid(
            "one patient id is required per projection row",
        ));
    }
    check_unit_rows("projection", projections)?;
    let m = projections.nrows();
    let sims = projections.dot(&projections.t());
    let mut total = 0.0;
    let mut anchors = 0usize;
    for i in 0..m {
        let positives: Vec<usize> = (0..m)
            .filter(|&j| j != i && patient_ids[j] == patient_ids[i])
            .collect();
        if positives.is_empty() {
            continue;
        }
        let lse_all = logsumexp((0..m).filter(|&j| j != i).map(|j| sims[[i, j]] / tau));
        let lse_pos = logsumexp(positives.iter().map(|&j| sims[[i, j]] / tau));
        total += lse_all - lse_pos;
        anchors += 1;
    }
    if anchors == 0 {
        return Ok(None);
    }
    Ok(Some(total / anchors as f64))
}

/// Mean absolute error over the masked positions only.
pub fn reconstruction_loss(
    predicted: &Array3<f64>,
    target: &Array3<f64>,
    masked_positions: &[usize],
) -> Result<f64> {
    if predicted.dim() != target.dim() {
        return Err(Error::shape(format!(
            "prediction {:?} and target {:?} shapes differ",
            predicted.dim(),
            target.dim()
        )));
    }
    if masked_positions.is_empty() {
        return Err(Error::invalid(
            "reconstruction loss needs a non-empty masked set",
        ));
    }
    let (b, s, p) = predicted.dim();
    if masked_positions.iter().any(|&pos| pos >= s) {
        return Err(Error::invalid("masked position out of range"));
    }
    let mut total = 0.0;
    for bi in 0..b {
        for &pos in masked_positions {
            for k in 0..p {
                total += (predicted[[bi, pos, k]] - target[[bi, pos, k]]).abs();
            }
        }
    }
    Ok(total / (b * masked_positions.len() * p) as f64)
}

/// Combine the present components; the total is their sum and populated
/// components mirror the method (contrastive-only, generative-only, hybrid).
pub fn hybrid_loss(
    reconstruction: Option<f64>,
    patient: Option<f64>,
    sample: Option<f64>,
) -> LossBreakdown {
    let total =
        reconstruction.unwrap_or(0.0) + patient.unwrap_or(0.0) + sample.unwrap_or(0.0);
    LossBreakdown {
        total,
        patient_contrastive: patient,
        sample_contrastive: sample,
        reconstruction,
    }
}

/// Additive masks and anchor weights describing one contrastive objective
/// over an `[M × M]` similarity matrix.
pub(crate) struct ContrastiveMasks {
    pub pos_additive: Array2<f64>,
    pub cand_additive: Array2<f64>,
    pub anchor_weights: Array1<f64>,
}

/// Sibling-view pairing over `[view1; view2]` rows (M = 2N).
pub(crate) fn sample_masks(n_pairs: usize) -> ContrastiveMasks {
    let m = 2 * n_pairs;
    let mut pos = Array2::from_elem((m, m), EXCLUDED);
    let mut cand = Array2::from_elem((m, m), EXCLUDED);
    for i in 0..m {
        for j in 0..m {
            if j != i {
                cand[[i, j]] = 0.0;
            }
        }
        pos[[i, (i + n_pairs) % m]] = 0.0;
    }
    ContrastiveMasks {
        pos_additive: pos,
        cand_additive: cand,
        anchor_weights: Array1::from_elem(m, 1.0 / m as f64),
    }
}

/// Same-group pairing (patient level); `None` when no row has a partner.
pub(crate) fn group_masks(group_ids: &[String]) -> Option<ContrastiveMasks> {
    let m = group_ids.len();
    let mut pos = Array2::from_elem((m, m), EXCLUDED);
    let mut cand = Array2::from_elem((m, m), EXCLUDED);
    let mut weights = Array1::zeros(m);
    let mut anchors = 0usize;
    for i in 0..m {
        let mut has_pos = false;
        for j in 0..m {
            if j == i {
                continue;
            }
            cand[[i, j]] = 0.0;
            if group_ids[i] == group_ids[j] {
                pos[[i, j]] = 0.0;
                has_pos = true;
            }
        }
        if has_pos {
            weights[i] = 1.0;
            anchors += 1;
        }
    }
    if anchors == 0 {
        return None;
    }
    weights.mapv_inplace(|w| w / anchors as f64);
    Some(ContrastiveMasks {
        pos_additive: pos,
        cand_additive: cand,
        anchor_weights: weights,
    })
}

/// Tape version of the masked InfoNCE family: `z` is `[M × d]` unit rows.
pub(crate) fn contrastive_loss_graph(
    g: &mut Graph,
    z: NodeId,
    masks: &ContrastiveMasks,
    tau: f64,
) -> NodeId {
    let zt = g.permute(z, &[1, 0]);
    let sims = g.matmul(z, zt);
    let scaled = g.scale(sims, 1.0 / tau);
    let cand = g.constant(masks.cand_additive.clone().into_dyn());
    let pos = g.constant(masks.pos_additive.clone().into_dyn());
    let all_logits = g.add(scaled, cand);
    let pos_logits = g.add(scaled, pos);
    let lse_all = g.logsumexp_last(all_logits);
    let lse_pos = g.logsumexp_last(pos_logits);
    let per_anchor = g.sub(lse_all, lse_pos);
    let w = g.constant(masks.anchor_weights.clone().into_dyn());
    let weighted = g.mul(per_anchor, w);
    g.sum_all(weighted)
}

/// Tape version of the masked-MAE reconstruction loss.
pub(crate) fn reconstruction_loss_graph(
    g: &mut Graph,
    predicted: NodeId,
    target: &Array3<f64>,
    masked_positions: &[usize],
) -> NodeId {
    let (b, _s, p) = target.dim();
    let mut weights = Array3::zeros(target.dim());
    let w = 1.0 / (b * masked_positions.len() * p) as f64;
    for bi in 0..b {
        for &pos in masked_positions {
            for k in 0..p {
                weights[[bi, pos, k]] = w;
            }
        }
    }
    let t = g.constant(target.clone().into_dyn());
    let wc = g.constant(weights.into_dyn());
    let diff = g.sub(predicted, t);
    let ad = g.abs(diff);
    let weighted = g.mul(ad, wc);
    g.sum_all(weighted)
}
