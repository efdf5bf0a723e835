//! Differentiable forward passes for the backbone and heads.
//!
//! Everything is expressed on the autodiff [`Graph`]; the public eager
//! functions (`patch_embed`, `encode`, `decode`, `pool`, `project`,
//! `classify`) build a throwaway graph with constant parameters, which keeps
//! a single implementation for training and evaluation.

use std::collections::BTreeMap;

use ndarray::{Array2, Array3, Ix2, Ix3};

use super::{sinusoidal_encoding, Mode, ModelConfig, Parameters, TokenBatch};
use crate::autodiff::{Graph, NodeId};
use crate::data::CANONICAL_LEADS;
use crate::error::{Error, Result};

/// A graph under construction plus the registered parameter nodes.
pub struct ModelGraph<'a> {
    pub g: Graph,
    pub cfg: &'a ModelConfig,
    nodes: BTreeMap<String, NodeId>,
}

impl<'a> ModelGraph<'a> {
    /// Register every array in `params`, as leaves when `trainable`.
    pub fn new(cfg: &'a ModelConfig, params: &Parameters, trainable: bool) -> ModelGraph<'a> {
        let mut g = Graph::new();
        let mut nodes = BTreeMap::new();
        for (name, value) in params.iter() {
            let id = if trainable {
                g.leaf(value.clone())
            } else {
                g.constant(value.clone())
            };
            nodes.insert(name.clone(), id);
        }
        ModelGraph { g, cfg, nodes }
    }

    pub fn param(&self, name: &str) -> NodeId {
        *self
            .nodes
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not registered"))
    }

    pub fn param_nodes(&self) -> &BTreeMap<String, NodeId> {
        &self.nodes
    }

    /// Patch projection of raw signals plus sinusoidal positions:
    /// `[B, 12, n] -> [B, seq_len, dim]`.
    pub fn embed(&mut self, records: &Array3<f64>) -> NodeId {
        let patches = patchify(records, self.cfg.patch, self.cfg.seq_len());
        let x = self.g.constant(patches.into_dyn());
        let w = self.param("embed.weight");
        let b = self.param("embed.bias");
        let tokens = self.g.linear(x, w, Some(b));
        let pe = sinusoidal_encoding(self.cfg.seq_len(), self.cfg.dim);
        let pe = self.g.constant(pe.into_dyn());
        self.g.add_seq_bias(tokens, pe)
    }

    fn attention(&mut self, prefix: &str, x: NodeId, dim: usize, heads: usize) -> NodeId {
        let shape = self.g.shape(x).to_vec();
        let (b, s) = (shape[0], shape[1]);
        let dh = dim / heads;
        let split = |mg: &mut ModelGraph, y: NodeId| -> NodeId {
            let y = mg.g.reshape(y, &[b, s, heads, dh]);
            let y = mg.g.permute(y, &[0, 2, 1, 3]);
            mg.g.reshape(y, &[b * heads, s, dh])
        };
        let wq = self.param(&format!("{prefix}.attn.wq"));
        let bq = self.param(&format!("{prefix}.attn.bq"));
        let wk = self.param(&format!("{prefix}.attn.wk"));
        let bk = self.param(&format!("{prefix}.attn.bk"));
        let wv = self.param(&format!("{prefix}.attn.wv"));
        let bv = self.param(&format!("{prefix}.attn.bv"));
        let q = self.g.linear(x, wq, Some(bq));
        let k = self.g.linear(x, wk, Some(bk));
        let v = self.g.linear(x, wv, Some(bv));
        let (q, k, v) = (split(self, q), split(self, k), split(self, v));
        let kt = self.g.permute(k, &[0, 2, 1]);
        let scores = self.g.bmm(q, kt);
        let scaled = self.g.scale(scores, 1.0 / (dh as f64).sqrt());
        let attn = self.g.softmax_last(scaled);
        let ctx = self.g.bmm(attn, v);
        let ctx = self.g.reshape(ctx, &[b, heads, s, dh]);
        let ctx = self.g.permute(ctx, &[0, 2, 1, 3]);
        let ctx = self.g.reshape(ctx, &[b, s, dim]);
        let wo = self.param(&format!("{prefix}.attn.wo"));
        let bo = self.param(&format!("{prefix}.attn.bo"));
        self.g.linear(ctx, wo, Some(bo))
    }

    fn block(&mut self, prefix: &str, x: NodeId, dim: usize, heads: usize) -> NodeId {
        let g1 = self.param(&format!("{prefix}.ln1.gain"));
        let b1 = self.param(&format!("{prefix}.ln1.bias"));
        let h = self.g.layer_norm(x, g1, b1);
        let attn = self.attention(prefix, h, dim, heads);
        let x = self.g.add(x, attn);

        let g2 = self.param(&format!("{prefix}.ln2.gain"));
        let b2 = self.param(&format!("{prefix}.ln2.bias"));
        let h2 = self.g.layer_norm(x, g2, b2);
        let w1 = self.param(&format!("{prefix}.mlp.w1"));
        let bm1 = self.param(&format!("{prefix}.mlp.b1"));
        let w2 = self.param(&format!("{prefix}.mlp.w2"));
        let bm2 = self.param(&format!("{prefix}.mlp.b2"));
        let hid = self.g.linear(h2, w1, Some(bm1));
        let act = self.g.gelu(hid);
        let mlp = self.g.linear(act, w2, Some(bm2));
        self.g.add(x, mlp)
    }

    /// Pre-norm encoder stack; returns the per-block outputs followed by the
    /// final-norm output (last element).
    pub fn encode_blocks(&mut self, tokens: NodeId) -> Vec<NodeId> {
        let dim = self.cfg.dim;
        let heads = self.cfg.heads();
        let mut outs = Vec::with_capacity(self.cfg.depth + 1);
        let mut x = tokens;
        for i in 0..self.cfg.depth {
            x = self.block(&format!("enc.{i}"), x, dim, heads);
            outs.push(x);
        }
        let gn = self.param("enc.norm.gain");
        let bn = self.param("enc.norm.bias");
        let x = self.g.layer_norm(x, gn, bn);
        outs.push(x);
        outs
    }

    pub fn encode(&mut self, tokens: NodeId) -> NodeId {
        *self.encode_blocks(tokens).last().unwrap()
    }

    /// Decoder: map visible embeddings to decoder width, insert the learned
    /// mask token at `masked`, re-add positions, run the decoder stack, and
    /// emit per-patch signal values `[B, seq_len, 12·patch]`.
    pub fn decode(&mut self, visible: NodeId, visible_pos: &[usize], masked: &[usize]) -> NodeId {
        let cfg = self.cfg;
        let ddim = cfg.decoder_dim();
        let seq = cfg.seq_len();
        let b = self.g.shape(visible)[0];

        let we = self.param("dec.embed.weight");
        let be = self.param("dec.embed.bias");
        let vis = self.g.linear(visible, we, Some(be));
        let placed = self.g.scatter_axis1(vis, visible_pos, seq);
        let x = if masked.is_empty() {
            placed
        } else {
            let tok = self.param("dec.mask_token");
            let tok_b = self.g.broadcast_vec(tok, &[b, masked.len(), ddim]);
            let placed_masked = self.g.scatter_axis1(tok_b, masked, seq);
            self.g.add(placed, placed_masked)
        };
        let pe = sinusoidal_encoding(seq, ddim);
        let pe = self.g.constant(pe.into_dyn());
        let mut x = self.g.add_seq_bias(x, pe);

        let heads = cfg.decoder_heads();
        for i in 0..cfg.decoder_depth {
            x = self.block(&format!("dec.{i}"), x, ddim, heads);
        }
        let gn = self.param("dec.norm.gain");
        let bn = self.param("dec.norm.bias");
        let x = self.g.layer_norm(x, gn, bn);
        let wh = self.param("dec.head.weight");
        let bh = self.param("dec.head.bias");
        self.g.linear(x, wh, Some(bh))
    }

    /// Mean over sequence positions: `[B, S, D] -> [B, D]`.
    pub fn pool(&mut self, tokens: NodeId) -> NodeId {
        self.g.mean_axis1(tokens)
    }

    /// Two-layer MLP then row-wise L2 normalization.
    pub fn project(&mut self, vectors: NodeId) -> NodeId {
        let w1 = self.param("proj.w1");
        let b1 = self.param("proj.b1");
        let w2 = self.param("proj.w2");
        let b2 = self.param("proj.b2");
        let h = self.g.linear(vectors, w1, Some(b1));
        let h = self.g.gelu(h);
        let out = self.g.linear(h, w2, Some(b2));
        self.g.normalize_rows(out)
    }

    /// Single affine map to one logit per row.
    pub fn classify(&mut self, vectors: NodeId) -> NodeId {
        let w = self.param("head.weight");
        let b = self.param("head.bias");
        self.g.linear(vectors, w, Some(b))
    }
}

/// Reshape `[B, 12, n]` signals into `[B, tokens, 12·patch]` flattened
/// patches (lead-major within each patch); trailing remainder samples are
/// ignored.
pub fn patchify(records: &Array3<f64>, patch: usize, tokens: usize) -> Array3<f64> {
    let (b, leads, _n) = records.dim();
    let mut out = Array3::zeros((b, tokens, leads * patch));
    for bi in 0..b {
        for t in 0..tokens {
            for l in 0..leads {
                for k in 0..patch {
                    out[[bi, t, l * patch + k]] = records[[bi, l, t * patch + k]];
                }
            }
        }
    }
    out
}

fn check_input(records: &Array3<f64>, cfg: &ModelConfig) -> Result<()> {
    let (_b, leads, n) = records.dim();
    if leads != CANONICAL_LEADS {
        return Err(Error::shape(format!(
            "expected {CANONICAL_LEADS} channels, got {leads}"
        )));
    }
    if n < cfg.seq_len() * cfg.patch {
        return Err(Error::shape(format!(
            "input length {n} is shorter than seq_len × patch = {}",
            cfg.seq_len() * cfg.patch
        )));
    }
    Ok(())
}

/// 1D-conv patch projection (kernel = stride = patch) with fixed sinusoidal
/// positions added.
pub fn patch_embed(
    records: &Array3<f64>,
    params: &Parameters,
    cfg: &ModelConfig,
) -> Result<TokenBatch> {
    check_input(records, cfg)?;
    let mut mg = ModelGraph::new(cfg, params, false);
    let tokens = mg.embed(records);
    let data = mg
        .g
        .value(tokens)
        .view()
        .into_dimensionality::<Ix3>()
        .unwrap()
        .to_owned();
    Ok(TokenBatch::full(data))
}

/// Run the pre-norm encoder stack. Any NaN in a block's activations aborts
/// with the offending layer index.
pub fn encode(
    tokens: &TokenBatch,
    params: &Parameters,
    cfg: &ModelConfig,
    _mode: Mode,
) -> Result<TokenBatch> {
    if tokens.dim() != cfg.dim {
        return Err(Error::shape(format!(
            "token width {} does not match config dim {}",
            tokens.dim(),
            cfg.dim
        )));
    }
    let mut mg = ModelGraph::new(cfg, params, false);
    let x = mg.g.constant(tokens.data.clone().into_dyn());
    let outs = mg.encode_blocks(x);
    for (i, &id) in outs.iter().enumerate() {
        if mg.g.value(id).iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure(format!(
                "non-finite activations in encoder layer {i}"
            )));
        }
    }
    let data = mg
        .g
        .value(*outs.last().unwrap())
        .view()
        .into_dimensionality::<Ix3>()
        .unwrap()
        .to_owned();
    Ok(TokenBatch {
        data,
        positions: tokens.positions.clone(),
    })
}

/// Reconstruct per-patch signal values from visible embeddings.
///
/// `visible.positions` (default `0..K`) and `masked_positions` must
/// partition `0..seq_len`.
pub fn decode(
    visible: &TokenBatch,
    masked_positions: &[usize],
    params: &Parameters,
    cfg: &ModelConfig,
) -> Result<Array3<f64>> {
    let vis_pos: Vec<usize> = visible
        .positions
        .clone()
        .unwrap_or_else(|| (0..visible.seq()).collect());
    validate_partition(&vis_pos, masked_positions, cfg.seq_len())?;
    let mut mg = ModelGraph::new(cfg, params, false);
    let x = mg.g.constant(visible.data.clone().into_dyn());
    let out = mg.decode(x, &vis_pos, masked_positions);
    Ok(mg
        .g
        .value(out)
        .view()
        .into_dimensionality::<Ix3>()
        .unwrap()
        .to_owned())
}

pub(crate) fn validate_partition(
    visible: &[usize],
    masked: &[usize],
    seq_len: usize,
) -> Result<()> {
    let mut seen = vec![0u8; seq_len];
    for &p in visible.iter().chain(masked) {
        if p >= seq_len {
            return Err(Error::invalid(format!(
                "position {p} out of range for seq_len {seq_len}"
            )));
        }
        seen[p] += 1;
    }
    if seen.iter().any(|&c| c != 1) {
        return Err(Error::invalid(
            "visible and masked positions must partition the sequence",
        ));
    }
    Ok(())
}

/// Arithmetic mean over sequence positions.
pub fn pool(tokens: &TokenBatch) -> Array2<f64> {
    tokens.data.mean_axis(ndarray::Axis(1)).unwrap()
}

/// Contrastive projection head; rows of the output are unit-norm.
pub fn project(vectors: &Array2<f64>, params: &Parameters, cfg: &ModelConfig) -> Result<Array2<f64>> {
    let mut mg = ModelGraph::new(cfg, params, false);
    let x = mg.g.constant(vectors.clone().into_dyn());
    let out = mg.project(x);
    Ok(mg
        .g
        .value(out)
        .view()
        .into_dimensionality::<Ix2>()
        .unwrap()
        .to_owned())
}

/// Linear classification head: one logit per row.
pub fn classify(vectors: &Array2<f64>, params: &Parameters) -> Result<Array2<f64>> {
    let w = params.get("head.weight")?;
    let b = params.get("head.bias")?;
    let w2 = w.view().into_dimensionality::<Ix2>().unwrap();
    let mut out = vectors.dot(&w2);
    out += *b.iter().next().unwrap();
    Ok(out)
}

/// Pooled encoder vectors for a batch of raw signals (the downstream
/// feature path).
pub fn predict_vectors(
    records: &Array3<f64>,
    params: &Parameters,
    cfg: &ModelConfig,
) -> Result<Array2<f64>> {
    check_input(records, cfg)?;
    let mut mg = ModelGraph::new(cfg, params, false);
    let tokens = mg.embed(records);
    let enc = mg.encode(tokens);
    let pooled = mg.pool(enc);
    if mg.g.value(pooled).iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure(
            "non-finite pooled encoder output".into(),
        ));
    }
    Ok(mg
        .g
        .value(pooled)
        .view()
        .into_dimensionality::<Ix2>()
        .unwrap()
        .to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, Parts};
    use ndarray::Array3;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_cfg() -> ModelConfig {
        ModelConfig {
            n_heads: Some(2),
            decoder_depth: 1,
            ..ModelConfig::new(625, 1, 16)
        }
    }

    fn random_signals(b: usize, rng: &mut ChaCha8Rng) -> Array3<f64> {
        Array3::from_shape_fn((b, 12, 2500), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn patch_embed_shapes_follow_the_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let signals = random_signals(2, &mut rng);
        for (patch, seq) in [(250, 10), (125, 20), (60, 41)] {
            let cfg = ModelConfig {
                n_heads: Some(1),
                ..ModelConfig::new(patch, 1, 32)
            };
            let params = init_params(&cfg, &Parts::encoder_only(), 1);
            let tokens = patch_embed(&signals, &params, &cfg).unwrap();
            assert_eq!(tokens.data.dim(), (2, seq, 32));
        }
    }

    #[test]
    fn patch_embed_rejects_wrong_channels() {
        let cfg = toy_cfg();
        let params = init_params(&cfg, &Parts::encoder_only(), 1);
        let bad = Array3::zeros((1, 11, 2500));
        assert!(patch_embed(&bad, &params, &cfg).is_err());
    }

    #[test]
    fn zero_depth_encode_is_norm_only() {
        let cfg = ModelConfig {
            n_heads: Some(1),
            ..ModelConfig::new(625, 0, 8)
        };
        let params = init_params(&cfg, &Parts::encoder_only(), 2);
        let data = Array3::from_shape_fn((1, 4, 8), |(_, s, d)| (s * 8 + d) as f64 * 0.1);
        let tokens = TokenBatch::full(data.clone());
        let out = encode(&tokens, &params, &cfg, Mode::Eval).unwrap();
        // Final norm with unit gain / zero bias: rows are standardized.
        for row in out.data.index_axis(ndarray::Axis(0), 0).rows() {
            let mean: f64 = row.sum() / row.len() as f64;
            assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn encode_is_deterministic_and_shape_preserving() {
        let cfg = toy_cfg();
        let params = init_params(&cfg, &Parts::encoder_only(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let signals = random_signals(3, &mut rng);
        let tokens = patch_embed(&signals, &params, &cfg).unwrap();
        let a = encode(&tokens, &params, &cfg, Mode::Eval).unwrap();
        let b = encode(&tokens, &params, &cfg, Mode::Eval).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.data.dim(), tokens.data.dim());
    }

    #[test]
    fn encode_flags_nan_with_layer_index() {
        let cfg = toy_cfg();
        let mut params = init_params(&cfg, &Parts::encoder_only(), 3);
        params.get_mut("enc.0.mlp.w2").unwrap()[[0, 0]] = f64::NAN;
        let tokens = TokenBatch::full(Array3::from_elem((1, 4, 16), 0.5));
        let err = encode(&tokens, &params, &cfg, Mode::Eval).unwrap_err();
        assert!(err.to_string().contains("layer 0"));
    }

    #[test]
    fn decode_full_reconstruction_mode() {
        let cfg = toy_cfg();
        let params = init_params(
            &cfg,
            &Parts {
                decoder: true,
                ..Parts::default()
            },
            5,
        );
        let tokens = TokenBatch::full(Array3::from_elem((2, 4, 16), 0.1));
        let out = decode(&tokens, &[], &params, &cfg).unwrap();
        assert_eq!(out.dim(), (2, 4, 12 * 625));
    }

    #[test]
    fn decode_rejects_overlapping_positions() {
        let cfg = toy_cfg();
        let params = init_params(
            &cfg,
            &Parts {
                decoder: true,
                ..Parts::default()
            },
            5,
        );
        let visible = TokenBatch {
            data: Array3::from_elem((1, 2, 16), 0.1),
            positions: Some(vec![0, 1]),
        };
        assert!(decode(&visible, &[1, 2], &params, &cfg).is_err());
        assert!(decode(&visible, &[2, 3], &params, &cfg).is_ok());
    }

    #[test]
    fn pool_is_permutation_invariant() {
        let data = Array3::from_shape_fn((1, 5, 3), |(_, s, d)| (s * 3 + d) as f64);
        let tokens = TokenBatch::full(data.clone());
        let base = pool(&tokens);
        let mut permuted = data;
        permuted.swap_axes(0, 0);
        let perm: Vec<usize> = vec![4, 2, 0, 1, 3];
        let shuffled = ndarray::Array3::from_shape_fn((1, 5, 3), |(b, s, d)| {
            tokens.data[[b, perm[s], d]]
        });
        let other = pool(&TokenBatch::full(shuffled));
        for (a, b) in base.iter().zip(other.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let _ = permuted;
    }

    #[test]
    fn pool_single_token_is_identity() {
        let data = Array3::from_shape_fn((2, 1, 4), |(b, _, d)| (b * 4 + d) as f64);
        let pooled = pool(&TokenBatch::full(data.clone()));
        assert_eq!(pooled[[1, 3]], data[[1, 0, 3]]);
    }

    #[test]
    fn project_rows_are_unit_norm() {
        let cfg = toy_cfg();
        let params = init_params(
            &cfg,
            &Parts {
                projection: true,
                ..Parts::default()
            },
            6,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let vectors = Array2::from_shape_fn((5, 16), |_| rng.random_range(-2.0..2.0));
        let out = project(&vectors, &params, &cfg).unwrap();
        assert_eq!(out.dim(), (5, cfg.proj_dim));
        for row in out.rows() {
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
        // Duplicate inputs give duplicate outputs.
        let dup = ndarray::stack![ndarray::Axis(0), vectors.row(0), vectors.row(0)];
        let dup_out = project(&dup.to_owned(), &params, &cfg).unwrap();
        assert_eq!(dup_out.row(0), dup_out.row(1));
    }

    #[test]
    fn classify_is_affine() {
        let cfg = toy_cfg();
        let mut params = init_params(&cfg, &Parts::with_classifier(), 8);
        // Zero weights: logit equals the bias.
        params
            .get_mut("head.weight")
            .unwrap()
            .mapv_inplace(|_| 0.0);
        params.get_mut("head.bias").unwrap()[[0]] = 0.7;
        let v = Array2::from_elem((3, 16), 1.0);
        let out = classify(&v, &params).unwrap();
        assert!(out.iter().all(|&l| (l - 0.7).abs() < 1e-12));

        // Linearity: scaling inputs scales (logit - bias).
        let mut params2 = init_params(&cfg, &Parts::with_classifier(), 9);
        params2.get_mut("head.bias").unwrap()[[0]] = 0.25;
        let x = Array2::from_shape_fn((2, 16), |(i, j)| (i + j) as f64 * 0.1);
        let l1 = classify(&x, &params2).unwrap();
        let l2 = classify(&(&x * 2.0), &params2).unwrap();
        for (a, b) in l1.iter().zip(l2.iter()) {
            assert!(((b - 0.25) - 2.0 * (a - 0.25)).abs() < 1e-9);
        }
    }

    #[test]
    fn encoder_output_variance_is_sane_at_init() {
        let cfg = ModelConfig {
            n_heads: Some(2),
            ..ModelConfig::new(625, 2, 16)
        };
        let params = init_params(&cfg, &Parts::encoder_only(), 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = Array3::from_shape_fn((4, 4, 16), |_| rng.random_range(-1.0..1.0f64));
        let var_in = {
            let m = data.mean().unwrap();
            data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / data.len() as f64
        };
        let out = encode(&TokenBatch::full(data), &params, &cfg, Mode::Eval).unwrap();
        let var_out = {
            let m = out.data.mean().unwrap();
            out.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / out.data.len() as f64
        };
        let ratio = var_out / var_in;
        assert!(
            (0.1..=10.0).contains(&ratio),
            "variance ratio {ratio} out of range"
        );
    }
}
