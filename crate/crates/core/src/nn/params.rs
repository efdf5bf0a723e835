//! Named parameter arrays: specification, initialization, and counting.

use std::collections::BTreeMap;

use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};

/// Which auxiliary components exist alongside the encoder. The encoder is
/// always present; contrastive methods add the projection head, generative
/// methods the decoder, and downstream training the classifier.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Parts {
    pub decoder: bool,
    pub projection: bool,
    pub classifier: bool,
}

impl Parts {
    pub fn encoder_only() -> Parts {
        Parts::default()
    }

    pub fn with_classifier() -> Parts {
        Parts {
            classifier: true,
            ..Parts::default()
        }
    }
}

/// How an array is filled at init time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    TruncNormal,
    Zero,
    One,
}

/// Name, shape, and init rule of one parameter array.
#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn spec(name: String, shape: &[usize], init: Init) -> ParamSpec {
    ParamSpec {
        name,
        shape: shape.to_vec(),
        init,
    }
}

fn block_specs(prefix: &str, dim: usize, mlp_ratio: usize, out: &mut Vec<ParamSpec>) {
    let hidden = dim * mlp_ratio;
    out.push(spec(format!("{prefix}.ln1.gain"), &[dim], Init::One));
    out.push(spec(format!("{prefix}.ln1.bias"), &[dim], Init::Zero));
    for w in ["wq", "wk", "wv", "wo"] {
        out.push(spec(
            format!("{prefix}.attn.{w}"),
            &[dim, dim],
            Init::TruncNormal,
        ));
    }
    for b in ["bq", "bk", "bv", "bo"] {
        out.push(spec(format!("{prefix}.attn.{b}"), &[dim], Init::Zero));
    }
    out.push(spec(format!("{prefix}.ln2.gain"), &[dim], Init::One));
    out.push(spec(format!("{prefix}.ln2.bias"), &[dim], Init::Zero));
    out.push(spec(
        format!("{prefix}.mlp.w1"),
        &[dim, hidden],
        Init::TruncNormal,
    ));
    out.push(spec(format!("{prefix}.mlp.b1"), &[hidden], Init::Zero));
    out.push(spec(
        format!("{prefix}.mlp.w2"),
        &[hidden, dim],
        Init::TruncNormal,
    ));
    out.push(spec(format!("{prefix}.mlp.b2"), &[dim], Init::Zero));
}

/// The full, ordered list of arrays for a config: the single source of
/// truth for init, counting, and checkpoint layout.
pub fn param_specs(cfg: &ModelConfig, parts: &Parts) -> Vec<ParamSpec> {
    let dim = cfg.dim;
    let mut out = Vec::new();

    // Patch projection: a 1D conv with kernel = stride = patch is exactly a
    // per-patch linear map over the flattened (lead-major) patch values.
    out.push(spec(
        "embed.weight".into(),
        &[cfg.patch_values(), dim],
        Init::TruncNormal,
    ));
    out.push(spec("embed.bias".into(), &[dim], Init::Zero));
    for i in 0..cfg.depth {
        block_specs(&format!("enc.{i}"), dim, cfg.mlp_ratio, &mut out);
    }
    out.push(spec("enc.norm.gain".into(), &[dim], Init::One));
    out.push(spec("enc.norm.bias".into(), &[dim], Init::Zero));

    if parts.decoder {
        let ddim = cfg.decoder_dim();
        out.push(spec(
            "dec.embed.weight".into(),
            &[dim, ddim],
            Init::TruncNormal,
        ));
        out.push(spec("dec.embed.bias".into(), &[ddim], Init::Zero));
        out.push(spec("dec.mask_token".into(), &[ddim], Init::TruncNormal));
        for i in 0..cfg.decoder_depth {
            block_specs(&format!("dec.{i}"), ddim, cfg.mlp_ratio, &mut out);
        }
        out.push(spec("dec.norm.gain".into(), &[ddim], Init::One));
        out.push(spec("dec.norm.bias".into(), &[ddim], Init::Zero));
        out.push(spec(
            "dec.head.weight".into(),
            &[ddim, cfg.patch_values()],
            Init::TruncNormal,
        ));
        out.push(spec(
            "dec.head.bias".into(),
            &[cfg.patch_values()],
            Init::Zero,
        ));
    }

    if parts.projection {
        out.push(spec("proj.w1".into(), &[dim, dim], Init::TruncNormal));
        out.push(spec("proj.b1".into(), &[dim], Init::Zero));
        out.push(spec(
            "proj.w2".into(),
            &[dim, cfg.proj_dim],
            Init::TruncNormal,
        ));
        out.push(spec("proj.b2".into(), &[cfg.proj_dim], Init::Zero));
    }

    if parts.classifier {
        out.push(spec("head.weight".into(), &[dim, 1], Init::TruncNormal));
        out.push(spec("head.bias".into(), &[1], Init::Zero));
    }

    out
}

/// Named parameter arrays plus the seed they were initialized from.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    arrays: BTreeMap<String, ArrayD<f64>>,
    pub seed: u64,
}

impl Parameters {
    pub fn empty(seed: u64) -> Parameters {
        Parameters {
            arrays: BTreeMap::new(),
            seed,
        }
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter array `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ArrayD<f64>> {
        self.arrays
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter array `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    pub fn insert(&mut self, name: String, value: ArrayD<f64>) {
        self.arrays.insert(name, value);
    }

    pub fn remove(&mut self, name: &str) -> Option<ArrayD<f64>> {
        self.arrays.remove(name)
    }

    /// Deterministic (sorted) iteration over arrays.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<f64>)> {
        self.arrays.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ArrayD<f64>)> {
        self.arrays.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.arrays.keys().cloned().collect()
    }

    pub fn total_scalars(&self) -> usize {
        self.arrays.values().map(|a| a.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.arrays
            .values()
            .all(|a| a.iter().all(|v| v.is_finite()))
    }

    /// Arrays whose name starts with `prefix`, e.g. the encoder subset.
    pub fn subset(&self, prefixes: &[&str]) -> Parameters {
        let arrays = self
            .arrays
            .iter()
            .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Parameters {
            arrays,
            seed: self.seed,
        }
    }
}

fn fill_specs(specs: Vec<ParamSpec>, seed: u64) -> Parameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.02).expect("valid sigma");
    let mut trunc = || loop {
        let v: f64 = normal.sample(&mut rng);
        if v.abs() <= 0.04 {
            return v;
        }
    };
    let mut params = Parameters::empty(seed);
    for s in specs {
        let n: usize = s.shape.iter().product();
        let data: Vec<f64> = match s.init {
            Init::TruncNormal => (0..n).map(|_| trunc()).collect(),
            Init::Zero => vec![0.0; n],
            Init::One => vec![1.0; n],
        };
        params.insert(
            s.name,
            ArrayD::from_shape_vec(IxDyn(&s.shape), data).unwrap(),
        );
    }
    params
}

/// Truncated-normal (sigma 0.02, clipped to two sigma by redraw) weights and
/// zero biases, deterministic per seed.
pub fn init_params(cfg: &ModelConfig, parts: &Parts, seed: u64) -> Parameters {
    fill_specs(param_specs(cfg, parts), seed)
}

/// A fresh classification head alone (the `head.*` arrays), deterministic
/// per seed. Probing and fine-tuning share this so their initial heads
/// match for a given task seed.
pub fn init_classifier(cfg: &ModelConfig, seed: u64) -> Parameters {
    let specs = param_specs(cfg, &Parts::with_classifier())
        .into_iter()
        .filter(|s| s.name.starts_with("head."))
        .collect();
    fill_specs(specs, seed)
}

/// Exact trainable-scalar count for a config; the grid runner compares this
/// against the parameter budget to mark infeasible cases.
pub fn count_params(cfg: &ModelConfig, parts: &Parts) -> usize {
    param_specs(cfg, parts)
        .iter()
        .map(|s| s.shape.iter().product::<usize>())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_finite() {
        let cfg = ModelConfig::new(125, 2, 64);
        let parts = Parts {
            decoder: true,
            projection: true,
            classifier: false,
        };
        let a = init_params(&cfg, &parts, 11);
        let b = init_params(&cfg, &parts, 11);
        assert_eq!(a, b);
        assert!(a.all_finite());
        let c = init_params(&cfg, &parts, 12);
        assert_ne!(a, c);
    }

    #[test]
    fn count_matches_brute_force() {
        let cfg = ModelConfig::new(250, 4, 128);
        for parts in [
            Parts::encoder_only(),
            Parts {
                decoder: true,
                projection: true,
                classifier: true,
            },
        ] {
            let params = init_params(&cfg, &parts, 0);
            let brute: usize = params.iter().map(|(_, a)| a.len()).sum();
            assert_eq!(count_params(&cfg, &parts), brute);
        }
    }

    #[test]
    fn count_is_monotone_in_depth_and_dim() {
        let parts = Parts::encoder_only();
        let base = count_params(&ModelConfig::new(125, 2, 64), &parts);
        assert!(count_params(&ModelConfig::new(125, 4, 64), &parts) >= base);
        assert!(count_params(&ModelConfig::new(125, 2, 128), &parts) >= base);
    }

    #[test]
    fn method_parts_shape_the_array_set() {
        let cfg = ModelConfig::new(125, 2, 64);
        let cl = init_params(
            &cfg,
            &Parts {
                projection: true,
                ..Parts::default()
            },
            0,
        );
        assert!(cl.contains("proj.w1") && !cl.contains("dec.mask_token"));
        let gl = init_params(
            &cfg,
            &Parts {
                decoder: true,
                ..Parts::default()
            },
            0,
        );
        assert!(gl.contains("dec.mask_token") && !gl.contains("proj.w1"));
    }

    #[test]
    fn weights_respect_truncation() {
        let cfg = ModelConfig::new(125, 2, 64);
        let p = init_params(&cfg, &Parts::encoder_only(), 3);
        let w = p.get("embed.weight").unwrap();
        assert!(w.iter().all(|v| v.abs() <= 0.04));
        assert!(w.iter().any(|v| *v != 0.0));
    }
}
