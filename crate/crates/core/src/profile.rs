//! Analytic cost model: parameter counts, forward FLOPs and activation memory.
//!
//! Conventions: one multiply-accumulate is 2 FLOPs; softmax and layer norm
//! cost 5 FLOPs per element; bias additions and residual sums 1 FLOP per
//! element. Activations are stored as 8-byte floats.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::encoder::{removal_count, EncoderConfig};
use crate::error::{Error, Result};

pub const FLOPS_PER_MAC: u64 = 2;
pub const NORM_FLOPS_PER_ELEMENT: u64 = 5;
pub const BYTES_PER_VALUE: u64 = 8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostEntry {
    pub name: String,
    pub value: u64,
}

/// A total and the entries it is the sum of.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub total: u64,
    pub breakdown: Vec<CostEntry>,
}

impl CostReport {
    fn from_entries(entries: Vec<(String, u64)>) -> Self {
        let breakdown: Vec<CostEntry> = entries.into_iter().map(|(name, value)| CostEntry { name, value }).collect();
        CostReport {
            total: breakdown.iter().map(|e| e.value).sum(),
            breakdown,
        }
    }

    pub fn get(&self, name: &str) -> Option<u64> {
        self.breakdown.iter().find(|e| e.name == name).map(|e| e.value)
    }

    /// Sum of every entry whose name ends with `suffix`.
    pub fn sum_matching(&self, suffix: &str) -> u64 {
        self.breakdown.iter().filter(|e| e.name.ends_with(suffix)).map(|e| e.value).sum()
    }
}

/// Parameters of one transformer layer: attention, FFN, two layer norms.
pub fn layer_params(d: usize, d_ff: usize) -> u64 {
    let (d, f) = (d as u64, d_ff as u64);
    4 * (d * d + d) + (d * f + f + f * d + d) + 4 * d
}

pub fn head_params(d: usize) -> u64 {
    let d = d as u64;
    2 * d * d + d + d + 1
}

pub fn count_params(config: &EncoderConfig, include_head: bool) -> Result<CostReport> {
    config.validate()?;
    let d = config.d_model as u64;
    let mut e = vec![
        ("edge_embedding".to_string(), config.vocab as u64 * d),
        ("pr_token".to_string(), d),
        ("position".to_string(), (config.max_len as u64 + 1) * d),
    ];
    for l in 0..config.layers {
        e.push((format!("enc.{}", l), layer_params(config.d_model, config.d_ff)));
    }
    if config.has_decoder() {
        e.push(("mask_token".into(), d));
        for l in 0..config.dec_layers {
            e.push((format!("dec.{}", l), layer_params(config.d_model, config.d_ff)));
        }
        e.push(("dec.out".into(), d * d + d));
    }
    if include_head {
        e.push(("head".into(), head_params(config.d_model)));
    }
    Ok(CostReport::from_entries(e))
}

/// Tokens the encoder sees: `N − floor(γN)` kept edges plus the PR token.
pub fn encoder_tokens(n: usize, gamma: f64) -> Result<usize> {
    if n < 2 {
        return Err(Error::invalid(format!("path length {} below 2", n)));
    }
    Ok(n - removal_count(n, gamma)? + 1)
}

fn layer_flops(prefix: &str, s: u64, config: &EncoderConfig) -> Vec<(String, u64)> {
    let (d, f, m) = (config.d_model as u64, config.d_ff as u64, config.heads as u64);
    vec![
        (format!("{}.attn_proj", prefix), FLOPS_PER_MAC * 4 * s * d * d + 4 * s * d),
        (format!("{}.attn_scores", prefix), FLOPS_PER_MAC * 2 * s * s * d),
        (format!("{}.attn_softmax", prefix), NORM_FLOPS_PER_ELEMENT * m * s * s),
        (format!("{}.ffn", prefix), FLOPS_PER_MAC * 2 * s * d * f + s * (f + d) + s * f),
        (format!("{}.residual_norm", prefix), 2 * s * d + 2 * NORM_FLOPS_PER_ELEMENT * s * d),
    ]
}

/// Forward FLOPs for one path of `n` edges at reduction ratio `gamma`. The
/// decoder, when counted, runs at the full length `n + 1`.
pub fn count_flops(config: &EncoderConfig, n: usize, gamma: f64, include_decoder: bool) -> Result<CostReport> {
    config.validate()?;
    let s = encoder_tokens(n, gamma)? as u64;
    let d = config.d_model as u64;
    let mut e = vec![("input".to_string(), s * d)];
    for l in 0..config.layers {
        e.extend(layer_flops(&format!("enc.{}", l), s, config));
    }
    if include_decoder && config.has_decoder() {
        let full = n as u64 + 1;
        e.push(("dec.input".into(), full * d));
        for l in 0..config.dec_layers {
            e.extend(layer_flops(&format!("dec.{}", l), full, config));
        }
        e.push(("dec.out".into(), FLOPS_PER_MAC * n as u64 * d * d + n as u64 * d));
    }
    Ok(CostReport::from_entries(e))
}

fn layer_activations(s: u64, config: &EncoderConfig) -> u64 {
    let (d, f, m) = (config.d_model as u64, config.d_ff as u64, config.heads as u64);
    // input, Q, K, V, context, projection, two residual sums, two norms
    10 * s * d + 2 * m * s * s + 2 * s * f
}

/// Bytes of forward activations kept for the backward pass.
pub fn memory_estimate(config: &EncoderConfig, n: usize, gamma: f64, batch: usize, include_decoder: bool) -> Result<CostReport> {
    config.validate()?;
    if batch == 0 {
        return Err(Error::invalid("batch must be at least 1"));
    }
    let s = encoder_tokens(n, gamma)? as u64;
    let scale = batch as u64 * BYTES_PER_VALUE;
    let mut e = Vec::new();
    for l in 0..config.layers {
        e.push((format!("enc.{}", l), layer_activations(s, config) * scale));
    }
    if include_decoder && config.has_decoder() {
        let full = n as u64 + 1;
        for l in 0..config.dec_layers {
            e.push((format!("dec.{}", l), layer_activations(full, config) * scale));
        }
    }
    Ok(CostReport::from_entries(e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityCell {
    pub n: usize,
    pub gamma: f64,
    pub params: u64,
    pub flops: CostReport,
    pub memory: CostReport,
}

impl ScalabilityCell {
    pub fn gflops(&self) -> f64 {
        self.flops.total as f64 / 1e9
    }

    pub fn mem_gib(&self) -> f64 {
        self.memory.total as f64 / (1u64 << 30) as f64
    }
}

/// One cell per `(N, γ)`, rows ordered by `N` then `γ`.
pub fn scalability_report(
    config: &EncoderConfig,
    n_list: &[usize],
    gamma_list: &[f64],
    batch: usize,
    include_decoder: bool,
) -> Result<Vec<ScalabilityCell>> {
    if n_list.is_empty() || gamma_list.is_empty() {
        return Err(Error::invalid("scalability grid needs at least one N and one gamma"));
    }
    let params = count_params(config, false)?.total;
    let mut cells = Vec::with_capacity(n_list.len() * gamma_list.len());
    for &n in n_list {
        for &gamma in gamma_list {
            cells.push(ScalabilityCell {
                n,
                gamma,
                params,
                flops: count_flops(config, n, gamma, include_decoder)?,
                memory: memory_estimate(config, n, gamma, batch, include_decoder)?,
            });
        }
    }
    Ok(cells)
}

pub const TABLE5_LENGTHS: [usize; 4] = [50, 100, 150, 200];
pub const TABLE5_GAMMAS: [f64; 6] = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9];

/// The large configuration: 12 layers, 8 heads, width 512, FFN 1024, one
/// decoder layer.
pub fn reference_config(vocab: usize, max_len: usize) -> EncoderConfig {
    EncoderConfig {
        layers: 12,
        heads: 8,
        d_model: 512,
        d_ff: 1024,
        dec_layers: 1,
        ..EncoderConfig::new(vocab, max_len)
    }
}

pub fn write_scalability_csv(w: &mut impl Write, cells: &[ScalabilityCell]) -> Result<()> {
    writeln!(
        w,
        "# forward FLOPs; 1 MAC = {} FLOPs; softmax/norm {} FLOPs per element; {}-byte activations",
        FLOPS_PER_MAC, NORM_FLOPS_PER_ELEMENT, BYTES_PER_VALUE
    )?;
    writeln!(w, "N,gamma,params,gflops,mem_gib")?;
    for c in cells {
        writeln!(w, "{},{},{},{},{}", c.n, c.gamma, c.params, c.gflops(), c.mem_gib())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderModel;
    use proptest::prelude::*;

    #[test]
    fn layer_increment_at_reference_width() {
        assert_eq!(layer_params(512, 1024), 2_102_784);
        let mut c = reference_config(100, 200);
        let a = count_params(&c, false).unwrap().total;
        c.layers = 24;
        let b = count_params(&c, false).unwrap().total;
        assert_eq!(b - a, 12 * 2_102_784);
    }

    #[test]
    fn totals_are_sums() {
        let c = reference_config(100, 200);
        let f = count_flops(&c, 200, 0.5, true).unwrap();
        assert_eq!(f.total, f.breakdown.iter().map(|e| e.value).sum::<u64>());
        assert!(f.get("dec.0.ffn").is_some());
        assert!(count_flops(&c, 200, 0.5, false).unwrap().get("dec.0.ffn").is_none());
    }

    #[test]
    fn scores_are_exactly_quadratic() {
        let c = reference_config(100, 400);
        // 51 tokens at N=50, 101 at N=100, 201 at N=200
        let at = |n| count_flops(&c, n, 0.0, false).unwrap().sum_matching("attn_scores") as f64;
        assert!((at(100) / at(50) - (101.0f64 / 51.0).powi(2)).abs() < 1e-12);
        // token count 51 -> 102
        assert_eq!(at(101) / at(50), 4.0);
    }

    #[test]
    fn no_sparsity_is_the_dense_cost() {
        let c = reference_config(100, 400);
        let f = count_flops(&c, 99, 0.0, false).unwrap();
        let mut dense = c.clone();
        dense.dec_layers = 0;
        let g = count_flops(&dense, 99, 0.0, true).unwrap();
        assert_eq!(f.total, g.total);
        assert_eq!(encoder_tokens(99, 0.0).unwrap(), 100);
    }

    #[test]
    fn memory_is_linear_in_batch() {
        let c = reference_config(100, 400);
        let one = memory_estimate(&c, 100, 0.3, 1, true).unwrap().total;
        assert_eq!(memory_estimate(&c, 100, 0.3, 2, true).unwrap().total, 2 * one);
        assert!(memory_estimate(&c, 100, 0.3, 0, true).is_err());
        let r = memory_estimate(&c, 200, 0.0, 1, true).unwrap().total as f64
            / memory_estimate(&c, 50, 0.0, 1, true).unwrap().total as f64;
        assert!(r > 4.0 && r < 16.0);
    }

    #[test]
    fn csv_grid() {
        let c = reference_config(100, 200);
        let cells = scalability_report(&c, &TABLE5_LENGTHS, &TABLE5_GAMMAS, 1, true).unwrap();
        assert_eq!(cells.len(), 24);
        let mut out = Vec::new();
        write_scalability_csv(&mut out, &cells).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 26);
        assert!(text.lines().nth(1).unwrap() == "N,gamma,params,gflops,mem_gib");
    }

    fn small_config() -> impl Strategy<Value = EncoderConfig> {
        (1usize..4, 1usize..4, 1usize..5, 1usize..20, 1usize..30, 2usize..12, 0usize..3).prop_filter_map(
            "decoder shallower than encoder",
            |(layers, heads, width, d_ff, vocab, max_len, dec)| {
                let c = EncoderConfig {
                    layers,
                    heads,
                    d_model: heads * width,
                    d_ff,
                    vocab,
                    max_len,
                    dec_layers: dec,
                    ..EncoderConfig::new(vocab, max_len)
                };
                c.validate().is_ok().then_some(c)
            },
        )
    }

    proptest! {
        #[test]
        fn count_matches_instantiated_model(c in small_config(), seed: u64) {
            let m = EncoderModel::<f64>::new(c.clone(), seed).unwrap();
            prop_assert_eq!(count_params(&c, false).unwrap().total, m.params().num_scalars() as u64);
        }

        #[test]
        fn flops_monotone(n in 2usize..300, g1 in 0.0f64..0.95, g2 in 0.0f64..0.95, dec: bool) {
            let c = reference_config(10, 400);
            let (lo, hi) = if g1 < g2 { (g1, g2) } else { (g2, g1) };
            let f = |n, g| count_flops(&c, n, g, dec).unwrap().total;
            prop_assert!(f(n, hi) <= f(n, lo));
            // a longer path may only drop one more edge
            prop_assert!(f(n + 1, lo) >= f(n, lo));
            prop_assert!(f(n + 1, 0.0) > f(n, 0.0));
        }
    }
}
