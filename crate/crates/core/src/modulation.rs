//! Temporal Transformer and text-guided prototype modulation.
//!
//! Support prototypes get the class text vector appended as an extra token
//! after the last frame; the Transformer output for that token is dropped.
//! Queries go through the same Transformer (same parameter set) without a
//! text token, so both land in one feature space.
//!
//! Blocks are pre-norm: `x + MHA(LN(x))`, then `x + FF(LN(x))` with a
//! two-layer GELU feed-forward, followed by a final layer norm. Sinusoidal
//! positional encodings, scaled by `pos_scale`, are added to every token,
//! the text token included (it sits at position `t`).

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;

use crate::encoders::{FrameFeatures, TextFeature};
use crate::error::{FsarError, Result};
use crate::nn::{
    gelu, gelu_backward, join, softmax_rows, softmax_rows_backward, LayerNorm, LayerNormCache, Linear, Params,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionalEncoding {
    Sinusoidal,
    None,
}

impl fmt::Display for PositionalEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PositionalEncoding::Sinusoidal => "sinusoidal",
            PositionalEncoding::None => "none",
        })
    }
}

impl FromStr for PositionalEncoding {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sinusoidal" => Ok(PositionalEncoding::Sinusoidal),
            "none" => Ok(PositionalEncoding::None),
            other => Err(format!("unknown positional encoding `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub positional: PositionalEncoding,
    pub pos_scale: f64,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(FsarError::InvalidConfig("transformer needs at least one layer".into()));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(FsarError::InvalidConfig(format!(
                "model dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.ff_dim == 0 {
            return Err(FsarError::InvalidConfig("ff_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
}

struct AttentionCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    merged: Array2<f64>,
}

impl Attention {
    fn new<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self {
            query: Linear::new(dim, dim, rng),
            key: Linear::new(dim, dim, rng),
            value: Linear::new(dim, dim, rng),
            out: Linear::new(dim, dim, rng),
        }
    }

    fn forward(&self, x: &Array2<f64>, heads: usize) -> (Array2<f64>, AttentionCache) {
        let q = self.query.forward(x);
        let k = self.key.forward(x);
        let v = self.value.forward(x);
        let d = x.ncols() / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut merged = Array2::zeros(x.raw_dim());
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * d..(h + 1) * d];
            let scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            let p = softmax_rows(&scores);
            merged.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
            probs.push(p);
        }
        let y = self.out.forward(&merged);
        (
            y,
            AttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                probs,
                merged,
            },
        )
    }

    fn backward(&self, c: &AttentionCache, dy: &Array2<f64>, grad: &mut Attention) -> Array2<f64> {
        let heads = c.probs.len();
        let d = c.x.ncols() / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let d_merged = self.out.backward(&c.merged, dy, &mut grad.out);
        let mut dq = Array2::zeros(c.q.raw_dim());
        let mut dk = Array2::zeros(c.k.raw_dim());
        let mut dv = Array2::zeros(c.v.raw_dim());
        for (h, p) in c.probs.iter().enumerate() {
            let cols = s![.., h * d..(h + 1) * d];
            let d_out = d_merged.slice(cols);
            let dp = d_out.dot(&c.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&d_out));
            let d_scores = softmax_rows_backward(p, &dp) * scale;
            dq.slice_mut(cols).assign(&d_scores.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&d_scores.t().dot(&c.q.slice(cols)));
        }
        let mut dx = self.query.backward(&c.x, &dq, &mut grad.query);
        dx += &self.key.backward(&c.x, &dk, &mut grad.key);
        dx += &self.value.backward(&c.x, &dv, &mut grad.value);
        dx
    }
}

impl Params for Attention {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.query.visit_mut(f);
        self.key.visit_mut(f);
        self.value.visit_mut(f);
        self.out.visit_mut(f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln_attn: LayerNorm,
    pub attn: Attention,
    pub ln_ff: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

struct BlockCache {
    ln_attn: LayerNormCache,
    attn: AttentionCache,
    ln_ff: LayerNormCache,
    ff_x: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_hidden: Array2<f64>,
}

impl Block {
    fn forward(&self, x: &Array2<f64>, heads: usize) -> (Array2<f64>, BlockCache) {
        let (h1, ln_attn) = self.ln_attn.forward(x);
        let (a, attn) = self.attn.forward(&h1, heads);
        let x1 = x + &a;
        let (ff_x, ln_ff) = self.ln_ff.forward(&x1);
        let ff_pre = self.ff_in.forward(&ff_x);
        let ff_hidden = gelu(&ff_pre);
        let y = x1 + self.ff_out.forward(&ff_hidden);
        (
            y,
            BlockCache {
                ln_attn,
                attn,
                ln_ff,
                ff_x,
                ff_pre,
                ff_hidden,
            },
        )
    }

    fn backward(&self, c: &BlockCache, dy: &Array2<f64>, grad: &mut Block) -> Array2<f64> {
        let d_hidden = self.ff_out.backward(&c.ff_hidden, dy, &mut grad.ff_out);
        let d_pre = gelu_backward(&c.ff_pre, &d_hidden);
        let d_ffx = self.ff_in.backward(&c.ff_x, &d_pre, &mut grad.ff_in);
        let dx1 = dy + &self.ln_ff.backward(&c.ln_ff, &d_ffx, &mut grad.ln_ff);
        let dh1 = self.attn.backward(&c.attn, &dx1, &mut grad.attn);
        dx1 + self.ln_attn.backward(&c.ln_attn, &dh1, &mut grad.ln_attn)
    }
}

impl Params for Block {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.ln_attn.visit(&join(prefix, "ln_attn"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.ln_ff.visit(&join(prefix, "ln_ff"), f);
        self.ff_in.visit(&join(prefix, "ff_in"), f);
        self.ff_out.visit(&join(prefix, "ff_out"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.ln_attn.visit_mut(f);
        self.attn.visit_mut(f);
        self.ln_ff.visit_mut(f);
        self.ff_in.visit_mut(f);
        self.ff_out.visit_mut(f);
    }
}

/// Multi-head self-attention encoder over a token sequence (`M x C`).
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalTransformer {
    pub config: TransformerConfig,
    pub blocks: Vec<Block>,
    pub ln_final: LayerNorm,
}

pub struct TransformerCache {
    blocks: Vec<BlockCache>,
    ln_final: LayerNormCache,
}

pub fn sinusoidal_encoding(len: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, dim), |(pos, i)| {
        let freq = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / dim as f64);
        let angle = pos as f64 * freq;
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

impl TemporalTransformer {
    pub fn new<R: Rng + ?Sized>(config: TransformerConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.dim;
        let blocks = (0..config.layers)
            .map(|_| Block {
                ln_attn: LayerNorm::new(c),
                attn: Attention::new(c, rng),
                ln_ff: LayerNorm::new(c),
                ff_in: Linear::new(c, config.ff_dim, rng),
                ff_out: Linear::new(config.ff_dim, c, rng),
            })
            .collect();
        Ok(Self {
            config,
            blocks,
            ln_final: LayerNorm::new(c),
        })
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    fn check(&self, seq: &Array2<f64>) -> Result<()> {
        if seq.nrows() == 0 {
            return Err(FsarError::DimensionMismatch("empty token sequence".into()));
        }
        if seq.ncols() != self.dim() {
            return Err(FsarError::DimensionMismatch(format!(
                "tokens have dim {}, transformer expects {}",
                seq.ncols(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, seq: &Array2<f64>) -> Result<(Array2<f64>, TransformerCache)> {
        self.check(seq)?;
        let mut x = seq.clone();
        if self.config.positional == PositionalEncoding::Sinusoidal {
            x.scaled_add(self.config.pos_scale, &sinusoidal_encoding(seq.nrows(), seq.ncols()));
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward(&x, self.config.heads);
            caches.push(c);
            x = y;
        }
        let (out, ln_final) = self.ln_final.forward(&x);
        Ok((
            out,
            TransformerCache {
                blocks: caches,
                ln_final,
            },
        ))
    }

    /// Returns the gradient with respect to the input tokens.
    pub fn backward(&self, cache: &TransformerCache, d_out: &Array2<f64>, grad: &mut TemporalTransformer) -> Array2<f64> {
        let mut dx = self.ln_final.backward(&cache.ln_final, d_out, &mut grad.ln_final);
        for (i, b) in self.blocks.iter().enumerate().rev() {
            dx = b.backward(&cache.blocks[i], &dx, &mut grad.blocks[i]);
        }
        dx
    }

    pub fn apply(&self, seq: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(seq)?.0)
    }
}

impl Params for TemporalTransformer {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
        self.ln_final.visit(&join(prefix, "ln_final"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        self.ln_final.visit_mut(f);
    }
}

fn stack_text(fs: &FrameFeatures, w: &TextFeature) -> Result<Array2<f64>> {
    if w.len() != fs.ncols() {
        return Err(FsarError::DimensionMismatch(format!(
            "text feature dim {} vs frame feature dim {}",
            w.len(),
            fs.ncols()
        )));
    }
    let token = w.view().insert_axis(Axis(0));
    Ok(concatenate(Axis(0), &[fs.view(), token]).expect("column counts agree"))
}

/// Enhanced support features: frames plus trailing text token through the
/// Transformer, keeping only the `t` frame outputs.
pub fn modulate_support(tr: &TemporalTransformer, fs: &FrameFeatures, w: &TextFeature) -> Result<FrameFeatures> {
    Ok(modulate_support_forward(tr, fs, w)?.0)
}

pub fn modulate_support_forward(
    tr: &TemporalTransformer,
    fs: &FrameFeatures,
    w: &TextFeature,
) -> Result<(FrameFeatures, TransformerCache)> {
    let seq = stack_text(fs, w)?;
    let (out, cache) = tr.forward(&seq)?;
    let t = fs.nrows();
    Ok((out.slice(s![..t, ..]).to_owned(), cache))
}

/// Gradient w.r.t. the support frames; the text token is frozen so its
/// gradient is dropped.
pub fn modulate_support_backward(
    tr: &TemporalTransformer,
    cache: &TransformerCache,
    d_out: &Array2<f64>,
    grad: &mut TemporalTransformer,
) -> Array2<f64> {
    let t = d_out.nrows();
    let mut full = Array2::zeros((t + 1, d_out.ncols()));
    full.slice_mut(s![..t, ..]).assign(d_out);
    let dx = tr.backward(cache, &full, grad);
    dx.slice(s![..t, ..]).to_owned()
}

/// Query features through the same Transformer, without a text token.
pub fn transform_query(tr: &TemporalTransformer, fq: &FrameFeatures) -> Result<FrameFeatures> {
    tr.apply(fq)
}

/// Elementwise mean of `K` same-shaped feature matrices, accumulated as a
/// running mean so that `K` identical inputs reproduce the input bit-exactly.
pub fn average_support_shots(features: &[FrameFeatures]) -> Result<FrameFeatures> {
    let first = features
        .first()
        .ok_or_else(|| FsarError::InvalidArgument("no support shots to average".into()))?;
    let mut mean = first.clone();
    for (k, f) in features.iter().enumerate().skip(1) {
        if f.dim() != mean.dim() {
            return Err(FsarError::DimensionMismatch(format!(
                "support shot shape {:?} vs {:?}",
                f.dim(),
                mean.dim()
            )));
        }
        let inv = 1.0 / (k + 1) as f64;
        mean.zip_mut_with(f, |m, &x| *m += (x - *m) * inv);
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{numeric_grad, rel_err};
    use crate::nn::LN_EPS;
    use ndarray::Array1;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn cfg(dim: usize, layers: usize, heads: usize, positional: PositionalEncoding) -> TransformerConfig {
        TransformerConfig {
            dim,
            layers,
            heads,
            ff_dim: 2 * dim,
            positional,
            pos_scale: 0.1,
        }
    }

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.sample::<f64, _>(StandardNormal))
    }

    fn randomize_norms(tr: &mut TemporalTransformer, rng: &mut ChaCha8Rng) {
        let mut perturb = |ln: &mut LayerNorm| {
            ln.gamma.mapv_inplace(|g| g + 0.3 * rng.sample::<f64, _>(StandardNormal));
            ln.beta.mapv_inplace(|b| b + 0.3 * rng.sample::<f64, _>(StandardNormal));
        };
        for b in &mut tr.blocks {
            perturb(&mut b.ln_attn);
            perturb(&mut b.ln_ff);
        }
        perturb(&mut tr.ln_final);
    }

    #[test]
    fn config_validation() {
        assert!(cfg(8, 1, 3, PositionalEncoding::None).validate().is_err());
        assert!(cfg(8, 0, 2, PositionalEncoding::None).validate().is_err());
        assert!(cfg(8, 2, 4, PositionalEncoding::Sinusoidal).validate().is_ok());
    }

    #[test]
    fn shape_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tr = TemporalTransformer::new(cfg(64, 1, 8, PositionalEncoding::Sinusoidal), &mut rng).unwrap();
        let x = randn(&mut rng, 9, 64);
        assert_eq!(tr.apply(&x).unwrap().dim(), (9, 64));
        assert!(matches!(tr.apply(&randn(&mut rng, 3, 8)), Err(FsarError::DimensionMismatch(_))));
    }

    #[test]
    fn shape_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in [1, 3, 8] {
            for (c, heads) in [(4, 1), (8, 2), (12, 3)] {
                for layers in [1, 2] {
                    let tr = TemporalTransformer::new(cfg(c, layers, heads, PositionalEncoding::Sinusoidal), &mut rng).unwrap();
                    let f = randn(&mut rng, t, c);
                    let w = Array1::from_shape_fn(c, |_| rng.sample::<f64, _>(StandardNormal));
                    assert_eq!(modulate_support(&tr, &f, &w).unwrap().dim(), (t, c));
                    assert_eq!(transform_query(&tr, &f).unwrap().dim(), (t, c));
                }
            }
        }
    }

    #[test]
    fn permutation_equivariant_without_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tr = TemporalTransformer::new(cfg(8, 2, 2, PositionalEncoding::None), &mut rng).unwrap();
        let x = randn(&mut rng, 5, 8);
        let perm = [2usize, 4, 0, 3, 1];
        let y = tr.apply(&x).unwrap();
        let yp = tr.apply(&x.select(Axis(0), &perm)).unwrap();
        let expected = y.select(Axis(0), &perm);
        assert!((&yp - &expected).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b)) < 1e-12);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tr = TemporalTransformer::new(cfg(8, 1, 2, PositionalEncoding::Sinusoidal), &mut rng).unwrap();
        randomize_norms(&mut tr, &mut rng);
        let x = randn(&mut rng, 3, 8);
        let w = randn(&mut rng, 3, 8);
        let (_, cache) = tr.forward(&x).unwrap();
        let mut grad = tr.zeroed();
        let dx = tr.backward(&cache, &w, &mut grad);

        let mut fx = |p: &[f64]| (tr.apply(&Array2::from_shape_vec((3, 8), p.to_vec()).unwrap()).unwrap() * &w).sum();
        let num = numeric_grad(&mut fx, x.as_slice().unwrap(), 1e-5);
        assert!(rel_err(dx.as_slice().unwrap(), &num) <= 1e-4);

        let mut fp = |p: &[f64]| {
            let mut t2 = tr.clone();
            t2.assign_flat(p);
            (t2.apply(&x).unwrap() * &w).sum()
        };
        let num = numeric_grad(&mut fp, &tr.flatten(), 1e-5);
        assert!(rel_err(&grad.flatten(), &num) <= 1e-4);
    }

    #[test]
    fn modulation_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tr = TemporalTransformer::new(cfg(8, 2, 4, PositionalEncoding::Sinusoidal), &mut rng).unwrap();
        randomize_norms(&mut tr, &mut rng);
        let fs = randn(&mut rng, 4, 8);
        let txt = Array1::from_shape_fn(8, |_| rng.sample::<f64, _>(StandardNormal));
        let w = randn(&mut rng, 4, 8);
        let (_, cache) = modulate_support_forward(&tr, &fs, &txt).unwrap();
        let mut grad = tr.zeroed();
        let dfs = modulate_support_backward(&tr, &cache, &w, &mut grad);
        let mut f = |p: &[f64]| {
            (modulate_support(&tr, &Array2::from_shape_vec((4, 8), p.to_vec()).unwrap(), &txt).unwrap() * &w).sum()
        };
        let num = numeric_grad(&mut f, fs.as_slice().unwrap(), 1e-5);
        assert!(rel_err(dfs.as_slice().unwrap(), &num) <= 1e-4);
    }

    #[test]
    fn residual_only_blocks_reduce_to_final_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tr = TemporalTransformer::new(cfg(6, 2, 2, PositionalEncoding::Sinusoidal), &mut rng).unwrap();
        for b in &mut tr.blocks {
            b.attn.visit_mut(&mut |d| d.fill(0.0));
            b.ff_in.visit_mut(&mut |d| d.fill(0.0));
            b.ff_out.visit_mut(&mut |d| d.fill(0.0));
        }
        let fs = randn(&mut rng, 3, 6);
        let pe = sinusoidal_encoding(4, 6);
        let w1 = Array1::from_shape_fn(6, |_| rng.sample::<f64, _>(StandardNormal));
        let w2 = Array1::from_shape_fn(6, |_| rng.sample::<f64, _>(StandardNormal));
        let out1 = modulate_support(&tr, &fs, &w1).unwrap();
        let out2 = modulate_support(&tr, &fs, &w2).unwrap();
        assert_eq!(out1, out2);
        for i in 0..3 {
            // hand-computed: layer norm of (frame + 0.1 * PE) with unit gain, zero shift
            let x: Vec<f64> = (0..6).map(|j| fs[[i, j]] + 0.1 * pe[[i, j]]).collect();
            let mean = x.iter().sum::<f64>() / 6.0;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            for j in 0..6 {
                let expected = (x[j] - mean) / (var + LN_EPS).sqrt();
                assert!((out1[[i, j]] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn text_token_changes_support_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let tr = TemporalTransformer::new(cfg(8, 1, 2, PositionalEncoding::Sinusoidal), &mut rng).unwrap();
            let fs = randn(&mut rng, 4, 8);
            let w1 = Array1::from_shape_fn(8, |_| rng.sample::<f64, _>(StandardNormal));
            let w2 = Array1::from_shape_fn(8, |_| rng.sample::<f64, _>(StandardNormal));
            let a = modulate_support(&tr, &fs, &w1).unwrap();
            let b = modulate_support(&tr, &fs, &w2).unwrap();
            assert!((&a - &b).mapv(f64::abs).sum() > 1e-6);
        }
    }

    #[test]
    fn query_path_is_deterministic_and_shares_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tr = TemporalTransformer::new(cfg(8, 1, 2, PositionalEncoding::Sinusoidal), &mut rng).unwrap();
        let fq = randn(&mut rng, 4, 8);
        let txt = Array1::from_shape_fn(8, |_| rng.sample::<f64, _>(StandardNormal));
        assert_eq!(transform_query(&tr, &fq).unwrap(), transform_query(&tr, &fq).unwrap());

        // one gradient step through the query path alone
        let before_support = modulate_support(&tr, &fq, &txt).unwrap();
        let (_, cache) = tr.forward(&fq).unwrap();
        let mut grad = tr.zeroed();
        tr.backward(&cache, &Array2::ones((4, 8)), &mut grad);
        let g = grad.flatten();
        let p: Vec<f64> = tr.flatten().iter().zip(&g).map(|(p, g)| p - 0.1 * g).collect();
        tr.assign_flat(&p);
        let after_support = modulate_support(&tr, &fq, &txt).unwrap();
        assert_ne!(before_support, after_support);
    }

    #[test]
    fn shot_averaging() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = randn(&mut rng, 3, 4);
        assert_eq!(average_support_shots(&[a.clone(), a.clone(), a.clone()]).unwrap(), a);
        assert_eq!(average_support_shots(std::slice::from_ref(&a)).unwrap(), a);
        let neg = -&a;
        assert_eq!(average_support_shots(&[a.clone(), neg]).unwrap(), Array2::<f64>::zeros((3, 4)));
        assert!(matches!(
            average_support_shots(&[a.clone(), randn(&mut rng, 2, 4)]),
            Err(FsarError::DimensionMismatch(_))
        ));
        assert!(average_support_shots(&[]).is_err());
        let b = randn(&mut rng, 3, 4);
        let c = randn(&mut rng, 3, 4);
        let m = average_support_shots(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let direct = (&a + &b + &c) / 3.0;
        assert!((&m - &direct).mapv(f64::abs).sum() < 1e-12);
    }
}
