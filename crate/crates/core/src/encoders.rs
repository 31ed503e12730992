//! Visual and text encoders into the shared `C`-dimensional embedding space.
//!
//! The visual encoder is a per-frame MLP (`D_raw -> hidden -> ... -> C`, GELU
//! between layers). The text encoder is a frozen, seed-deterministic
//! embedding table keyed by the prompt-expanded class name.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{FsarError, Result};
use crate::nn::{gelu, gelu_backward, join, Linear, Params};

/// `t x C` per-frame features of one video.
pub type FrameFeatures = Array2<f64>;
/// `C`-dim embedding of one class prompt.
pub type TextFeature = Array1<f64>;

pub const CLASS_PLACEHOLDER: &str = "[CLS]";

/// A prompt with exactly one `[CLS]` placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate(String);

impl PromptTemplate {
    pub fn new(template: impl Into<String>) -> Result<Self> {
        let template = template.into();
        let count = template.matches(CLASS_PLACEHOLDER).count();
        if count != 1 {
            return Err(FsarError::InvalidConfig(format!(
                "prompt template `{template}` must contain exactly one {CLASS_PLACEHOLDER}, found {count}"
            )));
        }
        Ok(Self(template))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn expand(&self, class_name: &str) -> String {
        self.0.replace(CLASS_PLACEHOLDER, class_name)
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self("a photo of [CLS]".into())
    }
}

/// Per-frame MLP. Row `k` of the output depends on frame `k` only.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualEncoder {
    pub layers: Vec<Linear>,
}

#[derive(Debug, Clone)]
pub struct VisualCache {
    /// Input of every linear layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of every hidden layer.
    pre: Vec<Array2<f64>>,
}

impl VisualEncoder {
    /// `depth` hidden layers of width `hidden`; `depth = 0` is a single affine map.
    pub fn new<R: Rng + ?Sized>(raw_dim: usize, hidden: usize, depth: usize, dim: usize, rng: &mut R) -> Self {
        let mut widths = vec![raw_dim];
        widths.extend(std::iter::repeat_n(hidden, depth));
        widths.push(dim);
        let layers = widths
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn raw_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn dim(&self) -> usize {
        self.layers.last().unwrap().outputs()
    }

    pub fn encode_video(&self, frames: &Array2<f64>) -> Result<FrameFeatures> {
        Ok(self.forward(frames)?.0)
    }

    pub fn forward(&self, frames: &Array2<f64>) -> Result<(FrameFeatures, VisualCache)> {
        if frames.ncols() != self.raw_dim() {
            return Err(FsarError::DimensionMismatch(format!(
                "frames have dim {}, encoder expects {}",
                frames.ncols(),
                self.raw_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut x = frames.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&x);
            inputs.push(x);
            if i == last {
                x = z;
            } else {
                x = gelu(&z);
                pre.push(z);
            }
        }
        Ok((x, VisualCache { inputs, pre }))
    }

    pub fn backward(&self, cache: &VisualCache, d_out: &Array2<f64>, grad: &mut VisualEncoder) {
        let mut dy = d_out.clone();
        for i in (0..self.layers.len()).rev() {
            let dx = self.layers[i].backward(&cache.inputs[i], &dy, &mut grad.layers[i]);
            if i > 0 {
                dy = gelu_backward(&cache.pre[i - 1], &dx);
            }
        }
    }
}

impl Params for VisualEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layer{i}")), f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for l in &mut self.layers {
            l.visit_mut(f);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoderConfig {
    pub dim: usize,
    pub seed: u64,
    /// Weight in `[0, 1]` of the class-descriptor direction in each text
    /// vector; `0` gives a pure hash embedding.
    pub informativeness: f64,
    pub normalize: bool,
}

/// Frozen text embedding table. It holds no trainable parameters, so no
/// optimizer step can change its outputs.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    config: TextEncoderConfig,
    anchors: HashMap<String, Array1<f64>>,
}

impl TextEncoder {
    /// `descriptors` pairs class names with `D_raw`-dim semantic vectors; they
    /// are projected to `C` dims by a fixed seeded Gaussian map. Required
    /// whenever `informativeness > 0`.
    pub fn new<'a>(
        config: TextEncoderConfig,
        descriptors: Option<impl IntoIterator<Item = (&'a str, ArrayView1<'a, f32>)>>,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.informativeness) {
            return Err(FsarError::InvalidConfig("text_informativeness must lie in [0, 1]".into()));
        }
        let mut anchors = HashMap::new();
        if config.informativeness > 0.0 {
            let descriptors = descriptors.ok_or_else(|| {
                FsarError::InvalidConfig(
                    "text_informativeness > 0 needs a dataset with class descriptors".into(),
                )
            })?;
            let mut projection: Option<Array2<f64>> = None;
            for (name, d) in descriptors {
                let proj = projection.get_or_insert_with(|| {
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_7e47);
                    let scale = 1.0 / (d.len() as f64).sqrt();
                    Array2::from_shape_fn((config.dim, d.len()), |_| {
                        rng.sample::<f64, _>(StandardNormal) * scale
                    })
                });
                let a = proj.dot(&d.mapv(f64::from));
                anchors.insert(name.to_string(), a);
            }
        }
        Ok(Self { config, anchors })
    }

    pub fn config(&self) -> &TextEncoderConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn encode_text(&self, class_name: &str, template: &PromptTemplate) -> Result<TextFeature> {
        if class_name.is_empty() {
            return Err(FsarError::EmptyName);
        }
        let text = template.expand(class_name);
        let mut hasher = Sha256::new();
        hasher.update(self.config.seed.to_le_bytes());
        hasher.update(text.as_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        let mut v: Array1<f64> = Array1::from_shape_fn(self.config.dim, |_| rng.sample(StandardNormal));

        let rho = self.config.informativeness;
        if rho > 0.0 {
            let anchor = self.anchors.get(class_name).ok_or_else(|| {
                FsarError::InvalidConfig(format!("no class descriptor for `{class_name}`"))
            })?;
            let hn = norm(v.view());
            let an = norm(anchor.view());
            if an == 0.0 {
                return Err(FsarError::ZeroVector(format!("descriptor of `{class_name}`")));
            }
            v = v * ((1.0 - rho * rho).sqrt() / hn) + anchor * (rho / an);
        }
        if self.config.normalize {
            let n = norm(v.view());
            if n == 0.0 {
                return Err(FsarError::ZeroVector(format!("text feature of `{class_name}`")));
            }
            v /= n;
        }
        Ok(v)
    }
}

pub fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Global average pooling over the temporal axis.
pub fn gap(features: &FrameFeatures) -> Array1<f64> {
    features
        .mean_axis(Axis(0))
        .expect("frame features have at least one row")
}

/// Gradient of [`gap`]: every row receives `d / t`.
pub fn gap_backward(t: usize, d: &Array1<f64>) -> Array2<f64> {
    let row = d / t as f64;
    let mut out = Array2::zeros((t, d.len()));
    for mut r in out.rows_mut() {
        r.assign(&row);
    }
    out
}

pub fn cosine_similarity(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(FsarError::DimensionMismatch(format!(
            "cosine of {}-dim and {}-dim vectors",
            a.len(),
            b.len()
        )));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(FsarError::ZeroVector("cosine similarity".into()));
    }
    Ok((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Partial derivatives of `cos(a, b)` with respect to `a` and `b`.
pub fn cosine_backward(a: ArrayView1<f64>, b: ArrayView1<f64>) -> (Array1<f64>, Array1<f64>) {
    let na = norm(a);
    let nb = norm(b);
    let c = a.dot(&b) / (na * nb);
    let da = &b / (na * nb) - &a * (c / (na * na));
    let db = &a / (na * nb) - &b * (c / (nb * nb));
    (da, db)
}
