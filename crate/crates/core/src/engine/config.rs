//! Run configuration (`key = value` file).
//!
//! Unknown keys are hard errors and `seed` is mandatory. The dataset is either
//! `data_path = <file>` or a synthetic spec given through `data.*` keys.
//! [`RunConfig::to_kv_string`] is canonical: parsing its output gives back an
//! equal config, and its SHA-256 is the config hash in result files.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::{load_dataset, generate_synthetic, Dataset, SyntheticSpec};
use crate::encoders::PromptTemplate;
use crate::error::{FsarError, Result};
use crate::kv::KvFile;
use crate::metrics::MetricKind;
use crate::modulation::{PositionalEncoding, TransformerConfig};
use crate::objectives::{LossWeights, Temperature};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Path(String),
    Synthetic(SyntheticSpec),
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Path(p) => load_dataset(p),
            DataSource::Synthetic(spec) => generate_synthetic(spec),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub grad_clip: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataSource,
    pub way: usize,
    pub shot: usize,
    pub queries_per_class: usize,
    pub eval_queries_per_class: usize,
    pub frames: usize,

    pub embed_dim: usize,
    pub encoder_hidden: usize,
    pub encoder_depth: usize,

    pub prompt_template: PromptTemplate,
    pub text_seed: u64,
    pub text_informativeness: f64,
    pub text_normalize: bool,

    pub transformer_layers: usize,
    pub transformer_heads: usize,
    pub transformer_ff_dim: usize,
    pub positional: PositionalEncoding,
    pub pos_scale: f64,

    pub metric: MetricKind,

    pub weights: LossWeights,
    pub tau_init: f64,

    pub adam: AdamConfig,
    pub augment_noise: f64,
    pub train_episodes: usize,
    pub eval_episodes: usize,
    pub log_every: usize,
    pub seed: u64,

    pub ablate_video_text: bool,
    pub ablate_modulation: bool,
}

impl RunConfig {
    /// Defaults for everything except the data source and seed.
    pub fn with_data(data: DataSource, seed: u64) -> Self {
        Self {
            data,
            way: 5,
            shot: 1,
            queries_per_class: 2,
            eval_queries_per_class: 1,
            frames: 8,
            embed_dim: 32,
            encoder_hidden: 64,
            encoder_depth: 1,
            prompt_template: PromptTemplate::default(),
            text_seed: 0,
            text_informativeness: 0.0,
            text_normalize: true,
            transformer_layers: 1,
            transformer_heads: 4,
            transformer_ff_dim: 64,
            positional: PositionalEncoding::Sinusoidal,
            pos_scale: 0.1,
            metric: MetricKind::default(),
            weights: LossWeights::default(),
            tau_init: 0.07,
            adam: AdamConfig::default(),
            augment_noise: 0.0,
            train_episodes: 2000,
            eval_episodes: 10_000,
            log_every: 100,
            seed,
            ablate_video_text: false,
            ablate_modulation: false,
        }
    }

    pub fn transformer_config(&self) -> TransformerConfig {
        TransformerConfig {
            dim: self.embed_dim,
            layers: self.transformer_layers,
            heads: self.transformer_heads,
            ff_dim: self.transformer_ff_dim,
            positional: self.positional,
            pos_scale: self.pos_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FsarError::InvalidConfig(m));
        if self.way < 2 {
            return bad("way must be at least 2".into());
        }
        if self.shot == 0 || self.queries_per_class == 0 || self.eval_queries_per_class == 0 {
            return bad("shot and queries per class must be positive".into());
        }
        if self.frames == 0 {
            return bad("frames must be positive".into());
        }
        if self.embed_dim == 0 || (self.encoder_depth > 0 && self.encoder_hidden == 0) {
            return bad("encoder dims must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.text_informativeness) {
            return bad("text_informativeness must lie in [0, 1]".into());
        }
        if !(self.pos_scale >= 0.0 && self.pos_scale.is_finite()) {
            return bad("pos_scale must be finite and >= 0".into());
        }
        self.transformer_config().validate()?;
        self.metric.validate()?;
        self.weights.validate()?;
        Temperature::new(self.tau_init)?;
        let a = &self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite()) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return bad("adam needs lr > 0 and betas in [0, 1)".into());
        }
        if !(a.eps > 0.0) || !(a.grad_clip >= 0.0) {
            return bad("adam eps must be > 0 and grad_clip >= 0".into());
        }
        if !(self.augment_noise >= 0.0 && self.augment_noise.is_finite()) {
            return bad("augment_noise must be finite and >= 0".into());
        }
        if self.log_every == 0 {
            return bad("log_every must be positive".into());
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KvFile::parse(text)?;
        let seed: u64 = match kv.take_str("seed") {
            Some(s) => s
                .parse()
                .map_err(|_| FsarError::InvalidConfig(format!("bad seed `{s}`")))?,
            None => return Err(FsarError::InvalidConfig("`seed` is mandatory".into())),
        };
        let data = match kv.take_str("data_path") {
            Some(p) => {
                if let Some(k) = ["data.num_classes", "data.seed", "data.frame_dim"].iter().find(|k| kv.contains(k)) {
                    return Err(FsarError::InvalidConfig(format!(
                        "`data_path` and synthetic key `{k}` are mutually exclusive"
                    )));
                }
                DataSource::Path(p)
            }
            None => DataSource::Synthetic(SyntheticSpec::read_kv(&mut kv, "data.")?),
        };
        let d = Self::with_data(data, seed);
        let template = match kv.take_str("prompt_template") {
            Some(t) => PromptTemplate::new(t)?,
            None => d.prompt_template.clone(),
        };
        let metric_family: MetricKind = kv.take("metric", d.metric)?;
        let metric = match metric_family {
            MetricKind::Otam { .. } => {
                let MetricKind::Otam {
                    lambda,
                    bidirectional,
                    relaxed,
                } = MetricKind::default()
                else {
                    unreachable!()
                };
                MetricKind::Otam {
                    lambda: kv.take("otam_lambda", lambda)?,
                    bidirectional: kv.take("otam_bidirectional", bidirectional)?,
                    relaxed: kv.take("otam_relaxed", relaxed)?,
                }
            }
            other => other,
        };
        let cfg = Self {
            way: kv.take("way", d.way)?,
            shot: kv.take("shot", d.shot)?,
            queries_per_class: kv.take("queries_per_class", d.queries_per_class)?,
            eval_queries_per_class: kv.take("eval_queries_per_class", d.eval_queries_per_class)?,
            frames: kv.take("frames", d.frames)?,
            embed_dim: kv.take("embed_dim", d.embed_dim)?,
            encoder_hidden: kv.take("encoder_hidden", d.encoder_hidden)?,
            encoder_depth: kv.take("encoder_depth", d.encoder_depth)?,
            prompt_template: template,
            text_seed: kv.take("text_seed", d.text_seed)?,
            text_informativeness: kv.take("text_informativeness", d.text_informativeness)?,
            text_normalize: kv.take("text_normalize", d.text_normalize)?,
            transformer_layers: kv.take("transformer_layers", d.transformer_layers)?,
            transformer_heads: kv.take("transformer_heads", d.transformer_heads)?,
            transformer_ff_dim: kv.take("transformer_ff_dim", d.transformer_ff_dim)?,
            positional: kv.take("positional_encoding", d.positional)?,
            pos_scale: kv.take("pos_scale", d.pos_scale)?,
            metric,
            weights: LossWeights {
                alpha: kv.take("alpha", d.weights.alpha)?,
                beta: kv.take("beta", d.weights.beta)?,
            },
            tau_init: kv.take("tau_init", d.tau_init)?,
            adam: AdamConfig {
                lr: kv.take("lr", d.adam.lr)?,
                beta1: kv.take("adam_beta1", d.adam.beta1)?,
                beta2: kv.take("adam_beta2", d.adam.beta2)?,
                eps: kv.take("adam_eps", d.adam.eps)?,
                grad_clip: kv.take("grad_clip", d.adam.grad_clip)?,
            },
            augment_noise: kv.take("augment_noise", d.augment_noise)?,
            train_episodes: kv.take("train_episodes", d.train_episodes)?,
            eval_episodes: kv.take("eval_episodes", d.eval_episodes)?,
            log_every: kv.take("log_every", d.log_every)?,
            ablate_video_text: kv.take("ablate_video_text", d.ablate_video_text)?,
            ablate_modulation: kv.take("ablate_modulation", d.ablate_modulation)?,
            ..d
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| FsarError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("seed", &self.seed);
        if let DataSource::Path(p) = &self.data {
            put("data_path", p);
        }
        put("way", &self.way);
        put("shot", &self.shot);
        put("queries_per_class", &self.queries_per_class);
        put("eval_queries_per_class", &self.eval_queries_per_class);
        put("frames", &self.frames);
        put("embed_dim", &self.embed_dim);
        put("encoder_hidden", &self.encoder_hidden);
        put("encoder_depth", &self.encoder_depth);
        put("prompt_template", &self.prompt_template.as_str());
        put("text_seed", &self.text_seed);
        put("text_informativeness", &self.text_informativeness);
        put("text_normalize", &self.text_normalize);
        put("transformer_layers", &self.transformer_layers);
        put("transformer_heads", &self.transformer_heads);
        put("transformer_ff_dim", &self.transformer_ff_dim);
        put("positional_encoding", &self.positional);
        put("pos_scale", &self.pos_scale);
        put("metric", &self.metric);
        if let MetricKind::Otam {
            lambda,
            bidirectional,
            relaxed,
        } = self.metric
        {
            put("otam_lambda", &lambda);
            put("otam_bidirectional", &bidirectional);
            put("otam_relaxed", &relaxed);
        }
        put("alpha", &self.weights.alpha);
        put("beta", &self.weights.beta);
        put("tau_init", &self.tau_init);
        put("lr", &self.adam.lr);
        put("adam_beta1", &self.adam.beta1);
        put("adam_beta2", &self.adam.beta2);
        put("adam_eps", &self.adam.eps);
        put("grad_clip", &self.adam.grad_clip);
        put("augment_noise", &self.augment_noise);
        put("train_episodes", &self.train_episodes);
        put("eval_episodes", &self.eval_episodes);
        put("log_every", &self.log_every);
        put("ablate_video_text", &self.ablate_video_text);
        put("ablate_modulation", &self.ablate_modulation);
        if let DataSource::Synthetic(spec) = &self.data {
            spec.write_kv(&mut out, "data.");
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_kv_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_mandatory() {
        assert!(RunConfig::parse("way = 5").unwrap_err().to_string().contains("seed"));
    }

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::parse("seed = 3\nway = 4\nmetric = bi_mhm\ndata.num_classes = 30\n").unwrap();
        assert_eq!(c.way, 4);
        assert_eq!(c.frames, 8);
        assert_eq!(c.eval_episodes, 10_000);
        assert_eq!(c.metric, MetricKind::BiMhm);
        match &c.data {
            DataSource::Synthetic(s) => assert_eq!(s.num_classes, 30),
            _ => panic!(),
        }
    }

    #[test]
    fn unknown_and_conflicting_keys() {
        assert!(RunConfig::parse("seed = 1\nwya = 5").is_err());
        assert!(RunConfig::parse("seed = 1\ndata_path = x\ndata.seed = 2").is_err());
        assert!(RunConfig::parse("seed = 1\nmetric = bi_mhm\notam_lambda = 0.2").is_err());
        assert!(RunConfig::parse("seed = 1\ntransformer_heads = 5").is_err());
        assert!(RunConfig::parse("seed = 1\nbeta = 1.5").is_err());
        assert!(RunConfig::parse("seed = 1\nprompt_template = no placeholder").is_err());
    }

    #[test]
    fn canonical_round_trip() {
        let mut c = RunConfig::with_data(DataSource::Synthetic(SyntheticSpec::default()), 9);
        c.metric = MetricKind::Otam {
            lambda: 0.05,
            bidirectional: false,
            relaxed: true,
        };
        c.prompt_template = PromptTemplate::new("a video of [CLS] happening").unwrap();
        c.ablate_modulation = true;
        let back = RunConfig::parse(&c.to_kv_string()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let p = RunConfig::with_data(DataSource::Path("/tmp/x.fsards".into()), 1);
        assert_eq!(RunConfig::parse(&p.to_kv_string()).unwrap(), p);
        assert_ne!(p.hash(), c.hash());
    }
}
