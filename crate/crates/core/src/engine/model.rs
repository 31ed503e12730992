//! Trainable parameters, the frozen text bank, and the episode loss with its
//! full backward pass.

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::config::RunConfig;
use crate::data::{sparse_sample_frames, Dataset, Episode, FrameMode, VideoSample};
use crate::encoders::{FrameFeatures, TextEncoder, TextEncoderConfig, VisualEncoder};
use crate::error::{FsarError, Result};
use crate::metrics::{score, score_with_grad, MetricKind};
use crate::modulation::{
    average_support_shots, modulate_support, modulate_support_backward, modulate_support_forward, transform_query,
    TemporalTransformer,
};
use crate::nn::{join, Params};
use crate::objectives::{few_shot_loss_grad, video_text_loss_grad, Temperature};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: VisualEncoder,
    pub transformer: TemporalTransformer,
    pub temperature: Temperature,
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(config: &RunConfig, raw_dim: usize, rng: &mut R) -> Result<Self> {
        let encoder = VisualEncoder::new(
            raw_dim,
            config.encoder_hidden,
            config.encoder_depth,
            config.embed_dim,
            rng,
        );
        let transformer = TemporalTransformer::new(config.transformer_config(), rng)?;
        let mut p = Self {
            encoder,
            transformer,
            temperature: Temperature::new(config.tau_init)?,
        };
        p.round_to_f32();
        Ok(p)
    }

    pub fn raw_dim(&self) -> usize {
        self.encoder.raw_dim()
    }

    /// Parameters live at f32 precision so checkpoints are lossless; all
    /// arithmetic stays in f64.
    pub fn round_to_f32(&mut self) {
        self.visit_mut(&mut |d| d.iter_mut().for_each(|x| *x = *x as f32 as f64));
    }
}

impl Params for ModelParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.transformer.visit(&join(prefix, "transformer"), f);
        f(&join(prefix, "log_tau"), &[1], &[self.temperature.log_tau()]);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.encoder.visit_mut(f);
        self.transformer.visit_mut(f);
        f(std::slice::from_mut(self.temperature.log_tau_mut()));
    }
}

/// Text features for every class of `dataset`, one row per class id.
pub fn text_bank(config: &RunConfig, dataset: &Dataset) -> Result<Array2<f64>> {
    let names = dataset.classes().names();
    let descriptors = dataset
        .descriptors()
        .map(|d| names.iter().map(String::as_str).zip(d.rows()));
    let enc = TextEncoder::new(
        TextEncoderConfig {
            dim: config.embed_dim,
            seed: config.text_seed,
            informativeness: config.text_informativeness,
            normalize: config.text_normalize,
        },
        descriptors,
    )?;
    let mut bank = Array2::zeros((names.len(), config.embed_dim));
    for (i, n) in names.iter().enumerate() {
        bank.row_mut(i).assign(&enc.encode_text(n, &config.prompt_template)?);
    }
    Ok(bank)
}

/// Which loss terms and branches are active.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSettings {
    pub metric: MetricKind,
    pub alpha: f64,
    pub video_text: bool,
    pub modulation: bool,
}

impl LossSettings {
    pub fn from_config(config: &RunConfig) -> Self {
        Self {
            metric: config.metric,
            alpha: config.weights.alpha,
            video_text: !config.ablate_video_text,
            modulation: !config.ablate_modulation,
        }
    }
}

/// Raw sampled frames of one episode (`t x D` each).
#[derive(Debug, Clone)]
pub struct EpisodeBatch {
    pub support: Vec<Vec<Array2<f64>>>,
    pub class_ids: Vec<usize>,
    pub queries: Vec<Array2<f64>>,
    pub query_labels: Vec<usize>,
}

pub fn select_frames(sample: &VideoSample, idx: &[usize]) -> Array2<f64> {
    sample.frames.select(Axis(0), idx).mapv(f64::from)
}

impl EpisodeBatch {
    /// Samples `t` frames per video; `noise > 0` adds Gaussian jitter to every
    /// sampled frame value.
    pub fn gather<R: Rng + ?Sized>(
        dataset: &Dataset,
        episode: &Episode,
        t: usize,
        mode: FrameMode,
        noise: f64,
        rng: &mut R,
    ) -> Self {
        let load = |i: usize, rng: &mut R| {
            let s = dataset.sample(i);
            let idx = sparse_sample_frames(s, t, mode, rng);
            let mut x = select_frames(s, &idx);
            if noise > 0.0 {
                x.mapv_inplace(|v| v + noise * rng.sample::<f64, _>(StandardNormal));
            }
            x
        };
        let support = episode
            .support
            .iter()
            .map(|g| g.iter().map(|&i| load(i, rng)).collect())
            .collect();
        let queries = episode.queries.iter().map(|&(i, _)| load(i, rng)).collect();
        Self {
            support,
            class_ids: episode.global_class_ids.clone(),
            queries,
            query_labels: episode.queries.iter().map(|&(_, y)| y).collect(),
        }
    }
}

/// Texts the video-text loss ranges over (the base classes during training).
#[derive(Debug, Clone)]
pub struct TextTargets {
    pub texts: Array2<f64>,
    /// Global class id -> row of `texts`.
    pub row_of: Vec<Option<usize>>,
}

impl TextTargets {
    pub fn new(bank: &Array2<f64>, class_ids: &[usize]) -> Self {
        let mut row_of = vec![None; bank.nrows()];
        for (r, &c) in class_ids.iter().enumerate() {
            row_of[c] = Some(r);
        }
        Self {
            texts: bank.select(Axis(0), class_ids),
            row_of,
        }
    }

    fn row(&self, class_id: usize) -> Result<usize> {
        self.row_of
            .get(class_id)
            .copied()
            .flatten()
            .ok_or_else(|| FsarError::InvalidArgument(format!("class {class_id} has no video-text target")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub video_text: f64,
    pub few_shot: f64,
}

/// Joint episode loss and its gradient w.r.t. every trainable parameter.
///
/// `bank` holds a text row per global class id (prototype modulation);
/// `targets` defines the video-text classification problem. Disabled terms
/// contribute exactly zero loss and zero gradient.
pub fn loss_and_grad(
    params: &ModelParams,
    bank: &Array2<f64>,
    targets: &TextTargets,
    batch: &EpisodeBatch,
    settings: &LossSettings,
) -> Result<(LossParts, ModelParams)> {
    let mut grad = params.zeroed();
    let enc = &params.encoder;
    let tr = &params.transformer;

    let mut sup = Vec::new();
    for group in &batch.support {
        let mut g = Vec::new();
        for x in group {
            g.push(enc.forward(x)?);
        }
        sup.push(g);
    }
    let mut qry = Vec::new();
    for x in &batch.queries {
        qry.push(enc.forward(x)?);
    }
    let mut d_sup: Vec<Vec<Array2<f64>>> = sup
        .iter()
        .map(|g| g.iter().map(|(f, _)| Array2::zeros(f.raw_dim())).collect())
        .collect();
    let mut d_qry: Vec<Array2<f64>> = qry.iter().map(|(f, _)| Array2::zeros(f.raw_dim())).collect();

    let mut parts = LossParts {
        total: 0.0,
        video_text: 0.0,
        few_shot: 0.0,
    };

    if settings.video_text {
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for (c, g) in sup.iter().enumerate() {
            for (f, _) in g {
                feats.push(f.clone());
                labels.push(targets.row(batch.class_ids[c])?);
            }
        }
        for ((f, _), &y) in qry.iter().zip(&batch.query_labels) {
            feats.push(f.clone());
            labels.push(targets.row(batch.class_ids[y])?);
        }
        let (l, dfeat, dlt) = video_text_loss_grad(&feats, &labels, &targets.texts, params.temperature)?;
        parts.video_text = l;
        let mut it = dfeat.into_iter();
        for g in d_sup.iter_mut() {
            for d in g.iter_mut() {
                *d += &it.next().expect("one gradient per video");
            }
        }
        for d in d_qry.iter_mut() {
            *d += &it.next().expect("one gradient per video");
        }
        *grad.temperature.log_tau_mut() += dlt;
    }

    if settings.alpha > 0.0 {
        let way = sup.len();
        let k = batch.support.first().map_or(1, Vec::len) as f64;
        let mut protos = Vec::with_capacity(way);
        let mut mod_caches = Vec::with_capacity(way);
        for (c, g) in sup.iter().enumerate() {
            let avg = average_support_shots(&g.iter().map(|(f, _)| f.clone()).collect::<Vec<_>>())?;
            if settings.modulation {
                let w = bank.row(batch.class_ids[c]).to_owned();
                let (p, cache) = modulate_support_forward(tr, &avg, &w)?;
                protos.push(p);
                mod_caches.push(Some(cache));
            } else {
                protos.push(avg);
                mod_caches.push(None);
            }
        }
        let mut q_emb = Vec::with_capacity(qry.len());
        let mut q_caches = Vec::with_capacity(qry.len());
        for (f, _) in &qry {
            if settings.modulation {
                let (e, cache) = tr.forward(f)?;
                q_emb.push(e);
                q_caches.push(Some(cache));
            } else {
                q_emb.push(f.clone());
                q_caches.push(None);
            }
        }

        let nq = q_emb.len() as f64;
        let mut d_proto: Vec<Array2<f64>> = protos.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        let mut d_qemb: Vec<Array2<f64>> = q_emb.iter().map(|q| Array2::zeros(q.raw_dim())).collect();
        let mut l_fs = 0.0;
        for (qi, q) in q_emb.iter().enumerate() {
            let mut scores = Vec::with_capacity(way);
            let mut parts_grad = Vec::with_capacity(way);
            for p in &protos {
                let (s, dq, dp) = score_with_grad(&settings.metric, q, p)?;
                scores.push(s);
                parts_grad.push((dq, dp));
            }
            let (l, ds) = few_shot_loss_grad(&scores, batch.query_labels[qi])?;
            l_fs += l / nq;
            for (c, (dq, dp)) in parts_grad.iter().enumerate() {
                let w = settings.alpha * ds[c] / nq;
                d_qemb[qi].scaled_add(w, dq);
                d_proto[c].scaled_add(w, dp);
            }
        }
        parts.few_shot = l_fs;

        for (c, dp) in d_proto.iter().enumerate() {
            let d_avg = match &mod_caches[c] {
                Some(cache) => modulate_support_backward(tr, cache, dp, &mut grad.transformer),
                None => dp.clone(),
            };
            for d in d_sup[c].iter_mut() {
                d.scaled_add(1.0 / k, &d_avg);
            }
        }
        for (qi, dq) in d_qemb.iter().enumerate() {
            let dx = match &q_caches[qi] {
                Some(cache) => tr.backward(cache, dq, &mut grad.transformer),
                None => dq.clone(),
            };
            d_qry[qi] += &dx;
        }
    } else if settings.alpha == 0.0 && !batch.queries.is_empty() {
        // Still report the few-shot loss; it carries no gradient.
        parts.few_shot = few_shot_loss_value(params, bank, batch, settings)?;
    }

    for (g, dg) in sup.iter().zip(&d_sup) {
        for ((_, cache), d) in g.iter().zip(dg) {
            enc.backward(cache, d, &mut grad.encoder);
        }
    }
    for ((_, cache), d) in qry.iter().zip(&d_qry) {
        enc.backward(cache, d, &mut grad.encoder);
    }

    parts.total = parts.video_text + settings.alpha * parts.few_shot;
    Ok((parts, grad))
}

fn few_shot_loss_value(
    params: &ModelParams,
    bank: &Array2<f64>,
    batch: &EpisodeBatch,
    settings: &LossSettings,
) -> Result<f64> {
    let model = ModelView {
        params,
        bank,
        modulation: settings.modulation,
        metric: settings.metric,
    };
    let protos = batch
        .support
        .iter()
        .zip(&batch.class_ids)
        .map(|(g, &c)| model.prototype(&g.iter().map(|x| model.encode(x)).collect::<Result<Vec<_>>>()?, c))
        .collect::<Result<Vec<_>>>()?;
    let mut l = 0.0;
    for (x, &y) in batch.queries.iter().zip(&batch.query_labels) {
        let q = model.query(&model.encode(x)?)?;
        let scores = model.scores(&q, &protos)?;
        l += few_shot_loss_grad(&scores, y)?.0;
    }
    Ok(l / batch.queries.len() as f64)
}

/// Inference-side view of a model: encoding, prototypes and scores without
/// caches.
#[derive(Clone, Copy)]
pub struct ModelView<'a> {
    pub params: &'a ModelParams,
    pub bank: &'a Array2<f64>,
    pub modulation: bool,
    pub metric: MetricKind,
}

impl ModelView<'_> {
    pub fn encode(&self, frames: &Array2<f64>) -> Result<FrameFeatures> {
        self.params.encoder.encode_video(frames)
    }

    pub fn text(&self, class_id: usize) -> ArrayView1<'_, f64> {
        self.bank.row(class_id)
    }

    pub fn prototype(&self, shots: &[FrameFeatures], class_id: usize) -> Result<FrameFeatures> {
        let avg = average_support_shots(shots)?;
        if self.modulation {
            modulate_support(&self.params.transformer, &avg, &self.bank.row(class_id).to_owned())
        } else {
            Ok(avg)
        }
    }

    pub fn query(&self, features: &FrameFeatures) -> Result<FrameFeatures> {
        if self.modulation {
            transform_query(&self.params.transformer, features)
        } else {
            Ok(features.clone())
        }
    }

    pub fn scores(&self, query: &FrameFeatures, protos: &[FrameFeatures]) -> Result<Vec<f64>> {
        protos.iter().map(|p| score(&self.metric, query, p)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, sample_episode, Split, SyntheticSpec};
    use crate::engine::config::DataSource;
    use crate::nn::testutil::{numeric_grad, rel_err};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> (RunConfig, Dataset) {
        let spec = SyntheticSpec {
            num_classes: 8,
            samples_per_class: 4,
            frame_dim: 6,
            min_frames: 3,
            max_frames: 6,
            ..SyntheticSpec::default()
        };
        let mut c = RunConfig::with_data(DataSource::Synthetic(spec.clone()), 4);
        c.way = 3;
        c.shot = 2;
        c.queries_per_class = 1;
        c.frames = 3;
        c.embed_dim = 8;
        c.encoder_hidden = 8;
        c.transformer_heads = 2;
        c.transformer_ff_dim = 8;
        c.text_informativeness = 0.5;
        (c, generate_synthetic(&spec).unwrap())
    }

    fn setup(c: &RunConfig, ds: &Dataset) -> (ModelParams, Array2<f64>, TextTargets, EpisodeBatch) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = ModelParams::init(c, ds.frame_dim(), &mut rng).unwrap();
        let bank = text_bank(c, ds).unwrap();
        let targets = TextTargets::new(&bank, ds.classes().base_ids());
        let ep = sample_episode(ds, Split::Base, c.way, c.shot, c.queries_per_class, &mut rng).unwrap();
        let batch = EpisodeBatch::gather(ds, &ep, c.frames, FrameMode::Train, 0.0, &mut rng);
        (p, bank, targets, batch)
    }

    #[test]
    fn params_are_f32_exact_and_named_uniquely() {
        let (c, ds) = tiny();
        let (p, ..) = setup(&c, &ds);
        assert!(p.flatten().iter().all(|&x| x == x as f32 as f64));
        let mut names = Vec::new();
        p.visit("", &mut |n, s, d| {
            assert_eq!(s.iter().product::<usize>(), d.len());
            names.push(n.to_string());
        });
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
        assert!(names.contains(&"log_tau".to_string()));
    }

    #[test]
    fn full_gradient_matches_finite_differences() {
        let (c, ds) = tiny();
        let (p, bank, targets, batch) = setup(&c, &ds);
        for (vt, modulation) in [(true, true), (false, true), (true, false)] {
            let settings = LossSettings {
                metric: c.metric,
                alpha: 0.7,
                video_text: vt,
                modulation,
            };
            let (_, g) = loss_and_grad(&p, &bank, &targets, &batch, &settings).unwrap();
            let x0 = p.flatten();
            let mut f = |x: &[f64]| {
                let mut q = p.clone();
                q.assign_flat(x);
                loss_and_grad(&q, &bank, &targets, &batch, &settings).unwrap().0.total
            };
            let num = numeric_grad(&mut f, &x0, 1e-5);
            let e = rel_err(&g.flatten(), &num);
            assert!(e < 1e-5, "vt={vt} mod={modulation}: rel err {e}");
        }
    }

    #[test]
    fn disabled_terms_are_inert() {
        let (c, ds) = tiny();
        let (p, bank, targets, batch) = setup(&c, &ds);
        let s = LossSettings {
            metric: c.metric,
            alpha: 0.0,
            video_text: true,
            modulation: true,
        };
        let (parts, g) = loss_and_grad(&p, &bank, &targets, &batch, &s).unwrap();
        assert!(parts.few_shot > 0.0);
        assert_eq!(parts.total, parts.video_text);
        // with alpha = 0 the transformer is untouched
        assert!(g.transformer.flatten().iter().all(|&x| x == 0.0));

        let s = LossSettings {
            alpha: 1.0,
            video_text: false,
            ..s
        };
        let (parts, g) = loss_and_grad(&p, &bank, &targets, &batch, &s).unwrap();
        assert_eq!(parts.video_text, 0.0);
        assert_eq!(g.temperature.log_tau(), 0.0);
    }
}
