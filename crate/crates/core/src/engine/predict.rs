//! Test-time inference on one episode.

use std::fmt;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::model::{select_frames, text_bank, ModelParams, ModelView};
use crate::data::{sparse_sample_frames, Dataset, Episode, FrameMode};
use crate::encoders::FrameFeatures;
use crate::error::{FsarError, Result};
use crate::objectives::{ensemble_probs, few_shot_probs, video_text_probs, ClassDistribution};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictMode {
    FewShot,
    /// Geometric mix with weight `beta` on the video-text head.
    Ensemble(f64),
    ZeroShot,
}

impl PredictMode {
    pub fn name(&self) -> &'static str {
        match self {
            PredictMode::FewShot => "fewshot",
            PredictMode::Ensemble(_) => "ensemble",
            PredictMode::ZeroShot => "zeroshot",
        }
    }

    fn uses_text_head(&self) -> bool {
        !matches!(self, PredictMode::FewShot)
    }
}

impl fmt::Display for PredictMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictMode::Ensemble(b) => write!(f, "ensemble(beta={b})"),
            m => f.write_str(m.name()),
        }
    }
}

/// A trained model bound to a dataset's class texts.
#[derive(Debug, Clone)]
pub struct FsarModel {
    pub config: RunConfig,
    pub params: ModelParams,
    pub bank: Array2<f64>,
}

impl FsarModel {
    pub fn new(config: RunConfig, params: ModelParams, dataset: &Dataset) -> Result<Self> {
        if params.raw_dim() != dataset.frame_dim() {
            return Err(FsarError::DimensionMismatch(format!(
                "model expects {}-dim frames, dataset has {}",
                params.raw_dim(),
                dataset.frame_dim()
            )));
        }
        let bank = text_bank(&config, dataset)?;
        Ok(Self { config, params, bank })
    }

    pub fn from_checkpoint(ckpt: Checkpoint, dataset: &Dataset) -> Result<Self> {
        Self::new(ckpt.config, ckpt.params, dataset)
    }

    pub fn view(&self) -> ModelView<'_> {
        ModelView {
            params: &self.params,
            bank: &self.bank,
            modulation: !self.config.ablate_modulation,
            metric: self.config.metric,
        }
    }

    pub fn check_mode(&self, mode: PredictMode) -> Result<()> {
        if let PredictMode::Ensemble(b) = mode {
            if !(0.0..=1.0).contains(&b) {
                return Err(FsarError::ModeConflict(format!("ensemble beta {b} outside [0, 1]")));
            }
        }
        if mode.uses_text_head() && self.config.ablate_video_text {
            return Err(FsarError::ModeConflict(format!(
                "{} needs the video-text head, which was ablated in training",
                mode.name()
            )));
        }
        Ok(())
    }

    /// Encoder features of a dataset sample at the deterministic eval frames.
    pub fn features(&self, dataset: &Dataset, sample: usize) -> Result<FrameFeatures> {
        let s = dataset.sample(sample);
        // eval-mode sampling ignores the rng
        let idx = sparse_sample_frames(s, self.config.frames, FrameMode::Eval, &mut ChaCha8Rng::seed_from_u64(0));
        self.view().encode(&select_frames(s, &idx))
    }

    /// One class distribution per query, over `episode.global_class_ids`.
    pub fn predict_episode(
        &self,
        dataset: &Dataset,
        episode: &Episode,
        mode: PredictMode,
    ) -> Result<Vec<ClassDistribution>> {
        self.check_mode(mode)?;
        let view = self.view();
        let ids = &episode.global_class_ids;
        let texts = self.bank.select(Axis(0), ids);
        let protos = if mode == PredictMode::ZeroShot {
            Vec::new()
        } else {
            episode
                .support
                .iter()
                .zip(ids)
                .map(|(g, &c)| {
                    let shots = g.iter().map(|&i| self.features(dataset, i)).collect::<Result<Vec<_>>>()?;
                    view.prototype(&shots, c)
                })
                .collect::<Result<Vec<_>>>()?
        };
        let tau = self.params.temperature;
        episode
            .queries
            .iter()
            .map(|&(i, _)| {
                let f = self.features(dataset, i)?;
                let fs = || -> Result<ClassDistribution> { few_shot_probs(&view.scores(&view.query(&f)?, &protos)?, ids) };
                match mode {
                    PredictMode::FewShot => fs(),
                    PredictMode::ZeroShot => video_text_probs(&f, &texts, ids, tau),
                    PredictMode::Ensemble(beta) => ensemble_probs(&video_text_probs(&f, &texts, ids, tau)?, &fs()?, beta),
                }
            })
            .collect()
    }
}
