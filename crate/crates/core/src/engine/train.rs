//! Episodic training on the base split.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::model::{loss_and_grad, text_bank, EpisodeBatch, LossParts, LossSettings, ModelParams, TextTargets};
use crate::data::{sample_episode, Dataset, FrameMode, Split};
use crate::error::{FsarError, Result};
use crate::nn::Params;
use crate::optim::Adam;

// rng streams derived from the run seed
const INIT_STREAM: u64 = 0;
const EPISODE_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainEvent {
    pub step: usize,
    pub loss: LossParts,
    pub grad_norm: f64,
    pub tau: f64,
}

pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Loads (or generates) the configured dataset and trains on it.
pub fn train(config: &RunConfig) -> Result<Checkpoint> {
    let dataset = config.data.load()?;
    train_on(config, &dataset, |_| {})
}

/// Trains for `config.train_episodes` steps. `observe` sees every step; a
/// non-finite loss aborts with the offending step.
pub fn train_on(config: &RunConfig, dataset: &Dataset, mut observe: impl FnMut(&TrainEvent)) -> Result<Checkpoint> {
    config.validate()?;
    if config.ablate_video_text && config.weights.alpha == 0.0 && config.train_episodes > 0 {
        return Err(FsarError::InvalidConfig(
            "alpha = 0 with the video-text term ablated leaves nothing to train".into(),
        ));
    }
    let mut params = ModelParams::init(config, dataset.frame_dim(), &mut seeded_rng(config.seed, INIT_STREAM))?;
    let bank = text_bank(config, dataset)?;
    let targets = TextTargets::new(&bank, dataset.classes().base_ids());
    let settings = LossSettings::from_config(config);
    let mut opt = Adam::new(config.adam.clone(), params.num_params());
    let mut rng = seeded_rng(config.seed, EPISODE_STREAM);

    for step in 0..config.train_episodes {
        let ep = sample_episode(dataset, Split::Base, config.way, config.shot, config.queries_per_class, &mut rng)?;
        let batch = EpisodeBatch::gather(dataset, &ep, config.frames, FrameMode::Train, config.augment_noise, &mut rng);
        let (loss, grad) = loss_and_grad(&params, &bank, &targets, &batch, &settings)?;
        if !loss.total.is_finite() {
            return Err(FsarError::NonFiniteLoss { step });
        }
        let grad_norm = opt.step(&mut params, &grad);
        params.temperature.clamp();
        params.round_to_f32();
        observe(&TrainEvent {
            step,
            loss,
            grad_norm,
            tau: params.temperature.tau(),
        });
    }
    Ok(Checkpoint {
        config: config.clone(),
        step: config.train_episodes as u64,
        params,
    })
}
