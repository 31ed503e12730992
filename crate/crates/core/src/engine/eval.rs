//! Multi-episode evaluation on the novel split.
//!
//! Episode `e` draws from its own ChaCha8 stream (`seed`, stream `e`), so the
//! sampled tasks — and thus the report — do not depend on the worker count.

use rayon::prelude::*;

use super::predict::{FsarModel, PredictMode};
use super::train::seeded_rng;
use crate::data::{sample_episode, Dataset, Split};
use crate::error::{FsarError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub way: usize,
    pub shot: usize,
    pub queries_per_class: usize,
    pub episodes: usize,
    pub seed: u64,
    pub mode: PredictMode,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mode: PredictMode,
    pub way: usize,
    pub shot: usize,
    pub episodes: usize,
    pub seed: u64,
    pub correct: usize,
    pub total: usize,
    /// Fraction of queries classified correctly, pooled over episodes.
    pub mean: f64,
    /// 95% normal-approximation half-width from per-episode accuracies.
    pub ci95: f64,
    pub per_episode: Vec<f64>,
}

pub fn evaluate(model: &FsarModel, dataset: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    if opts.episodes == 0 {
        return Err(FsarError::InvalidArgument("need at least one episode".into()));
    }
    model.check_mode(opts.mode)?;
    let run = |e: usize| -> Result<(usize, usize)> {
        let mut rng = seeded_rng(opts.seed, e as u64);
        let ep = sample_episode(dataset, Split::Novel, opts.way, opts.shot, opts.queries_per_class, &mut rng)?;
        let dists = model.predict_episode(dataset, &ep, opts.mode)?;
        let hits = dists
            .iter()
            .zip(&ep.queries)
            .filter(|(d, &(_, y))| d.argmax() == y)
            .count();
        Ok((hits, dists.len()))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| FsarError::InvalidArgument(format!("thread pool: {e}")))?;
    let results: Vec<(usize, usize)> =
        pool.install(|| (0..opts.episodes).into_par_iter().map(run).collect::<Result<Vec<_>>>())?;

    let correct = results.iter().map(|r| r.0).sum();
    let total = results.iter().map(|r| r.1).sum();
    let per_episode: Vec<f64> = results.iter().map(|&(h, n)| h as f64 / n as f64).collect();
    Ok(EvalReport {
        mode: opts.mode,
        way: opts.way,
        shot: opts.shot,
        episodes: opts.episodes,
        seed: opts.seed,
        correct,
        total,
        mean: correct as f64 / total as f64,
        ci95: ci95(&per_episode),
        per_episode,
    })
}

pub fn ci95(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return 0.0;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    1.96 * var.sqrt() / (n as f64).sqrt()
}
