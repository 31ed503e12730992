#![allow(dead_code)]

use fsar::data::{generate_synthetic, Dataset, SyntheticSpec};
use fsar::engine::{DataSource, RunConfig};

/// 20 base + 10 novel classes.
pub fn spec(signal: f64, noise: f64, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        num_classes: 30,
        samples_per_class: 20,
        base_fraction: 2.0 / 3.0,
        signal_strength: signal,
        noise_sigma: noise,
        seed,
        ..SyntheticSpec::default()
    }
}

pub fn config(spec: &SyntheticSpec, seed: u64, episodes: usize) -> RunConfig {
    let mut c = RunConfig::with_data(DataSource::Synthetic(spec.clone()), seed);
    c.train_episodes = episodes;
    c
}

pub fn dataset(spec: &SyntheticSpec) -> Dataset {
    generate_synthetic(spec).expect("valid synthetic spec")
}

/// Small model for fast tests.
pub fn tiny(seed: u64) -> (RunConfig, Dataset) {
    let s = SyntheticSpec {
        num_classes: 12,
        samples_per_class: 6,
        frame_dim: 8,
        min_frames: 4,
        max_frames: 9,
        seed,
        ..SyntheticSpec::default()
    };
    let mut c = config(&s, seed, 40);
    c.frames = 4;
    c.way = 3;
    c.embed_dim = 8;
    c.encoder_hidden = 16;
    c.transformer_heads = 2;
    c.transformer_ff_dim = 16;
    c.adam.lr = 3e-3;
    (c, dataset(&s))
}
