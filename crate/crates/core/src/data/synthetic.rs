use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ClassTable, Dataset, VideoSample};
use crate::error::{FsarError, Result};
use crate::kv::KvFile;

/// How a class's latent vector shows up across a video's frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalPattern {
    /// Every frame carries the class vector.
    Static,
    /// Frames interpolate linearly from the class vector to a second
    /// class-specific vector over the video.
    Drifting,
    /// The class vector plus a sequence of motifs drawn from a pool shared by
    /// all classes; each class has its own motif order, so only the temporal
    /// arrangement of the motif component is class-specific.
    PermutedMotif,
}

const MOTIF_POOL: usize = 4;

impl fmt::Display for TemporalPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TemporalPattern::Static => "static",
            TemporalPattern::Drifting => "drifting",
            TemporalPattern::PermutedMotif => "permuted-motif",
        })
    }
}

impl FromStr for TemporalPattern {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "static" => Ok(TemporalPattern::Static),
            "drifting" => Ok(TemporalPattern::Drifting),
            "permuted-motif" => Ok(TemporalPattern::PermutedMotif),
            other => Err(format!("unknown temporal pattern `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub frame_dim: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub signal_strength: f64,
    pub noise_sigma: f64,
    pub temporal_pattern: TemporalPattern,
    /// Fraction of classes assigned to the base split, rounded to nearest.
    pub base_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 88,
            samples_per_class: 20,
            frame_dim: 32,
            min_frames: 8,
            max_frames: 16,
            signal_strength: 1.0,
            noise_sigma: 0.2,
            temporal_pattern: TemporalPattern::Static,
            base_fraction: 64.0 / 88.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FsarError::InvalidSpec(m.to_string()));
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2");
        }
        if self.samples_per_class == 0 || self.frame_dim == 0 {
            return bad("samples_per_class and frame_dim must be positive");
        }
        if self.min_frames < 1 || self.max_frames < self.min_frames {
            return bad("frame range must satisfy 1 <= min_frames <= max_frames");
        }
        if !(self.signal_strength >= 0.0 && self.signal_strength.is_finite()) {
            return bad("signal_strength must be finite and >= 0");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.base_fraction) {
            return bad("base_fraction must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn num_base(&self) -> usize {
        let n = (self.num_classes as f64 * self.base_fraction).round() as usize;
        n.clamp(1, self.num_classes - 1)
    }

    /// Reads keys `<prefix>num_classes`, `<prefix>seed`, ... from `kv`.
    pub fn read_kv(kv: &mut KvFile, prefix: &str) -> Result<Self> {
        let d = Self::default();
        let k = |name: &str| format!("{prefix}{name}");
        let spec = Self {
            num_classes: kv.take(&k("num_classes"), d.num_classes)?,
            samples_per_class: kv.take(&k("samples_per_class"), d.samples_per_class)?,
            frame_dim: kv.take(&k("frame_dim"), d.frame_dim)?,
            min_frames: kv.take(&k("min_frames"), d.min_frames)?,
            max_frames: kv.take(&k("max_frames"), d.max_frames)?,
            signal_strength: kv.take(&k("signal_strength"), d.signal_strength)?,
            noise_sigma: kv.take(&k("noise_sigma"), d.noise_sigma)?,
            temporal_pattern: kv.take(&k("temporal_pattern"), d.temporal_pattern)?,
            base_fraction: kv.take(&k("base_fraction"), d.base_fraction)?,
            seed: kv.take(&k("seed"), d.seed)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn write_kv(&self, out: &mut String, prefix: &str) {
        let mut put = |name: &str, v: &dyn fmt::Display| {
            let _ = writeln!(out, "{prefix}{name} = {v}");
        };
        put("num_classes", &self.num_classes);
        put("samples_per_class", &self.samples_per_class);
        put("frame_dim", &self.frame_dim);
        put("min_frames", &self.min_frames);
        put("max_frames", &self.max_frames);
        put("signal_strength", &self.signal_strength);
        put("noise_sigma", &self.noise_sigma);
        put("temporal_pattern", &self.temporal_pattern);
        put("base_fraction", &self.base_fraction);
        put("seed", &self.seed);
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
        .collect()
}

/// Builds a seed-deterministic dataset from `spec`.
///
/// Each class gets a latent vector with entries `N(0, 1/D)` (unit norm in
/// expectation). Frame `k` of a video is
/// `signal_strength * pattern_k(class) + noise_sigma * N(0, I)`, rounded to
/// `f32`. The latent vectors are kept as the dataset's class descriptors.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.frame_dim;
    let scale = 1.0 / (dim as f64).sqrt();

    let class_vecs: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| gaussian_vec(&mut rng, dim, scale))
        .collect();
    let drift_vecs: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| gaussian_vec(&mut rng, dim, scale))
        .collect();
    let motifs: Vec<Vec<f64>> = (0..MOTIF_POOL)
        .map(|_| gaussian_vec(&mut rng, dim, scale))
        .collect();
    let motif_orders: Vec<Vec<usize>> = (0..spec.num_classes)
        .map(|_| {
            let mut order: Vec<usize> = (0..MOTIF_POOL).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect();

    let mut perm: Vec<usize> = (0..spec.num_classes).collect();
    perm.shuffle(&mut rng);
    let nb = spec.num_base();
    let base_ids = perm[..nb].to_vec();
    let novel_ids = perm[nb..].to_vec();
    let names = (0..spec.num_classes).map(|c| format!("class_{c:03}")).collect();
    let classes = ClassTable::new(names, base_ids, novel_ids)?;

    let mut samples = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    let mut video_id = 0u32;
    for class_id in 0..spec.num_classes {
        for _ in 0..spec.samples_per_class {
            let len = rng.random_range(spec.min_frames..=spec.max_frames);
            let mut frames = Array2::<f32>::zeros((len, dim));
            for k in 0..len {
                let pos = if len > 1 { k as f64 / (len - 1) as f64 } else { 0.0 };
                let motif = &motifs[motif_orders[class_id][(k * MOTIF_POOL) / len]];
                for d in 0..dim {
                    let u = class_vecs[class_id][d];
                    let pattern = match spec.temporal_pattern {
                        TemporalPattern::Static => u,
                        TemporalPattern::Drifting => (1.0 - pos) * u + pos * drift_vecs[class_id][d],
                        TemporalPattern::PermutedMotif => u + motif[d],
                    };
                    let noise = if spec.noise_sigma > 0.0 {
                        spec.noise_sigma * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        0.0
                    };
                    frames[[k, d]] = (spec.signal_strength * pattern + noise) as f32;
                }
            }
            samples.push(VideoSample {
                video_id,
                class_id,
                frames,
            });
            video_id += 1;
        }
    }

    let mut descriptors = Array2::<f32>::zeros((spec.num_classes, dim));
    for (c, v) in class_vecs.iter().enumerate() {
        for (d, &x) in v.iter().enumerate() {
            descriptors[[c, d]] = x as f32;
        }
    }
    Dataset::new(dim, classes, samples, Some(descriptors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_static_samples_coincide() {
        let spec = SyntheticSpec {
            num_classes: 4,
            samples_per_class: 5,
            noise_sigma: 0.0,
            min_frames: 6,
            max_frames: 9,
            ..SyntheticSpec::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let desc = ds.descriptors().unwrap();
        for c in 0..4 {
            for &i in ds.class_samples(c) {
                for row in ds.sample(i).frames.rows() {
                    // mean of identical frames equals the class vector exactly
                    assert_eq!(row, desc.row(c));
                }
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let spec = SyntheticSpec {
            num_classes: 6,
            samples_per_class: 3,
            temporal_pattern: TemporalPattern::PermutedMotif,
            seed: 42,
            ..SyntheticSpec::default()
        };
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
        let other = SyntheticSpec { seed: 43, ..spec.clone() };
        assert_ne!(generate_synthetic(&spec).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn split_sizes_follow_fraction() {
        let spec = SyntheticSpec {
            num_classes: 30,
            samples_per_class: 2,
            base_fraction: 2.0 / 3.0,
            ..SyntheticSpec::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        assert_eq!(ds.classes().base_ids().len(), 20);
        assert_eq!(ds.classes().novel_ids().len(), 10);
        let d = SyntheticSpec::default();
        assert_eq!(d.num_base(), 64);
        assert_eq!(ds.classes().name(7), "class_007");
    }

    #[test]
    fn zero_strength_frames_are_pure_noise() {
        let spec = SyntheticSpec {
            num_classes: 3,
            samples_per_class: 2,
            signal_strength: 0.0,
            noise_sigma: 0.0,
            ..SyntheticSpec::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        assert!(ds.samples().iter().all(|s| s.frames.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn rejects_invalid_specs() {
        for spec in [
            SyntheticSpec { min_frames: 0, ..SyntheticSpec::default() },
            SyntheticSpec { max_frames: 2, min_frames: 3, ..SyntheticSpec::default() },
            SyntheticSpec { noise_sigma: -1.0, ..SyntheticSpec::default() },
            SyntheticSpec { num_classes: 1, ..SyntheticSpec::default() },
        ] {
            assert!(matches!(generate_synthetic(&spec), Err(FsarError::InvalidSpec(_))));
        }
    }

    #[test]
    fn kv_round_trip() {
        let spec = SyntheticSpec {
            temporal_pattern: TemporalPattern::Drifting,
            noise_sigma: 0.35,
            seed: 7,
            ..SyntheticSpec::default()
        };
        let mut text = String::new();
        spec.write_kv(&mut text, "data.");
        let mut kv = KvFile::parse(&text).unwrap();
        assert_eq!(SyntheticSpec::read_kv(&mut kv, "data.").unwrap(), spec);
        kv.finish().unwrap();
    }
}
