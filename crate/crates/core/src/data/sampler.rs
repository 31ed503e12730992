use rand::seq::index;
use rand::Rng;

use super::{Dataset, Split, VideoSample};
use crate::error::{FsarError, Result};

/// One N-way K-shot task. Sample references are indices into the dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub way: usize,
    pub shot: usize,
    /// `way` groups of `shot` sample indices; group order defines local labels.
    pub support: Vec<Vec<usize>>,
    /// `(sample index, local label)`.
    pub queries: Vec<(usize, usize)>,
    pub global_class_ids: Vec<usize>,
}

/// Draws an N-way K-shot episode with `queries_per_class` queries per class.
///
/// Every class in the split must hold at least `shot + queries_per_class`
/// samples; the check runs over the whole split before any draw so that the
/// error does not depend on the rng.
pub fn sample_episode<R: Rng + ?Sized>(
    dataset: &Dataset,
    split: Split,
    way: usize,
    shot: usize,
    queries_per_class: usize,
    rng: &mut R,
) -> Result<Episode> {
    if way == 0 || shot == 0 {
        return Err(FsarError::InvalidArgument("way and shot must be positive".into()));
    }
    let ids = dataset.classes().split_ids(split);
    if ids.len() < way {
        return Err(FsarError::InsufficientClasses {
            split: split.to_string(),
            available: ids.len(),
            needed: way,
        });
    }
    let needed = shot + queries_per_class;
    for &class_id in ids {
        let available = dataset.class_samples(class_id).len();
        if available < needed {
            return Err(FsarError::InsufficientSamples {
                split: split.to_string(),
                class_id,
                class_name: dataset.classes().name(class_id).to_string(),
                available,
                needed,
            });
        }
    }

    let chosen = index::sample(rng, ids.len(), way);
    let mut support = Vec::with_capacity(way);
    let mut queries = Vec::with_capacity(way * queries_per_class);
    let mut global_class_ids = Vec::with_capacity(way);
    for (local, pos) in chosen.iter().enumerate() {
        let class_id = ids[pos];
        let pool = dataset.class_samples(class_id);
        let picks = index::sample(rng, pool.len(), needed);
        let picks: Vec<usize> = picks.iter().map(|i| pool[i]).collect();
        support.push(picks[..shot].to_vec());
        queries.extend(picks[shot..].iter().map(|&s| (s, local)));
        global_class_ids.push(class_id);
    }
    Ok(Episode {
        way,
        shot,
        support,
        queries,
        global_class_ids,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameMode {
    Train,
    Eval,
}

/// Segment-based sparse sampling: the `L`-frame timeline is split into `t`
/// equal segments; eval picks each segment's center `floor((k + 0.5) L / t)`,
/// train picks a uniform frame inside the segment. When `L < t` segments
/// collapse onto shared frames, so indices repeat instead of padding.
pub fn sparse_sample_frames<R: Rng + ?Sized>(
    sample: &VideoSample,
    t: usize,
    mode: FrameMode,
    rng: &mut R,
) -> Vec<usize> {
    frame_indices(sample.len(), t, mode, rng)
}

pub(crate) fn frame_indices<R: Rng + ?Sized>(
    len: usize,
    t: usize,
    mode: FrameMode,
    rng: &mut R,
) -> Vec<usize> {
    assert!(t >= 1 && len >= 1, "frame sampling needs t >= 1 and L >= 1");
    (0..t)
        .map(|k| match mode {
            FrameMode::Eval => ((2 * k + 1) * len) / (2 * t),
            FrameMode::Train => {
                let start = (k * len) / t;
                let end = (((k + 1) * len) / t).max(start + 1);
                rng.random_range(start..end)
            }
        })
        .map(|i| i.min(len - 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn eval_idx(len: usize, t: usize) -> Vec<usize> {
        frame_indices(len, t, FrameMode::Eval, &mut ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn eval_centers() {
        assert_eq!(eval_idx(16, 8), vec![1, 3, 5, 7, 9, 11, 13, 15]);
        assert_eq!(eval_idx(8, 8), (0..8).collect::<Vec<_>>());
        // floor((k + 0.5) * 3 / 8) for k = 0..7
        assert_eq!(eval_idx(3, 8), vec![0, 0, 0, 1, 1, 2, 2, 2]);
        assert_eq!(eval_idx(1, 4), vec![0, 0, 0, 0]);
    }

    #[test]
    fn train_mode_stays_in_segment() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let idx = frame_indices(40, 8, FrameMode::Train, &mut rng);
            for (k, &i) in idx.iter().enumerate() {
                assert!((5 * k..5 * k + 5).contains(&i));
            }
        }
    }

    fn small_dataset() -> Dataset {
        let spec = SyntheticSpec {
            num_classes: 10,
            samples_per_class: 4,
            base_fraction: 0.5,
            ..SyntheticSpec::default()
        };
        generate_synthetic(&spec).unwrap()
    }

    #[test]
    fn episode_shapes() {
        let ds = small_dataset();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ep = sample_episode(&ds, Split::Novel, 5, 1, 1, &mut rng).unwrap();
        assert_eq!(ep.support.len(), 5);
        assert_eq!(ep.queries.len(), 5);
        let ep = sample_episode(&ds, Split::Base, 5, 3, 1, &mut rng).unwrap();
        assert!(ep.support.iter().all(|g| g.len() == 3));
        for (g, &cid) in ep.support.iter().zip(&ep.global_class_ids) {
            assert!(g.iter().all(|&i| ds.sample(i).class_id == cid));
        }
        for &(q, label) in &ep.queries {
            assert_eq!(ds.sample(q).class_id, ep.global_class_ids[label]);
            assert!(!ep.support[label].contains(&q));
        }
    }

    #[test]
    fn insufficient_errors_name_the_split() {
        let ds = small_dataset();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        match sample_episode(&ds, Split::Novel, 6, 1, 1, &mut rng) {
            Err(FsarError::InsufficientClasses { split, available, .. }) => {
                assert_eq!(split, "novel");
                assert_eq!(available, 5);
            }
            other => panic!("unexpected {other:?}"),
        }
        match sample_episode(&ds, Split::Base, 2, 3, 2, &mut rng) {
            Err(FsarError::InsufficientSamples { split, available, needed, .. }) => {
                assert_eq!(split, "base");
                assert_eq!((available, needed), (4, 5));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn same_seed_same_episode() {
        let ds = small_dataset();
        let a = sample_episode(&ds, Split::Base, 3, 2, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_episode(&ds, Split::Base, 3, 2, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn class_coverage_is_uniform() {
        let ds = small_dataset();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000;
        let mut counts = vec![0usize; ds.classes().len()];
        for _ in 0..draws {
            let ep = sample_episode(&ds, Split::Base, 2, 1, 1, &mut rng).unwrap();
            for &c in &ep.global_class_ids {
                counts[c] += 1;
            }
        }
        // each of 5 base classes is picked with probability 2/5 per draw
        let p = 2.0 / 5.0;
        let mean = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for &c in ds.classes().base_ids() {
            assert!((counts[c] as f64 - mean).abs() <= 5.0 * sd, "class {c}: {}", counts[c]);
        }
    }

    proptest::proptest! {
        #[test]
        fn indices_monotone_and_in_range(len in 1usize..64, t in 1usize..32, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for mode in [FrameMode::Train, FrameMode::Eval] {
                let idx = frame_indices(len, t, mode, &mut rng);
                proptest::prop_assert_eq!(idx.len(), t);
                proptest::prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
                proptest::prop_assert!(idx.iter().all(|&i| i < len));
            }
        }

        #[test]
        fn eval_ignores_rng(len in 1usize..64, t in 1usize..32, s1 in 0u64..100, s2 in 0u64..100) {
            let a = frame_indices(len, t, FrameMode::Eval, &mut ChaCha8Rng::seed_from_u64(s1));
            let b = frame_indices(len, t, FrameMode::Eval, &mut ChaCha8Rng::seed_from_u64(s2));
            proptest::prop_assert_eq!(a, b);
        }
    }
}
