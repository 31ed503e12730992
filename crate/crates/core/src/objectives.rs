//! Probability heads and losses.
//!
//! * video-text head: softmax over `cos(GAP(f_v), w_j) / tau`;
//! * few-shot head: softmax over raw alignment similarities;
//! * ensemble: `p_vt^beta * p_fs^(1 - beta)`, renormalized;
//! * joint loss: `L_vt + alpha * L_fs`.
//!
//! Every log is taken of `max(p, PROB_FLOOR)`.

use ndarray::{Array1, Array2, ArrayView1};

use crate::encoders::{cosine_backward, cosine_similarity, gap, gap_backward, FrameFeatures};
use crate::error::{FsarError, Result};

pub const PROB_FLOOR: f64 = 1e-12;
pub const TAU_MIN: f64 = 1e-3;
pub const TAU_MAX: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution {
    pub probs: Vec<f64>,
    pub class_ids: Vec<usize>,
}

impl ClassDistribution {
    pub fn argmax(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, &p)| if p > b.1 { (i, p) } else { b })
            .0
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Learnable temperature stored as `ln tau`, kept within `[TAU_MIN, TAU_MAX]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature {
    log_tau: f64,
}

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if !(TAU_MIN..=TAU_MAX).contains(&tau) {
            return Err(FsarError::InvalidConfig(format!(
                "temperature {tau} outside [{TAU_MIN}, {TAU_MAX}]"
            )));
        }
        Ok(Self { log_tau: tau.ln() })
    }

    pub fn from_log(log_tau: f64) -> Self {
        let mut t = Self { log_tau };
        t.clamp();
        t
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    pub fn log_tau(&self) -> f64 {
        self.log_tau
    }

    pub fn log_tau_mut(&mut self) -> &mut f64 {
        &mut self.log_tau
    }

    pub fn clamp(&mut self) {
        self.log_tau = self.log_tau.clamp(TAU_MIN.ln(), TAU_MAX.ln());
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(FsarError::InvalidConfig("alpha must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(FsarError::InvalidConfig("beta must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.25 }
    }
}

/// Stable softmax; returns probabilities and the log-sum-exp.
fn softmax(logits: &[f64]) -> (Vec<f64>, f64) {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    (exps.iter().map(|e| e / s).collect(), m + s.ln())
}

fn floored_nll(p: f64) -> f64 {
    -p.max(PROB_FLOOR).ln()
}

fn check_texts(texts: &Array2<f64>, class_ids: &[usize], dim: usize) -> Result<()> {
    if texts.nrows() == 0 {
        return Err(FsarError::InvalidArgument("video-text head needs at least one class".into()));
    }
    if texts.nrows() != class_ids.len() {
        return Err(FsarError::ClassSetMismatch);
    }
    if texts.ncols() != dim {
        return Err(FsarError::DimensionMismatch(format!(
            "text dim {} vs video feature dim {dim}",
            texts.ncols()
        )));
    }
    Ok(())
}

fn vt_logits(pooled: ArrayView1<f64>, texts: &Array2<f64>, tau: f64) -> Result<Vec<f64>> {
    texts
        .rows()
        .into_iter()
        .map(|w| {
            cosine_similarity(pooled, w)
                .map(|c| c / tau)
                .map_err(|_| FsarError::ZeroVector("pooled video feature or text feature".into()))
        })
        .collect()
}

/// Video-text matching distribution over the classes whose text vectors are
/// the rows of `texts` (base classes in training, episode classes at test).
pub fn video_text_probs(
    video_feat: &FrameFeatures,
    texts: &Array2<f64>,
    class_ids: &[usize],
    tau: Temperature,
) -> Result<ClassDistribution> {
    check_texts(texts, class_ids, video_feat.ncols())?;
    let logits = vt_logits(gap(video_feat).view(), texts, tau.tau())?;
    Ok(ClassDistribution {
        probs: softmax(&logits).0,
        class_ids: class_ids.to_vec(),
    })
}

/// Mean cross-entropy of the video-text head over a batch of videos.
/// `labels[i]` indexes a row of `texts`.
pub fn video_text_loss(features: &[FrameFeatures], labels: &[usize], texts: &Array2<f64>, tau: Temperature) -> Result<f64> {
    Ok(video_text_loss_grad(features, labels, texts, tau)?.0)
}

/// [`video_text_loss`] plus gradients w.r.t. each feature matrix and `ln tau`.
pub fn video_text_loss_grad(
    features: &[FrameFeatures],
    labels: &[usize],
    texts: &Array2<f64>,
    tau: Temperature,
) -> Result<(f64, Vec<Array2<f64>>, f64)> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(FsarError::InvalidArgument("one label per video, at least one video".into()));
    }
    let ids: Vec<usize> = (0..texts.nrows()).collect();
    let n = features.len() as f64;
    let t = tau.tau();
    let mut loss = 0.0;
    let mut d_log_tau = 0.0;
    let mut grads = Vec::with_capacity(features.len());
    for (f, &y) in features.iter().zip(labels) {
        check_texts(texts, &ids, f.ncols())?;
        if y >= texts.nrows() {
            return Err(FsarError::LabelOutOfRange {
                label: y,
                classes: texts.nrows(),
            });
        }
        let pooled = gap(f);
        let logits = vt_logits(pooled.view(), texts, t)?;
        let (p, _) = softmax(&logits);
        loss += floored_nll(p[y]);
        let mut d_pooled = Array1::zeros(pooled.len());
        if p[y] >= PROB_FLOOR {
            for (j, w) in texts.rows().into_iter().enumerate() {
                // dL/dlogit_j = p_j - [j == y]; logit_j = cos_j / tau
                let dz = (p[j] - if j == y { 1.0 } else { 0.0 }) / n;
                let (dc, _) = cosine_backward(pooled.view(), w);
                d_pooled.scaled_add(dz / t, &dc);
                d_log_tau -= dz * logits[j];
            }
        }
        grads.push(gap_backward(f.nrows(), &d_pooled));
    }
    Ok((loss / n, grads, d_log_tau))
}

/// Softmax of raw similarities (no temperature).
pub fn few_shot_probs(scores: &[f64], class_ids: &[usize]) -> Result<ClassDistribution> {
    if scores.len() < 2 {
        return Err(FsarError::InvalidArgument("few-shot head needs at least two classes".into()));
    }
    if scores.len() != class_ids.len() {
        return Err(FsarError::ClassSetMismatch);
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(FsarError::NonFinite(format!("similarity score {s}")));
    }
    Ok(ClassDistribution {
        probs: softmax(scores).0,
        class_ids: class_ids.to_vec(),
    })
}

pub fn few_shot_loss(dist: &ClassDistribution, true_local_label: usize) -> Result<f64> {
    if true_local_label >= dist.len() {
        return Err(FsarError::LabelOutOfRange {
            label: true_local_label,
            classes: dist.len(),
        });
    }
    Ok(floored_nll(dist.probs[true_local_label]))
}

/// Few-shot cross-entropy and its gradient w.r.t. the raw scores.
pub fn few_shot_loss_grad(scores: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    let ids: Vec<usize> = (0..scores.len()).collect();
    let dist = few_shot_probs(scores, &ids)?;
    let loss = few_shot_loss(&dist, label)?;
    let grad = if dist.probs[label] >= PROB_FLOOR {
        dist.probs
            .iter()
            .enumerate()
            .map(|(j, &p)| p - if j == label { 1.0 } else { 0.0 })
            .collect()
    } else {
        vec![0.0; scores.len()]
    };
    Ok((loss, grad))
}

pub fn joint_loss(l_vt: f64, l_fs: f64, alpha: f64) -> f64 {
    l_vt + alpha * l_fs
}

/// Geometric mix of the two heads, renormalized over the episode classes.
/// The endpoints return the corresponding input unchanged.
pub fn ensemble_probs(p_vt: &ClassDistribution, p_fs: &ClassDistribution, beta: f64) -> Result<ClassDistribution> {
    if p_vt.class_ids != p_fs.class_ids || p_vt.len() != p_fs.len() {
        return Err(FsarError::ClassSetMismatch);
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(FsarError::InvalidArgument(format!("beta {beta} outside [0, 1]")));
    }
    if beta == 0.0 {
        return Ok(p_fs.clone());
    }
    if beta == 1.0 {
        return Ok(p_vt.clone());
    }
    let logs: Vec<f64> = p_vt
        .probs
        .iter()
        .zip(&p_fs.probs)
        .map(|(&a, &b)| beta * a.max(PROB_FLOOR).ln() + (1.0 - beta) * b.max(PROB_FLOOR).ln())
        .collect();
    Ok(ClassDistribution {
        probs: softmax(&logs).0,
        class_ids: p_vt.class_ids.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{numeric_grad, rel_err};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn dist(p: &[f64]) -> ClassDistribution {
        ClassDistribution {
            probs: p.to_vec(),
            class_ids: (0..p.len()).collect(),
        }
    }

    #[test]
    fn temperature_bounds() {
        let t = Temperature::new(0.07).unwrap();
        assert!((t.tau() - 0.07).abs() < 1e-15);
        assert!(Temperature::new(0.0).is_err());
        assert!(Temperature::new(1e3).is_err());
        assert!((Temperature::from_log(50.0).tau() - TAU_MAX).abs() < 1e-9);
        assert!((Temperature::from_log(-50.0).tau() - TAU_MIN).abs() < 1e-15);
    }

    #[test]
    fn video_text_examples() {
        let tau = Temperature::new(0.07).unwrap();
        let w = array![[1.0, 0.0], [1.0, 0.0]];
        let v = array![[0.3, 0.9], [0.1, -0.2]];
        let p = video_text_probs(&v, &w, &[4, 9], tau).unwrap();
        assert_eq!(p.probs, vec![0.5, 0.5]);
        assert_eq!(p.class_ids, vec![4, 9]);

        let w = array![[1.0, 0.0], [0.0, 1.0]];
        let v = array![[1.0, 0.0]];
        let p = video_text_probs(&v, &w, &[0, 1], tau).unwrap();
        // e^{1/0.07} / (e^{1/0.07} + 1)
        let expected_small = 1.0 / (1.0 + (1.0f64 / 0.07).exp());
        assert!((p.probs[1] - expected_small).abs() < 1e-18);
        assert!((p.probs[1] - 6.3e-7).abs() < 0.1e-7);

        let hot = Temperature::new(100.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let texts = Array2::from_shape_fn((5, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let vid = Array2::from_shape_fn((4, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let p = video_text_probs(&vid, &texts, &[0, 1, 2, 3, 4], hot).unwrap();
        assert!(p.probs.iter().all(|&q| (q - 0.2).abs() <= 1e-2));

        assert!(matches!(
            video_text_probs(&array![[0.0, 0.0]], &w, &[0, 1], tau),
            Err(FsarError::ZeroVector(_))
        ));
    }

    #[test]
    fn video_text_loss_cases() {
        let tau = Temperature::new(TAU_MIN).unwrap();
        let w = array![[1.0, 0.0], [0.0, 1.0]];
        let v = vec![array![[1.0, 0.0]], array![[0.0, 2.0]]];
        // tau = 1e-3 makes the prediction one-hot up to e^{-1000}
        assert_eq!(video_text_loss(&v, &[0, 1], &w, tau).unwrap(), 0.0);

        let same = Array2::from_shape_fn((4, 2), |_| 1.0);
        let l = video_text_loss(&[array![[0.2, 0.5]]], &[2], &same, Temperature::new(1.0).unwrap()).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!(matches!(
            video_text_loss(&v, &[0, 2], &w, tau),
            Err(FsarError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn video_text_gradient_and_descent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let texts = Array2::from_shape_fn((4, 5), |_| rng.sample::<f64, _>(StandardNormal));
        let feats: Vec<Array2<f64>> = (0..3)
            .map(|_| Array2::from_shape_fn((3, 5), |_| rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let labels = [1, 3, 0];
        let tau = Temperature::new(0.5).unwrap();
        let (loss, grads, dlt) = video_text_loss_grad(&feats, &labels, &texts, tau).unwrap();

        let mut flat: Vec<f64> = feats.iter().flat_map(|f| f.iter().copied()).collect();
        flat.push(tau.log_tau());
        let mut f = |p: &[f64]| {
            let fs: Vec<Array2<f64>> = (0..3)
                .map(|i| Array2::from_shape_vec((3, 5), p[i * 15..(i + 1) * 15].to_vec()).unwrap())
                .collect();
            video_text_loss(&fs, &labels, &texts, Temperature::from_log(p[45])).unwrap()
        };
        let num = numeric_grad(&mut f, &flat, 1e-5);
        let mut analytic: Vec<f64> = grads.iter().flat_map(|g| g.iter().copied()).collect();
        analytic.push(dlt);
        assert!(rel_err(&analytic, &num) <= 1e-4);

        // one plain gradient step lowers the loss
        let stepped: Vec<f64> = flat.iter().zip(&analytic).map(|(p, g)| p - 0.05 * g).collect();
        assert!(f(&stepped) < loss);
    }

    #[test]
    fn few_shot_examples() {
        assert_eq!(few_shot_probs(&[0.0, 0.0], &[0, 1]).unwrap().probs, vec![0.5, 0.5]);
        let p = few_shot_probs(&[1.0, 0.0, 0.0], &[0, 1, 2]).unwrap().probs;
        let e = 1f64.exp();
        let expected = [e / (e + 2.0), 1.0 / (e + 2.0), 1.0 / (e + 2.0)];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((p[0] - 0.576).abs() < 5e-4 && (p[1] - 0.212).abs() < 5e-4);
        let shifted = few_shot_probs(&[1001.0, 1000.0, 1000.0], &[0, 1, 2]).unwrap().probs;
        for (a, b) in p.iter().zip(&shifted) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!(matches!(few_shot_probs(&[f64::NAN, 0.0], &[0, 1]), Err(FsarError::NonFinite(_))));
        assert!(few_shot_probs(&[1.0], &[0]).is_err());
    }

    #[test]
    fn few_shot_loss_cases() {
        assert_eq!(few_shot_loss(&dist(&[0.0, 1.0, 0.0]), 1).unwrap(), 0.0);
        assert!((few_shot_loss(&dist(&[0.2; 5]), 3).unwrap() - 5f64.ln()).abs() < 1e-12);
        let wrong = few_shot_loss(&dist(&[1.0, 0.0]), 1).unwrap();
        assert!(wrong.is_finite());
        assert!((wrong + PROB_FLOOR.ln()).abs() < 1e-12);
        assert!(few_shot_loss(&dist(&[0.5, 0.5]), 2).is_err());
    }

    #[test]
    fn few_shot_gradient() {
        let scores = [-0.3, -1.2, -0.1, -2.0];
        let (_, g) = few_shot_loss_grad(&scores, 2).unwrap();
        let mut f = |s: &[f64]| few_shot_loss_grad(s, 2).unwrap().0;
        assert!(rel_err(&g, &numeric_grad(&mut f, &scores, 1e-6)) < 1e-8);
    }

    #[test]
    fn joint_loss_cases() {
        assert_eq!(joint_loss(0.3, 9.0, 0.0), 0.3);
        assert_eq!(joint_loss(0.5, 0.25, 1.0), 0.75);
        let (a, l_vt, l_fs) = (0.7, 0.4, 1.3);
        let lhs = joint_loss(l_vt, l_fs, 2.0 * a) - joint_loss(l_vt, l_fs, 0.0);
        let rhs = 2.0 * (joint_loss(l_vt, l_fs, a) - joint_loss(l_vt, l_fs, 0.0));
        assert!((lhs - rhs).abs() < 1e-15);
    }

    #[test]
    fn ensemble_cases() {
        let vt = dist(&[0.8, 0.2]);
        let fs = dist(&[0.2, 0.8]);
        assert_eq!(ensemble_probs(&vt, &fs, 0.0).unwrap(), fs);
        assert_eq!(ensemble_probs(&vt, &fs, 1.0).unwrap(), vt);
        let mid = ensemble_probs(&vt, &fs, 0.5).unwrap();
        assert!((mid.probs[0] - 0.5).abs() < 1e-15 && (mid.probs[1] - 0.5).abs() < 1e-15);
        let other = ClassDistribution {
            probs: vec![0.5, 0.5],
            class_ids: vec![0, 7],
        };
        assert!(matches!(ensemble_probs(&vt, &other, 0.5), Err(FsarError::ClassSetMismatch)));
    }

    proptest::proptest! {
        #[test]
        fn argmax_survives_positive_scaling(
            scores in proptest::collection::vec(-5.0f64..0.0, 2..8),
            k in 0.01f64..100.0,
        ) {
            let ids: Vec<usize> = (0..scores.len()).collect();
            let a = few_shot_probs(&scores, &ids).unwrap();
            let scaled: Vec<f64> = scores.iter().map(|s| s * k).collect();
            let b = few_shot_probs(&scaled, &ids).unwrap();
            proptest::prop_assert_eq!(a.argmax(), b.argmax());
        }
    }
}
