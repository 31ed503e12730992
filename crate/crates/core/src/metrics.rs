//! Temporal alignment similarities between query and support frame features.
//!
//! **Sign convention:** every metric here returns a *similarity*, i.e. a
//! negated alignment cost. Higher means more alike, and the few-shot head
//! exponentiates these values directly. Never feed a raw cost to the head.
//!
//! Frame distance is `1 - cos(q_i, s_j)`, so each cost entry lies in `[0, 2]`.
//!
//! OTAM is a DTW variant whose support axis is padded with a zero-cost
//! column on both sides. A path runs from the top-left pad cell to the
//! bottom-right pad cell. Moves into a cell depend on the cell's column:
//!
//! * first pad column: from above;
//! * interior columns: from the upper-left diagonal or from the left;
//! * last pad column: from the upper-left diagonal, the left, or above.
//!
//! Every support frame is therefore visited exactly once, and the pads let
//! the alignment start and finish anywhere along the query. With
//! `bidirectional`, the same DP on the transposed matrix is added. `min` is
//! replaced by `softmin_λ(x) = -λ log Σ exp(-x / λ)` for `λ > 0`; at `λ = 0`
//! it is the hard minimum with first-index tie-breaking (diagonal, left,
//! above), whose gradient is the non-smooth subgradient along the chosen path.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};

use crate::encoders::{cosine_backward, cosine_similarity, gap, gap_backward, FrameFeatures};
use crate::error::{FsarError, Result};

/// `t_q x t_s` frame-pair distances; entry `(i, j) = 1 - cos(q_i, s_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub values: Array2<f64>,
    q_hat: Array2<f64>,
    s_hat: Array2<f64>,
    q_norm: Array1<f64>,
    s_norm: Array1<f64>,
}

impl CostMatrix {
    /// Wraps raw costs (no feature provenance; backward to features is unavailable).
    pub fn from_values(values: Array2<f64>) -> Self {
        Self {
            values,
            q_hat: Array2::zeros((0, 0)),
            s_hat: Array2::zeros((0, 0)),
            q_norm: Array1::zeros(0),
            s_norm: Array1::zeros(0),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Pulls a gradient on the cost entries back to the two feature matrices.
    pub fn backward(&self, d_cost: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        assert!(self.q_hat.nrows() > 0, "cost matrix was not built from features");
        let dq_hat = -d_cost.dot(&self.s_hat);
        let ds_hat = -d_cost.t().dot(&self.q_hat);
        (
            normalize_backward(&self.q_hat, &self.q_norm, &dq_hat),
            normalize_backward(&self.s_hat, &self.s_norm, &ds_hat),
        )
    }
}

fn normalize_rows(x: &Array2<f64>, what: &str) -> Result<(Array2<f64>, Array1<f64>)> {
    let mut hat = x.clone();
    let mut norms = Array1::zeros(x.nrows());
    for (i, mut row) in hat.rows_mut().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(FsarError::ZeroVector(format!("{what} frame {i}")));
        }
        row /= n;
        norms[i] = n;
    }
    Ok((hat, norms))
}

fn normalize_backward(hat: &Array2<f64>, norms: &Array1<f64>, d_hat: &Array2<f64>) -> Array2<f64> {
    let mut dx = d_hat.clone();
    for i in 0..dx.nrows() {
        let h = hat.row(i);
        let proj = h.dot(&d_hat.row(i));
        let mut r = dx.row_mut(i);
        r.scaled_add(-proj, &h);
        r /= norms[i];
    }
    dx
}

pub fn cost_matrix(fq: &FrameFeatures, fs: &FrameFeatures) -> Result<CostMatrix> {
    if fq.ncols() != fs.ncols() {
        return Err(FsarError::DimensionMismatch(format!(
            "query C = {}, support C = {}",
            fq.ncols(),
            fs.ncols()
        )));
    }
    let (q_hat, q_norm) = normalize_rows(fq, "query")?;
    let (s_hat, s_norm) = normalize_rows(fs, "support")?;
    let values = q_hat.dot(&s_hat.t()).mapv(|c| 1.0 - c.clamp(-1.0, 1.0));
    Ok(CostMatrix {
        values,
        q_hat,
        s_hat,
        q_norm,
        s_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricKind {
    Otam {
        lambda: f64,
        bidirectional: bool,
        /// Zero-cost pads on the support axis; `false` gives plain DTW.
        relaxed: bool,
    },
    BiMhm,
    MeanCosine,
}

impl Default for MetricKind {
    fn default() -> Self {
        MetricKind::Otam {
            lambda: 0.1,
            bidirectional: true,
            relaxed: true,
        }
    }
}

impl MetricKind {
    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Otam { .. } => "otam",
            MetricKind::BiMhm => "bi_mhm",
            MetricKind::MeanCosine => "mean_cosine",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let MetricKind::Otam { lambda, .. } = self {
            if !(*lambda >= 0.0 && lambda.is_finite()) {
                return Err(FsarError::InvalidConfig("otam lambda must be finite and >= 0".into()));
            }
        }
        Ok(())
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses the metric family; OTAM parameters come from separate config keys.
impl FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "otam" => Ok(MetricKind::default()),
            "bi_mhm" => Ok(MetricKind::BiMhm),
            "mean_cosine" => Ok(MetricKind::MeanCosine),
            other => Err(format!("unknown metric `{other}`")),
        }
    }
}

/// Soft (or hard, at `lambda = 0`) minimum plus the weight of each input.
fn softmin(xs: &[f64], lambda: f64) -> (f64, [f64; 3]) {
    let mut w = [0.0; 3];
    let (arg, &m) = xs
        .iter()
        .enumerate()
        .fold((0, &f64::INFINITY), |best, (i, x)| if *x < *best.1 { (i, x) } else { best });
    if lambda == 0.0 {
        w[arg] = 1.0;
        return (m, w);
    }
    let mut sum = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        w[i] = (-(x - m) / lambda).exp();
        sum += w[i];
    }
    for wi in w.iter_mut().take(xs.len()) {
        *wi /= sum;
    }
    (m - lambda * sum.ln(), w)
}

/// Cell coordinates of up to three predecessors, ordered diagonal, left, above.
fn predecessors(i: usize, j: usize, cols: usize, relaxed: bool) -> ([(usize, usize); 3], usize) {
    let mut out = [(0, 0); 3];
    let mut n = 0;
    let last = cols - 1;
    let interior = !relaxed || (j > 0 && j < last);
    if i > 0 && j > 0 {
        out[n] = (i - 1, j - 1);
        n += 1;
    }
    if j > 0 && (interior || j == last) {
        out[n] = (i, j - 1);
        n += 1;
    }
    if i > 0 && (!relaxed || j == 0 || j == last) {
        out[n] = (i - 1, j);
        n += 1;
    }
    (out, n)
}

fn padded(cost: &Array2<f64>, relaxed: bool) -> Array2<f64> {
    if !relaxed {
        return cost.clone();
    }
    let (n, m) = cost.dim();
    let mut p = Array2::zeros((n, m + 2));
    p.slice_mut(ndarray::s![.., 1..=m]).assign(cost);
    p
}

/// Accumulated alignment cost of one direction and its gradient w.r.t. `cost`.
fn dp_one_way(cost: &Array2<f64>, lambda: f64, relaxed: bool, want_grad: bool) -> (f64, Option<Array2<f64>>) {
    let p = padded(cost, relaxed);
    let (rows, cols) = p.dim();
    let mut acc = Array2::<f64>::zeros((rows, cols));
    let mut weights = vec![[0.0f64; 3]; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let (preds, n) = predecessors(i, j, cols, relaxed);
            if n == 0 {
                acc[[i, j]] = p[[i, j]];
                continue;
            }
            let mut vals = [0.0; 3];
            for k in 0..n {
                vals[k] = acc[preds[k]];
            }
            let (sm, w) = softmin(&vals[..n], lambda);
            acc[[i, j]] = p[[i, j]] + sm;
            weights[i * cols + j] = w;
        }
    }
    let total = acc[[rows - 1, cols - 1]];
    if !want_grad {
        return (total, None);
    }
    let mut e = Array2::<f64>::zeros((rows, cols));
    e[[rows - 1, cols - 1]] = 1.0;
    for i in (0..rows).rev() {
        for j in (0..cols).rev() {
            let g = e[[i, j]];
            if g == 0.0 {
                continue;
            }
            let (preds, n) = predecessors(i, j, cols, relaxed);
            let w = weights[i * cols + j];
            for k in 0..n {
                e[preds[k]] += g * w[k];
            }
        }
    }
    let grad = if relaxed {
        e.slice(ndarray::s![.., 1..cols - 1]).to_owned()
    } else {
        e
    };
    (total, Some(grad))
}

fn otam_impl(cost: &Array2<f64>, lambda: f64, bidirectional: bool, relaxed: bool, want_grad: bool) -> (f64, Option<Array2<f64>>) {
    let (fwd, g1) = dp_one_way(cost, lambda, relaxed, want_grad);
    let mut total = fwd;
    let mut grad = g1;
    if bidirectional {
        let t = cost.t().to_owned();
        let (bwd, g2) = dp_one_way(&t, lambda, relaxed, want_grad);
        total += bwd;
        if let (Some(g), Some(g2)) = (grad.as_mut(), g2) {
            *g += &g2.t();
        }
    }
    (-total, grad.map(|g| -g))
}

/// Negated OTAM alignment cost (boundary-relaxed).
pub fn otam_score(cost: &CostMatrix, lambda: f64, bidirectional: bool) -> f64 {
    otam_impl(&cost.values, lambda, bidirectional, true, false).0
}

/// Negated plain-DTW alignment cost (no boundary pads).
pub fn dtw_score(cost: &CostMatrix, lambda: f64, bidirectional: bool) -> f64 {
    otam_impl(&cost.values, lambda, bidirectional, false, false).0
}

/// Bidirectional mean Hausdorff similarity:
/// `-(mean_i min_j c_ij + mean_j min_i c_ij)`. Order-free.
pub fn bi_mhm_score(cost: &CostMatrix) -> f64 {
    bi_mhm_impl(&cost.values, false).0
}

fn bi_mhm_impl(c: &Array2<f64>, want_grad: bool) -> (f64, Option<Array2<f64>>) {
    let (n, m) = c.dim();
    let argmin = |it: ndarray::ArrayView1<f64>| {
        it.iter()
            .enumerate()
            .fold((0, f64::INFINITY), |b, (i, &v)| if v < b.1 { (i, v) } else { b })
    };
    let mut grad = want_grad.then(|| Array2::zeros((n, m)));
    let mut rows = 0.0;
    for (i, r) in c.axis_iter(Axis(0)).enumerate() {
        let (j, v) = argmin(r);
        rows += v;
        if let Some(g) = grad.as_mut() {
            g[[i, j]] -= 1.0 / n as f64;
        }
    }
    let mut cols = 0.0;
    for (j, col) in c.axis_iter(Axis(1)).enumerate() {
        let (i, v) = argmin(col);
        cols += v;
        if let Some(g) = grad.as_mut() {
            g[[i, j]] -= 1.0 / m as f64;
        }
    }
    (-(rows / n as f64 + cols / m as f64), grad)
}

/// Cosine similarity of the temporally pooled features; a ProtoNet-style
/// baseline that ignores frame order.
pub fn mean_cosine_score(fq: &FrameFeatures, fs: &FrameFeatures) -> Result<f64> {
    if fq.ncols() != fs.ncols() {
        return Err(FsarError::DimensionMismatch(format!(
            "query C = {}, support C = {}",
            fq.ncols(),
            fs.ncols()
        )));
    }
    cosine_similarity(gap(fq).view(), gap(fs).view())
}

pub const BRUTE_FORCE_MAX: usize = 7;

/// Exhaustive minimum over every monotone path through the padded matrix,
/// under the same move set as the DP. Exponential; test oracle only.
pub fn brute_force_otam(cost: &CostMatrix, bidirectional: bool) -> Result<f64> {
    let (n, m) = cost.dim();
    if n > BRUTE_FORCE_MAX || m > BRUTE_FORCE_MAX {
        return Err(FsarError::SizeExceeded { rows: n, cols: m });
    }
    let mut total = enumerate_min(&padded(&cost.values, true));
    if bidirectional {
        total += enumerate_min(&padded(&cost.values.t().to_owned(), true));
    }
    Ok(-total)
}

fn enumerate_min(p: &Array2<f64>) -> f64 {
    let (rows, cols) = p.dim();
    let last = cols - 1;
    let mut best = f64::INFINITY;
    // explicit stack of (cell, cost so far including the cell)
    let mut stack = vec![((0usize, 0usize), p[[0, 0]])];
    while let Some(((i, j), c)) = stack.pop() {
        if (i, j) == (rows - 1, last) {
            best = best.min(c);
            continue;
        }
        // right: into interior or last pad
        if j < last {
            stack.push(((i, j + 1), c + p[[i, j + 1]]));
        }
        // diagonal: into any column past the first
        if i + 1 < rows && j < last {
            stack.push(((i + 1, j + 1), c + p[[i + 1, j + 1]]));
        }
        // down: only within a pad column
        if i + 1 < rows && (j == 0 || j == last) {
            stack.push(((i + 1, j), c + p[[i + 1, j]]));
        }
    }
    best
}

/// Similarity between a query and a support prototype under `kind`.
pub fn score(kind: &MetricKind, fq: &FrameFeatures, fs: &FrameFeatures) -> Result<f64> {
    match *kind {
        MetricKind::Otam {
            lambda,
            bidirectional,
            relaxed,
        } => {
            let c = cost_matrix(fq, fs)?;
            Ok(otam_impl(&c.values, lambda, bidirectional, relaxed, false).0)
        }
        MetricKind::BiMhm => Ok(bi_mhm_score(&cost_matrix(fq, fs)?)),
        MetricKind::MeanCosine => mean_cosine_score(fq, fs),
    }
}

/// [`score`] plus its gradients with respect to `fq` and `fs`.
pub fn score_with_grad(
    kind: &MetricKind,
    fq: &FrameFeatures,
    fs: &FrameFeatures,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    match *kind {
        MetricKind::Otam {
            lambda,
            bidirectional,
            relaxed,
        } => {
            let c = cost_matrix(fq, fs)?;
            let (s, g) = otam_impl(&c.values, lambda, bidirectional, relaxed, true);
            let (dq, ds) = c.backward(&g.unwrap());
            Ok((s, dq, ds))
        }
        MetricKind::BiMhm => {
            let c = cost_matrix(fq, fs)?;
            let (s, g) = bi_mhm_impl(&c.values, true);
            let (dq, ds) = c.backward(&g.unwrap());
            Ok((s, dq, ds))
        }
        MetricKind::MeanCosine => {
            let s = mean_cosine_score(fq, fs)?;
            let (gq, gs) = (gap(fq), gap(fs));
            let (da, db) = cosine_backward(gq.view(), gs.view());
            Ok((s, gap_backward(fq.nrows(), &da), gap_backward(fs.nrows(), &db)))
        }
    }
}

/// Gradient of the OTAM similarity with respect to the cost entries.
pub fn otam_cost_grad(cost: &CostMatrix, lambda: f64, bidirectional: bool) -> Array2<f64> {
    otam_impl(&cost.values, lambda, bidirectional, true, true).1.unwrap()
}
