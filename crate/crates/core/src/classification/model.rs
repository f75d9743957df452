//! Flat classifiers over the standardized biomarker vector: LDA, linear SVM
//! and a small MLP.

use nalgebra::{Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::biomarkers::BiomarkerVector;
use crate::error::{Error, Result};

pub const N_FEATURES: usize = 4;
pub const MLP_LAYER_SIZES: [usize; 4] = [10, 20, 50, 100];
pub const MLP_MAX_HIDDEN_LAYERS: usize = 4;

fn default_epochs() -> usize {
    2000
}
fn default_svm_lambda() -> f64 {
    0.01
}
fn default_svm_lr() -> f64 {
    1.0
}
fn default_mlp_lr() -> f64 {
    0.05
}
fn default_hidden() -> Vec<usize> {
    vec![100, 20, 100]
}

/// Hyperparameters of a classifier. `windowed` routes by PEC between two
/// flat sub-models and may not nest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Lda,
    Svm {
        #[serde(default = "default_svm_lambda")]
        lambda: f64,
        #[serde(default = "default_epochs")]
        epochs: usize,
        /// Initial step; the step at epoch `t` is `lr / sqrt(t)`.
        #[serde(default = "default_svm_lr")]
        lr: f64,
    },
    Mlp {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
        #[serde(default = "default_epochs")]
        epochs: usize,
        #[serde(default = "default_mlp_lr")]
        lr: f64,
    },
    Windowed {
        delta: u32,
        c_in: Box<ModelSpec>,
        c_out: Box<ModelSpec>,
    },
}

impl ModelSpec {
    pub fn svm() -> Self {
        ModelSpec::Svm { lambda: default_svm_lambda(), epochs: default_epochs(), lr: default_svm_lr() }
    }

    pub fn mlp(hidden: Vec<usize>) -> Self {
        ModelSpec::Mlp { hidden, epochs: default_epochs(), lr: default_mlp_lr() }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Lda => "lda",
            ModelSpec::Svm { .. } => "svm",
            ModelSpec::Mlp { .. } => "mlp",
            ModelSpec::Windowed { .. } => "windowed",
        }
    }

    pub fn is_flat(&self) -> bool {
        !matches!(self, ModelSpec::Windowed { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        match self {
            ModelSpec::Lda => Ok(()),
            ModelSpec::Svm { lambda, epochs, lr } => {
                if !(*lambda > 0.0) || !(*lr > 0.0) || *epochs == 0 {
                    return bad(format!("svm needs lambda > 0, lr > 0, epochs > 0 (got {lambda}, {lr}, {epochs})"));
                }
                Ok(())
            }
            ModelSpec::Mlp { hidden, epochs, lr } => {
                if hidden.is_empty() || hidden.len() > MLP_MAX_HIDDEN_LAYERS {
                    return bad(format!("mlp needs 1..={MLP_MAX_HIDDEN_LAYERS} hidden layers, got {}", hidden.len()));
                }
                if let Some(s) = hidden.iter().find(|s| !MLP_LAYER_SIZES.contains(s)) {
                    return bad(format!("mlp hidden size {s} not in {MLP_LAYER_SIZES:?}"));
                }
                if !(*lr > 0.0) || *epochs == 0 {
                    return bad(format!("mlp needs lr > 0 and epochs > 0 (got {lr}, {epochs})"));
                }
                Ok(())
            }
            ModelSpec::Windowed { delta, c_in, c_out } => {
                crate::classification::windowed::check_delta(*delta)?;
                for sub in [c_in, c_out] {
                    if !sub.is_flat() {
                        return bad("windowed sub-models must be flat classifiers".into());
                    }
                    sub.validate()?;
                }
                Ok(())
            }
        }
    }
}

/// Every MLP architecture with 1 to 4 hidden layers drawn from the size menu.
pub fn mlp_architectures() -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut layer: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..MLP_MAX_HIDDEN_LAYERS {
        layer = layer
            .iter()
            .flat_map(|prefix| {
                MLP_LAYER_SIZES.iter().map(move |&s| {
                    let mut v = prefix.clone();
                    v.push(s);
                    v
                })
            })
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

/// Per-feature z-scoring with training-split statistics. Constant features
/// get `sd = 0` and always map to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; N_FEATURES],
    pub sd: [f64; N_FEATURES],
}

impl Standardizer {
    pub fn fit(xs: &[[f64; N_FEATURES]]) -> Self {
        let n = xs.len().max(1) as f64;
        let mut mean = [0.0; N_FEATURES];
        let mut sd = [0.0; N_FEATURES];
        for k in 0..N_FEATURES {
            mean[k] = xs.iter().map(|x| x[k]).sum::<f64>() / n;
            let var = xs.iter().map(|x| (x[k] - mean[k]).powi(2)).sum::<f64>() / n;
            let s = var.sqrt();
            sd[k] = if s > 1e-12 * mean[k].abs().max(1.0) { s } else { 0.0 };
        }
        Self { mean, sd }
    }

    pub fn apply(&self, x: &[f64; N_FEATURES]) -> [f64; N_FEATURES] {
        std::array::from_fn(|k| if self.sd[k] == 0.0 { 0.0 } else { (x[k] - self.mean[k]) / self.sd[k] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out x in`, row-major.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Params {
    Lda { class_means: [[f64; N_FEATURES]; 2], priors: [f64; 2], weights: [f64; N_FEATURES], bias: f64 },
    Svm { weights: [f64; N_FEATURES], bias: f64 },
    Mlp { hidden: Vec<usize>, layers: Vec<DenseLayer> },
}

/// A trained flat classifier. `score` is a posterior probability for LDA and
/// MLP and a signed margin for the SVM; severe iff `score >= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub standardization: Standardizer,
    pub threshold: f64,
    #[serde(flatten)]
    pub params: Params,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64; N_FEATURES], b: &[f64; N_FEATURES]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ClassifierModel {
    pub fn kind(&self) -> &'static str {
        match self.params {
            Params::Lda { .. } => "lda",
            Params::Svm { .. } => "svm",
            Params::Mlp { .. } => "mlp",
        }
    }

    pub fn score(&self, features: &BiomarkerVector) -> f64 {
        let z = self.standardization.apply(&features.as_array());
        match &self.params {
            Params::Lda { weights, bias, .. } => sigmoid(dot(weights, &z) + bias),
            Params::Svm { weights, bias } => dot(weights, &z) + bias,
            Params::Mlp { layers, .. } => {
                let mut a: Vec<f64> = z.to_vec();
                for (l, layer) in layers.iter().enumerate() {
                    let last = l + 1 == layers.len();
                    a = layer
                        .weights
                        .iter()
                        .zip(&layer.bias)
                        .map(|(row, b)| {
                            let v = row.iter().zip(&a).map(|(w, x)| w * x).sum::<f64>() + b;
                            if last { v } else { v.max(0.0) }
                        })
                        .collect();
                }
                sigmoid(a[0])
            }
        }
    }

    pub fn predict(&self, features: &BiomarkerVector) -> bool {
        self.score(features) >= self.threshold
    }
}

fn check_classes(labels: &[bool]) -> Result<()> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos < 2 || neg < 2 {
        return Err(Error::Training(format!(
            "need at least 2 records per class, got {pos} severe and {neg} non-severe"
        )));
    }
    Ok(())
}

/// Trains a flat classifier; deterministic in (record order, seed).
pub fn train_flat(spec: &ModelSpec, features: &[BiomarkerVector], labels: &[bool], seed: u64) -> Result<ClassifierModel> {
    if !spec.is_flat() {
        return Err(Error::Parameter("train_flat needs a flat model spec".into()));
    }
    spec.validate()?;
    if features.len() != labels.len() {
        return Err(Error::Training(format!("{} feature rows but {} labels", features.len(), labels.len())));
    }
    check_classes(labels)?;
    let raw: Vec<[f64; N_FEATURES]> = features.iter().map(BiomarkerVector::as_array).collect();
    let standardization = Standardizer::fit(&raw);
    let z: Vec<[f64; N_FEATURES]> = raw.iter().map(|x| standardization.apply(x)).collect();
    let (params, threshold) = match spec {
        ModelSpec::Lda => (train_lda(&z, labels)?, 0.5),
        ModelSpec::Svm { lambda, epochs, lr } => (train_svm(&z, labels, *lambda, *epochs, *lr), 0.0),
        ModelSpec::Mlp { hidden, epochs, lr } => (train_mlp(&z, labels, hidden, *epochs, *lr, seed), 0.5),
        ModelSpec::Windowed { .. } => unreachable!("checked above"),
    };
    Ok(ClassifierModel { standardization, threshold, params })
}

fn train_lda(z: &[[f64; N_FEATURES]], labels: &[bool]) -> Result<Params> {
    let mut means = [Vector4::zeros(); 2];
    let mut counts = [0usize; 2];
    for (x, &l) in z.iter().zip(labels) {
        means[usize::from(l)] += Vector4::from(*x);
        counts[usize::from(l)] += 1;
    }
    for c in 0..2 {
        means[c] /= counts[c] as f64;
    }
    let mut cov = Matrix4::zeros();
    for (x, &l) in z.iter().zip(labels) {
        let d = Vector4::from(*x) - means[usize::from(l)];
        cov += d * d.transpose();
    }
    cov /= (z.len() - 2) as f64;
    let diff = means[1] - means[0];
    let solve = |m: Matrix4<f64>| m.cholesky().map(|ch| ch.solve(&diff));
    let w = match solve(cov) {
        Some(w) => w,
        None => {
            let ridge = (1e-6 * cov.trace() / N_FEATURES as f64).max(1e-12);
            solve(cov + Matrix4::identity() * ridge)
                .ok_or_else(|| Error::Training("pooled covariance is not positive definite after ridge".into()))?
        }
    };
    let n = z.len() as f64;
    let priors = [counts[0] as f64 / n, counts[1] as f64 / n];
    let bias = -0.5 * (means[1] + means[0]).dot(&w) + (priors[1] / priors[0]).ln();
    Ok(Params::Lda {
        class_means: [means[0].into(), means[1].into()],
        priors,
        weights: w.into(),
        bias,
    })
}

/// L2-regularized hinge loss minimized by full-batch subgradient descent;
/// the lowest-objective iterate is kept since subgradient steps are not
/// monotone. The bias is not regularized.
fn train_svm(z: &[[f64; N_FEATURES]], labels: &[bool], lambda: f64, epochs: usize, lr: f64) -> Params {
    let n = z.len() as f64;
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let objective = |w: &[f64; N_FEATURES], b: f64| {
        let hinge: f64 = z.iter().zip(&y).map(|(x, yi)| (1.0 - yi * (dot(w, x) + b)).max(0.0)).sum();
        0.5 * lambda * dot(w, w) + hinge / n
    };
    let (mut w, mut b) = ([0.0; N_FEATURES], 0.0);
    let (mut best_w, mut best_b, mut best_obj) = (w, b, objective(&w, b));
    for t in 1..=epochs {
        let mut gw: [f64; N_FEATURES] = std::array::from_fn(|k| lambda * w[k]);
        let mut gb = 0.0;
        for (x, yi) in z.iter().zip(&y) {
            if yi * (dot(&w, x) + b) < 1.0 {
                for k in 0..N_FEATURES {
                    gw[k] -= yi * x[k] / n;
                }
                gb -= yi / n;
            }
        }
        let eta = lr / (t as f64).sqrt();
        for k in 0..N_FEATURES {
            w[k] -= eta * gw[k];
        }
        b -= eta * gb;
        let obj = objective(&w, b);
        if obj < best_obj {
            (best_w, best_b, best_obj) = (w, b, obj);
        }
    }
    Params::Svm { weights: best_w, bias: best_b }
}

/// ReLU hidden layers, logistic output, mean binary cross-entropy, full-batch
/// gradient descent from Glorot-uniform weights and zero biases.
/// Column-major `rows x cols` block with the given element strides.
struct Mat<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: isize,
    cs: isize,
}

impl<'a> Mat<'a> {
    fn col_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: 1, cs: rows as isize }
    }

    fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: cols as isize, cs: 1 }
    }

    fn t(self) -> Self {
        Self { data: self.data, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }

    fn fits(&self) -> bool {
        let last = (self.rows.max(1) - 1) as isize * self.rs + (self.cols.max(1) - 1) as isize * self.cs;
        self.rs > 0 && self.cs > 0 && (last as usize) < self.data.len()
    }
}

/// `c = a * b` with `c` column-major `a.rows x b.cols`.
fn matmul(a: Mat, b: Mat, c: &mut [f64]) {
    assert!(a.cols == b.rows && a.fits() && b.fits() && c.len() == a.rows * b.cols);
    // SAFETY: every index reachable through the strides lies inside its slice (checked above).
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            0.0,
            c.as_mut_ptr(),
            1,
            a.rows as isize,
        );
    }
}

/// Full-batch gradient descent on mean binary cross-entropy. Weights are
/// row-major `fan_out x fan_in`; activations are column-major with one
/// column per sample.
fn train_mlp(z: &[[f64; N_FEATURES]], labels: &[bool], hidden: &[usize], epochs: usize, lr: f64, seed: u64) -> Params {
    let n = z.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes: Vec<usize> = std::iter::once(N_FEATURES).chain(hidden.iter().copied()).chain(std::iter::once(1)).collect();
    let depth = sizes.len() - 1;
    let mut ws: Vec<Vec<f64>> = Vec::with_capacity(depth);
    let mut bs: Vec<Vec<f64>> = Vec::with_capacity(depth);
    for pair in sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        ws.push((0..fan_out * fan_in).map(|_| rng.gen_range(-limit..=limit)).collect());
        bs.push(vec![0.0; fan_out]);
    }
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let mut acts: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s * n]).collect();
    acts[0] = z.iter().flat_map(|row| row.iter().copied()).collect();
    let mut deltas: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s * n]).collect();
    let mut grad_w: Vec<Vec<f64>> = ws.iter().map(|w| vec![0.0; w.len()]).collect();
    for _ in 0..epochs {
        for l in 0..depth {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let (prev, rest) = acts.split_at_mut(l + 1);
            let out = &mut rest[0];
            matmul(Mat::row_major(&ws[l], fan_out, fan_in), Mat::col_major(&prev[l], fan_in, n), out);
            let last = l + 1 == depth;
            for col in out.chunks_exact_mut(fan_out) {
                for (v, b) in col.iter_mut().zip(&bs[l]) {
                    let pre = *v + b;
                    *v = if last { sigmoid(pre) } else { pre.max(0.0) };
                }
            }
        }
        for ((d, a), t) in deltas[depth].iter_mut().zip(&acts[depth]).zip(&y) {
            *d = (a - t) / n as f64;
        }
        for l in (0..depth).rev() {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let (lower, upper) = deltas.split_at_mut(l + 1);
            let delta = &upper[0];
            matmul(Mat::col_major(delta, fan_out, n), Mat::col_major(&acts[l], fan_in, n).t(), &mut grad_w[l]);
            if l > 0 {
                let back = &mut lower[l];
                matmul(Mat::row_major(&ws[l], fan_out, fan_in).t(), Mat::col_major(delta, fan_out, n), back);
                for (g, &a) in back.iter_mut().zip(&acts[l]) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            // grad_w is column-major; weights are row-major
            for r in 0..fan_out {
                for c in 0..fan_in {
                    ws[l][r * fan_in + c] -= lr * grad_w[l][c * fan_out + r];
                }
            }
            for (r, b) in bs[l].iter_mut().enumerate() {
                let g: f64 = delta[r..].iter().step_by(fan_out).sum();
                *b -= lr * g;
            }
        }
    }
    let layers = ws
        .into_iter()
        .zip(bs)
        .zip(sizes.windows(2))
        .map(|((w, bias), pair)| DenseLayer { weights: w.chunks(pair[0]).map(<[f64]>::to_vec).collect(), bias })
        .collect();
    Params::Mlp { hidden: hidden.to_vec(), layers }
}
