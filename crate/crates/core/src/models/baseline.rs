//! Classical TF-IDF baselines: Gaussian naive Bayes and L2-regularized
//! multinomial logistic regression.

use serde::{Deserialize, Serialize};

use super::{argmax, Prediction};
use crate::error::{Error, Result};
use crate::preprocess::SparseVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BaselineKind {
    NaiveBayes,
    LogisticRegression,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineParams {
    /// Inverse L2 strength for logistic regression.
    pub inverse_regularization: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Fraction of the largest feature variance added to every variance.
    pub var_smoothing: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            inverse_regularization: 1.0,
            max_iterations: 200,
            tolerance: 1e-6,
            var_smoothing: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNaiveBayes {
    dim: usize,
    log_prior: Vec<f64>,
    mean: Vec<Vec<f64>>,
    var: Vec<Vec<f64>>,
    /// Log-likelihood of the all-zero input per class, cached at fit time.
    #[serde(skip)]
    zero_score: Vec<f64>,
}

impl GaussianNaiveBayes {
    fn fit(rows: &[SparseVector], labels: &[usize], arity: usize, params: &BaselineParams) -> Self {
        let dim = rows[0].dim;
        let n = rows.len() as f64;
        let mut count = vec![0f64; arity];
        let mut sum = vec![vec![0f64; dim]; arity];
        let mut sum_sq = vec![vec![0f64; dim]; arity];
        for (row, &y) in rows.iter().zip(labels) {
            count[y] += 1.0;
            for &(j, v) in &row.entries {
                sum[y][j] += v;
                sum_sq[y][j] += v * v;
            }
        }

        let mut max_var = 0f64;
        for j in 0..dim {
            let s: f64 = (0..arity).map(|c| sum[c][j]).sum();
            let sq: f64 = (0..arity).map(|c| sum_sq[c][j]).sum();
            let m = s / n;
            max_var = max_var.max(sq / n - m * m);
        }
        let epsilon = params.var_smoothing * if max_var > 0.0 { max_var } else { 1.0 };

        let mut mean = vec![vec![0f64; dim]; arity];
        let mut var = vec![vec![epsilon; dim]; arity];
        for c in 0..arity {
            if count[c] == 0.0 {
                continue;
            }
            for j in 0..dim {
                let m = sum[c][j] / count[c];
                mean[c][j] = m;
                var[c][j] = (sum_sq[c][j] / count[c] - m * m).max(0.0) + epsilon;
            }
        }
        let log_prior = count
            .iter()
            .map(|&c| if c > 0.0 { (c / n).ln() } else { f64::NEG_INFINITY })
            .collect();
        let mut model = Self {
            dim,
            log_prior,
            mean,
            var,
            zero_score: Vec::new(),
        };
        model.cache();
        model
    }

    fn cache(&mut self) {
        let two_pi = 2.0 * std::f64::consts::PI;
        self.zero_score = (0..self.log_prior.len())
            .map(|c| {
                let ll: f64 = self.mean[c]
                    .iter()
                    .zip(&self.var[c])
                    .map(|(&m, &v)| -0.5 * (two_pi * v).ln() - 0.5 * m * m / v)
                    .sum();
                self.log_prior[c] + ll
            })
            .collect();
    }

    /// Joint log-likelihood per class.
    fn scores(&self, x: &SparseVector) -> Vec<f64> {
        (0..self.log_prior.len())
            .map(|c| {
                let correction: f64 = x
                    .entries
                    .iter()
                    .map(|&(j, v)| {
                        let m = self.mean[c][j];
                        -0.5 * (v * v - 2.0 * v * m) / self.var[c][j]
                    })
                    .sum();
                self.zero_score[c] + correction
            })
            .collect()
    }
}

/// Weights are stored row-major, one row of `dim` per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    dim: usize,
    arity: usize,
    weights: Vec<f64>,
    intercepts: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticRegression {
    fn scores(&self, x: &SparseVector) -> Vec<f64> {
        (0..self.arity)
            .map(|c| self.intercepts[c] + x.dot(&self.weights[c * self.dim..(c + 1) * self.dim]))
            .collect()
    }

    fn fit(rows: &[SparseVector], labels: &[usize], arity: usize, params: &BaselineParams) -> Self {
        let dim = rows[0].dim;
        let n_params = arity * dim + arity;
        let alpha = 1.0 / params.inverse_regularization;
        // objective: sum of cross-entropies + alpha/2 * ||W||^2 (intercepts unpenalized)
        let objective = |theta: &[f64], grad: &mut [f64]| -> f64 {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let (w, b) = theta.split_at(arity * dim);
            let mut loss = 0.0;
            let mut z = vec![0f64; arity];
            for (x, &y) in rows.iter().zip(labels) {
                for c in 0..arity {
                    z[c] = b[c] + x.dot(&w[c * dim..(c + 1) * dim]);
                }
                let lse = log_sum_exp(&z);
                loss += lse - z[y];
                for c in 0..arity {
                    let p = (z[c] - lse).exp() - f64::from(u8::from(c == y));
                    for &(j, v) in &x.entries {
                        grad[c * dim + j] += p * v;
                    }
                    grad[arity * dim + c] += p;
                }
            }
            let mut penalty = 0.0;
            for (g, &wi) in grad[..arity * dim].iter_mut().zip(w) {
                penalty += wi * wi;
                *g += alpha * wi;
            }
            loss + 0.5 * alpha * penalty
        };
        let (theta, iterations, converged) = lbfgs(objective, vec![0.0; n_params], params.max_iterations, params.tolerance);
        let (w, b) = theta.split_at(arity * dim);
        Self {
            dim,
            arity,
            weights: w.to_vec(),
            intercepts: b.to_vec(),
            iterations,
            converged,
        }
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS (two-loop recursion) with Armijo backtracking.
/// Returns (minimizer, iterations, converged).
fn lbfgs(
    f: impl Fn(&[f64], &mut [f64]) -> f64,
    mut x: Vec<f64>,
    max_iter: usize,
    tol: f64,
) -> (Vec<f64>, usize, bool) {
    const MEMORY: usize = 10;
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut g_new = vec![0.0; n];
    let mut x_new = vec![0.0; n];

    for iter in 0..max_iter {
        let gnorm = dot(&g, &g).sqrt();
        if gnorm <= tol * fx.abs().max(1.0) {
            return (x, iter, true);
        }
        // two-loop recursion for the search direction
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push((a, rho));
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        } else {
            let scale = 1.0 / gnorm.max(1.0);
            q.iter_mut().for_each(|v| *v *= scale);
        }
        for ((s, y), (a, rho)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut direction: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &direction);
        if slope >= 0.0 {
            // not a descent direction: fall back to steepest descent
            s_hist.clear();
            y_hist.clear();
            direction = g.iter().map(|v| -v / gnorm.max(1.0)).collect();
            slope = dot(&g, &direction);
        }

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            for i in 0..n {
                x_new[i] = x[i] + step * direction[i];
            }
            let f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + 1e-4 * step * slope {
                let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
                let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
                if dot(&s, &y) > 1e-12 {
                    s_hist.push(s);
                    y_hist.push(y);
                    if s_hist.len() > MEMORY {
                        s_hist.remove(0);
                        y_hist.remove(0);
                    }
                }
                let decrease = fx - f_new;
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut g, &mut g_new);
                fx = f_new;
                accepted = true;
                if decrease.abs() <= f64::EPSILON * fx.abs().max(1.0) {
                    return (x, iter + 1, true);
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return (x, iter + 1, false);
        }
    }
    (x, max_iter, false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BaselineModel {
    NaiveBayes(GaussianNaiveBayes),
    LogisticRegression(LogisticRegression),
}

impl BaselineModel {
    pub fn kind(&self) -> BaselineKind {
        match self {
            Self::NaiveBayes(_) => BaselineKind::NaiveBayes,
            Self::LogisticRegression(_) => BaselineKind::LogisticRegression,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::NaiveBayes(m) => m.dim,
            Self::LogisticRegression(m) => m.dim,
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Self::NaiveBayes(m) => m.log_prior.len(),
            Self::LogisticRegression(m) => m.arity,
        }
    }

    pub fn scores(&self, x: &SparseVector) -> Vec<f64> {
        match self {
            Self::NaiveBayes(m) => m.scores(x),
            Self::LogisticRegression(m) => m.scores(x),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let mut model: Self = serde_json::from_str(json)?;
        if let Self::NaiveBayes(nb) = &mut model {
            nb.cache();
        }
        Ok(model)
    }
}

/// Fits a baseline on TF-IDF rows. Requires at least two rows, at least
/// two distinct labels and a consistent feature dimension.
pub fn fit_baseline(
    kind: BaselineKind,
    features: &[SparseVector],
    labels: &[usize],
    arity: usize,
    params: &BaselineParams,
) -> Result<BaselineModel> {
    if features.len() != labels.len() {
        return Err(Error::Dimension {
            context: "fit_baseline rows vs labels",
            expected: features.len(),
            actual: labels.len(),
        });
    }
    if features.len() < 2 {
        return Err(Error::Validation("a baseline needs at least two training rows".into()));
    }
    let dim = features[0].dim;
    if let Some(bad) = features.iter().find(|r| r.dim != dim) {
        return Err(Error::Dimension {
            context: "fit_baseline feature width",
            expected: dim,
            actual: bad.dim,
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= arity) {
        return Err(Error::Validation(format!("label {bad} out of range for arity {arity}")));
    }
    let first = labels[0];
    if labels.iter().all(|&l| l == first) {
        return Err(Error::Validation(format!(
            "all training labels equal {first}; at least two classes are required"
        )));
    }
    Ok(match kind {
        BaselineKind::NaiveBayes => BaselineModel::NaiveBayes(GaussianNaiveBayes::fit(features, labels, arity, params)),
        BaselineKind::LogisticRegression => {
            BaselineModel::LogisticRegression(LogisticRegression::fit(features, labels, arity, params))
        }
    })
}

pub fn predict_baseline(model: Option<&BaselineModel>, sample_id: &str, features: &SparseVector) -> Result<Prediction> {
    let model = model.ok_or(Error::NotFitted)?;
    if features.dim != model.dim() {
        return Err(Error::Dimension {
            context: "predict_baseline",
            expected: model.dim(),
            actual: features.dim,
        });
    }
    let logits = model.scores(features);
    Ok(Prediction {
        sample_id: sample_id.to_string(),
        label: argmax(&logits),
        logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(rows: &[&[f64]]) -> Vec<SparseVector> {
        rows.iter()
            .map(|r| SparseVector {
                dim: r.len(),
                entries: r
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(i, v)| (i, *v))
                    .collect(),
            })
            .collect()
    }

    fn separable() -> (Vec<SparseVector>, Vec<usize>) {
        let rows: Vec<[f64; 2]> = vec![
            [2.0, 0.3],
            [1.5, -0.7],
            [0.9, 1.1],
            [3.0, 0.0],
            [1.2, -1.5],
            [-2.0, 0.4],
            [-1.1, -0.6],
            [-0.8, 1.3],
            [-2.5, -0.2],
            [-1.4, 0.9],
        ];
        let labels = rows.iter().map(|r| usize::from(r[0] > 0.0)).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        (dense(&refs), labels)
    }

    fn accuracy(model: &BaselineModel, x: &[SparseVector], y: &[usize]) -> f64 {
        let hits = x
            .iter()
            .zip(y)
            .filter(|(r, &l)| predict_baseline(Some(model), "s", r).unwrap().label == l)
            .count();
        hits as f64 / y.len() as f64
    }

    #[test]
    fn logistic_regression_separates_toy_set() {
        let (x, y) = separable();
        let m = fit_baseline(BaselineKind::LogisticRegression, &x, &y, 2, &BaselineParams::default()).unwrap();
        assert_eq!(accuracy(&m, &x, &y), 1.0);
        for (row, &label) in x.iter().zip(&y) {
            assert_eq!(predict_baseline(Some(&m), "s", row).unwrap().label, label);
        }
    }

    #[test]
    fn naive_bayes_separates_toy_set() {
        let (x, y) = separable();
        let m = fit_baseline(BaselineKind::NaiveBayes, &x, &y, 2, &BaselineParams::default()).unwrap();
        assert_eq!(accuracy(&m, &x, &y), 1.0);
    }

    #[test]
    fn conflicting_duplicates_cap_accuracy() {
        let x = dense(&[&[1.0, 2.0], &[1.0, 2.0]]);
        let y = vec![0, 1];
        for kind in [BaselineKind::NaiveBayes, BaselineKind::LogisticRegression] {
            let m = fit_baseline(kind, &x, &y, 2, &BaselineParams::default()).unwrap();
            assert!(accuracy(&m, &x, &y) <= 0.5);
        }
    }

    #[test]
    fn naive_bayes_on_zero_features_predicts_majority_prior() {
        let x = dense(&[&[0.0, 0.0][..]; 5]);
        let y = vec![1, 0, 1, 1, 0];
        let m = fit_baseline(BaselineKind::NaiveBayes, &x, &y, 2, &BaselineParams::default()).unwrap();
        let p = predict_baseline(Some(&m), "z", &SparseVector::zeros(2)).unwrap();
        assert_eq!(p.label, 1);
        // identical likelihoods: score gap equals the log-prior gap ln(3/5) - ln(2/5)
        let gap = p.logits[1] - p.logits[0];
        assert!((gap - (1.5f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn zero_vector_under_lr_follows_intercepts() {
        let (x, y) = separable();
        let m = fit_baseline(BaselineKind::LogisticRegression, &x, &y, 2, &BaselineParams::default()).unwrap();
        let BaselineModel::LogisticRegression(lr) = &m else { unreachable!() };
        let p = predict_baseline(Some(&m), "z", &SparseVector::zeros(2)).unwrap();
        assert_eq!(p.logits, lr.intercepts);
        assert_eq!(p.label, argmax(&lr.intercepts));
    }

    #[test]
    fn logistic_regression_reaches_stationary_point() {
        // gradient of the regularized objective vanishes at the solution
        let (x, y) = separable();
        let params = BaselineParams::default();
        let m = fit_baseline(BaselineKind::LogisticRegression, &x, &y, 2, &params).unwrap();
        let BaselineModel::LogisticRegression(lr) = &m else { unreachable!() };
        assert!(lr.converged);
        let mut grad_w = [0.0f64; 4];
        let mut grad_b = [0.0f64; 2];
        for (row, &label) in x.iter().zip(&y) {
            let z = lr.scores(row);
            let lse = log_sum_exp(&z);
            for c in 0..2 {
                let p = (z[c] - lse).exp() - if c == label { 1.0 } else { 0.0 };
                for j in 0..2 {
                    grad_w[c * 2 + j] += p * row.get(j);
                }
                grad_b[c] += p;
            }
        }
        for k in 0..4 {
            grad_w[k] += lr.weights[k];
        }
        assert!(grad_w.iter().chain(&grad_b).all(|g| g.abs() < 1e-4));
    }

    #[test]
    fn fit_errors() {
        let x = dense(&[&[1.0], &[2.0]]);
        assert!(fit_baseline(BaselineKind::NaiveBayes, &x, &[1, 1], 2, &BaselineParams::default()).is_err());
        assert!(fit_baseline(BaselineKind::NaiveBayes, &x, &[1], 2, &BaselineParams::default()).is_err());
        let ragged = vec![SparseVector::zeros(1), SparseVector::zeros(2)];
        assert!(matches!(
            fit_baseline(BaselineKind::LogisticRegression, &ragged, &[0, 1], 2, &BaselineParams::default()),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn predict_errors_and_determinism() {
        assert!(matches!(predict_baseline(None, "s", &SparseVector::zeros(2)), Err(Error::NotFitted)));
        let (x, y) = separable();
        let m = fit_baseline(BaselineKind::NaiveBayes, &x, &y, 2, &BaselineParams::default()).unwrap();
        assert!(predict_baseline(Some(&m), "s", &SparseVector::zeros(3)).is_err());
        let a = predict_baseline(Some(&m), "s", &x[3]).unwrap();
        let b = predict_baseline(Some(&m), "s", &x[3]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn json_round_trip_restores_cache() {
        let (x, y) = separable();
        let m = fit_baseline(BaselineKind::NaiveBayes, &x, &y, 2, &BaselineParams::default()).unwrap();
        let back = BaselineModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back.scores(&x[0]), m.scores(&x[0]));
    }
}
