use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Scores `x · W + b`; rows of `weights` are features, columns classes.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    /// Row-major `dim × n_classes`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub dim: usize,
    pub n_classes: usize,
}

impl LinearClassifier {
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let mut s = self.bias.clone();
        for (xi, row) in x.iter().zip(self.weights.chunks(self.n_classes)) {
            for (sc, w) in s.iter_mut().zip(row) {
                *sc += xi * w;
            }
        }
        s
    }

    /// Highest-scoring class; ties go to the lower class index.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.scores(x))
    }

    /// Fraction of rows of `x` (`n × dim`) predicted as `y`.
    pub fn accuracy(&self, x: &[f64], y: &[usize]) -> f64 {
        if y.is_empty() {
            return 0.0;
        }
        let hits = x
            .chunks(self.dim)
            .zip(y)
            .filter(|(row, &label)| self.predict(row) == label)
            .count();
        hits as f64 / y.len() as f64
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in v.iter().enumerate() {
        if s > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRegConfig {
    pub l2_lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            l2_lambda: 1e-4,
            max_iters: 1000,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProbeConfig {
    LogReg(LogRegConfig),
    Lda { shrinkage: f64 },
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ProbeConfig::LogReg(c) if !(c.l2_lambda >= 0.0) || !(c.tol >= 0.0) => Err(
                Error::Config(format!("logreg needs l2_lambda >= 0 and tol >= 0, got {:?}", c)),
            ),
            ProbeConfig::Lda { shrinkage } if !(0.0..=1.0).contains(&shrinkage) => Err(
                Error::Config(format!("lda shrinkage must lie in [0, 1], got {}", shrinkage)),
            ),
            _ => Ok(()),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            ProbeConfig::LogReg(_) => "logreg",
            ProbeConfig::Lda { .. } => "lda",
        }
    }

    pub fn fit(&self, x: &[f64], y: &[usize], n_classes: usize) -> Result<LinearClassifier> {
        match self {
            ProbeConfig::LogReg(c) => fit_logreg(x, y, n_classes, c),
            ProbeConfig::Lda { shrinkage } => fit_lda(x, y, n_classes, *shrinkage),
        }
    }
}

fn check_inputs(x: &[f64], y: &[usize], n_classes: usize) -> Result<usize> {
    if y.is_empty() || x.len() % y.len() != 0 {
        return Err(Error::Shape {
            op: "probe fit",
            detail: format!("{} values for {} labels", x.len(), y.len()),
        });
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(Error::Contract(format!("label {} >= class count {}", bad, n_classes)));
    }
    let present = {
        let mut seen = vec![false; n_classes];
        y.iter().for_each(|&c| seen[c] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if present < 2 {
        return Err(Error::DegenerateFit(format!(
            "training labels contain {} distinct class(es); need at least 2",
            present
        )));
    }
    Ok(x.len() / y.len())
}

/// Mean softmax cross-entropy plus `(λ/2)‖W‖²`, with gradients.
pub(crate) fn logreg_objective(
    x: &[f64],
    y: &[usize],
    dim: usize,
    n_classes: usize,
    weights: &[f64],
    bias: &[f64],
    l2_lambda: f64,
) -> (f64, Vec<f64>, Vec<f64>) {
    let n = y.len() as f64;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = vec![0.0; n_classes];
    let mut loss = 0.0;
    let mut s = vec![0.0; n_classes];
    for (row, &label) in x.chunks(dim).zip(y) {
        s.copy_from_slice(bias);
        for (xi, wrow) in row.iter().zip(weights.chunks(n_classes)) {
            for (sc, w) in s.iter_mut().zip(wrow) {
                *sc += xi * w;
            }
        }
        let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
        loss += z.ln() + m - s[label];
        for c in 0..n_classes {
            let p = (s[c] - m).exp() / z - if c == label { 1.0 } else { 0.0 };
            s[c] = p / n;
            gb[c] += s[c];
        }
        for (xi, grow) in row.iter().zip(gw.chunks_mut(n_classes)) {
            for (g, d) in grow.iter_mut().zip(&s) {
                *g += xi * d;
            }
        }
    }
    let mut sq = 0.0;
    for (g, w) in gw.iter_mut().zip(weights) {
        *g += l2_lambda * w;
        sq += w * w;
    }
    (loss / n + 0.5 * l2_lambda * sq, gw, gb)
}

/// Multinomial logistic regression by full-batch gradient descent with
/// Armijo backtracking, starting from zero.
///
/// Features are standardized internally; the returned classifier applies
/// to raw inputs and the penalty acts on the standardized weights.
pub fn fit_logreg(
    x: &[f64],
    y: &[usize],
    n_classes: usize,
    config: &LogRegConfig,
) -> Result<LinearClassifier> {
    ProbeConfig::LogReg(*config).validate()?;
    let dim = check_inputs(x, y, n_classes)?;
    let n = y.len();
    let (mean, scale) = column_standardizer(x, n, dim);
    let z: Vec<f64> = x
        .chunks(dim)
        .flat_map(|row| row.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s))
        .collect();

    let mut w = vec![0.0; dim * n_classes];
    let mut b = vec![0.0; n_classes];
    let (mut f, mut gw, mut gb) = logreg_objective(&z, y, dim, n_classes, &w, &b, config.l2_lambda);
    let mut step = 1.0;
    for _ in 0..config.max_iters {
        let gnorm2: f64 = gw.iter().chain(&gb).map(|g| g * g).sum();
        if gnorm2.sqrt() < config.tol {
            break;
        }
        step *= 2.0;
        loop {
            let w_try: Vec<f64> = w.iter().zip(&gw).map(|(a, g)| a - step * g).collect();
            let b_try: Vec<f64> = b.iter().zip(&gb).map(|(a, g)| a - step * g).collect();
            let (f_try, gw_try, gb_try) =
                logreg_objective(&z, y, dim, n_classes, &w_try, &b_try, config.l2_lambda);
            if f_try <= f - 0.5 * step * gnorm2 || step < 1e-12 {
                w = w_try;
                b = b_try;
                f = f_try;
                gw = gw_try;
                gb = gb_try;
                break;
            }
            step *= 0.5;
        }
        if step < 1e-12 {
            break;
        }
    }
    if !f.is_finite() {
        return Err(Error::NonFinite { op: "fit_logreg" });
    }
    // fold the standardization into the weights
    let mut weights = vec![0.0; dim * n_classes];
    let mut bias = b;
    for j in 0..dim {
        for c in 0..n_classes {
            let wz = w[j * n_classes + c] / scale[j];
            weights[j * n_classes + c] = wz;
            bias[c] -= wz * mean[j];
        }
    }
    Ok(LinearClassifier {
        weights,
        bias,
        dim,
        n_classes,
    })
}

fn column_standardizer(x: &[f64], n: usize, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; dim];
    for row in x.chunks(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for row in x.chunks(dim) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale = var
        .into_iter()
        .map(|s| {
            let sd = (s / n as f64).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

/// Linear discriminant analysis with covariance shrinkage
/// `Σ_γ = (1−γ)Σ + γ·(tr Σ / dim)·I`.
pub fn fit_lda(x: &[f64], y: &[usize], n_classes: usize, shrinkage: f64) -> Result<LinearClassifier> {
    ProbeConfig::Lda { shrinkage }.validate()?;
    let dim = check_inputs(x, y, n_classes)?;
    let n = y.len();
    let mut counts = vec![0usize; n_classes];
    let mut means = DMatrix::<f64>::zeros(dim, n_classes);
    for (row, &c) in x.chunks(dim).zip(y) {
        counts[c] += 1;
        for (j, v) in row.iter().enumerate() {
            means[(j, c)] += v;
        }
    }
    for c in 0..n_classes {
        if counts[c] > 0 {
            means.column_mut(c).scale_mut(1.0 / counts[c] as f64);
        }
    }
    let present = counts.iter().filter(|&&k| k > 0).count();
    if n <= present {
        return Err(Error::DegenerateFit(format!(
            "{} samples in {} classes leave no degrees of freedom for the covariance",
            n, present
        )));
    }
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for (row, &c) in x.chunks(dim).zip(y) {
        let d = DVector::from_iterator(dim, row.iter().enumerate().map(|(j, v)| v - means[(j, c)]));
        cov.ger(1.0, &d, &d, 1.0);
    }
    cov /= (n - present) as f64;
    let avg_var = cov.trace() / dim as f64;
    let mut shrunk = cov * (1.0 - shrinkage);
    for j in 0..dim {
        shrunk[(j, j)] += shrinkage * avg_var;
    }
    let chol = shrunk.cholesky().ok_or_else(|| {
        Error::Singular(format!("shrinkage {} leaves the {}-dim covariance non-positive-definite", shrinkage, dim))
    })?;
    let solved = chol.solve(&means);
    let mut weights = vec![0.0; dim * n_classes];
    let mut bias = vec![0.0; n_classes];
    for c in 0..n_classes {
        if counts[c] == 0 {
            bias[c] = f64::NEG_INFINITY;
            continue;
        }
        let wc = solved.column(c);
        for j in 0..dim {
            weights[j * n_classes + c] = wc[j];
        }
        bias[c] = -0.5 * means.column(c).dot(&wc) + (counts[c] as f64 / n as f64).ln();
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Singular("covariance solve produced non-finite weights".into()));
    }
    Ok(LinearClassifier {
        weights,
        bias,
        dim,
        n_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blobs(seed: u64, n_per: usize, dim: usize, k: usize, spread: f64) -> (Vec<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n_per * k {
            let c = i % k;
            x.extend(centers[c].iter().map(|m| m + spread * rng.random_range(-1.0..1.0)));
            y.push(c);
        }
        (x, y)
    }

    #[test]
    fn separable_pair() {
        let clf = fit_logreg(&[-1.0, 1.0], &[0, 1], 2, &LogRegConfig::default()).unwrap();
        assert_eq!(clf.accuracy(&[-1.0, 1.0], &[0, 1]), 1.0);
    }

    #[test]
    fn single_class_is_degenerate() {
        let e = fit_logreg(&[1.0, 2.0], &[1, 1], 3, &LogRegConfig::default()).unwrap_err();
        assert!(matches!(e, Error::DegenerateFit(_)));
        assert!(matches!(fit_lda(&[1.0, 2.0], &[0, 0], 2, 0.5), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn heavy_penalty_predicts_priors() {
        let (x, mut y) = blobs(1, 10, 3, 2, 0.5);
        // class 1 is the majority
        y[0] = 1;
        y[2] = 1;
        let cfg = LogRegConfig {
            l2_lambda: 1e9,
            ..LogRegConfig::default()
        };
        let clf = fit_logreg(&x, &y, 2, &cfg).unwrap();
        assert!(clf.weights.iter().all(|w| w.abs() < 1e-6));
        for row in x.chunks(3) {
            assert_eq!(clf.predict(row), 1);
        }
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (x, y) = blobs(2, 5, 3, 3, 1.0);
        let w: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lam = 0.3;
        let (_, gw, gb) = logreg_objective(&x, &y, 3, 3, &w, &b, lam);
        let h = 1e-6;
        for i in 0..w.len() + b.len() {
            let bump = |d: f64| {
                let (mut w2, mut b2) = (w.clone(), b.clone());
                if i < w.len() {
                    w2[i] += d;
                } else {
                    b2[i - w.len()] += d;
                }
                logreg_objective(&x, &y, 3, 3, &w2, &b2, lam).0
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            let an = if i < w.len() { gw[i] } else { gb[i - w.len()] };
            assert!((fd - an).abs() < 1e-6, "coordinate {i}: {fd} vs {an}");
        }
    }

    #[test]
    fn lda_symmetric_boundary() {
        // identity within-class scatter around (±1, 0)
        let x = [2.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, 0.0, 0.0, -2.0, 0.0, -1.0, 1.0, -1.0, -1.0];
        let y = [0, 0, 0, 0, 1, 1, 1, 1];
        let clf = fit_lda(&x, &y, 2, 0.0).unwrap();
        for x1 in [-0.3, -0.01, 0.01, 0.5] {
            for x2 in [-3.0, 0.0, 2.0] {
                let expect = if x1 > 0.0 { 0 } else { 1 };
                assert_eq!(clf.predict(&[x1, x2]), expect, "({x1},{x2})");
            }
        }
    }

    #[test]
    fn lda_singular_without_shrinkage() {
        // second feature is constant: within-class covariance is rank 1
        let x = [0.0, 1.0, 1.0, 1.0, 5.0, 1.0, 6.0, 1.0];
        let y = [0, 0, 1, 1];
        assert!(matches!(fit_lda(&x, &y, 2, 0.0), Err(Error::Singular(_))));
        assert!(fit_lda(&x, &y, 2, 0.1).is_ok());
    }
}
