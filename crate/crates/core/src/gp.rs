//! Kriging surrogate with the Gaussian kernel `k(a, b) = exp(-Σ_j θ_j (a_j - b_j)²)`
//! plus a nugget on the training Gram matrix.
//!
//! Responses are standardized before fitting: the model keeps a constant
//! mean `μ` (the sample mean) and a scale `s` (the sample standard
//! deviation), works with `z = (y - μ) / s` internally, and returns
//! predictions in the original units. Kernel widths and the nugget are fitted
//! by minimizing the negative log marginal likelihood of `z` with a
//! multistart Nelder-Mead search in log-parameter space.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::doe::lhs_sample;
use crate::error::{arg_err, Error, Result};
use crate::numerics::{cholesky_jittered, dot, tol, CholeskyFactor, Matrix, SymmetricMatrix};
use crate::optim::{nelder_mead, NelderMeadOptions};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Kernel widths (one per input dimension, unit-cube scale) and nugget variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub theta: Vec<f64>,
    pub nugget: f64,
}

impl KernelParams {
    pub fn new(theta: Vec<f64>, nugget: f64) -> Result<Self> {
        let p = Self { theta, nugget };
        p.validate()?;
        Ok(p)
    }

    pub fn isotropic(d: usize, theta: f64, nugget: f64) -> Result<Self> {
        Self::new(vec![theta; d], nugget)
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.is_empty() {
            return arg_err("kernel needs at least one width");
        }
        if let Some(t) = self
            .theta
            .iter()
            .find(|t| !(tol::THETA_MIN..=tol::THETA_MAX).contains(*t))
        {
            return arg_err(format!(
                "kernel width {t} outside [{:e}, {:e}]",
                tol::THETA_MIN,
                tol::THETA_MAX
            ));
        }
        if !(tol::NUGGET_MIN..=tol::NUGGET_MAX).contains(&self.nugget) {
            return arg_err(format!(
                "nugget {} outside [{:e}, {:e}]",
                self.nugget,
                tol::NUGGET_MIN,
                tol::NUGGET_MAX
            ));
        }
        Ok(())
    }
}

#[inline]
fn kernel(a: &[f64], b: &[f64], theta: &[f64]) -> f64 {
    let s: f64 = a
        .iter()
        .zip(b)
        .zip(theta)
        .map(|((x, y), t)| t * (x - y) * (x - y))
        .sum();
    (-s).exp()
}

/// Cross-covariance `K(A, B)`; no nugget is added here.
pub fn kernel_matrix(a: &Matrix, b: &Matrix, params: &KernelParams) -> Result<Matrix> {
    let d = params.dim();
    for m in [a, b] {
        if m.ncols() != d {
            return Err(Error::Dimension {
                expected: d,
                got: m.ncols(),
            });
        }
    }
    Ok(Matrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        kernel(a.row(i), b.row(j), &params.theta)
    }))
}

/// Squared coordinate differences of all training pairs, so that repeated
/// Gram evaluations during fitting skip the subtraction.
struct PairwiseSq {
    n: usize,
    d: usize,
    // lower triangle (i > j), row-major, d values per pair
    diffs: Vec<f64>,
}

impl PairwiseSq {
    fn new(x: &Matrix) -> Self {
        let (n, d) = (x.nrows(), x.ncols());
        let mut diffs = Vec::with_capacity(n * n.saturating_sub(1) / 2 * d);
        for i in 0..n {
            for j in 0..i {
                for (a, b) in x.row(i).iter().zip(x.row(j)) {
                    diffs.push((a - b) * (a - b));
                }
            }
        }
        Self { n, d, diffs }
    }

    fn gram(&self, theta: &[f64], diag: f64) -> Matrix {
        let n = self.n;
        let mut k = Matrix::zeros(n, n);
        let mut p = 0;
        for i in 0..n {
            for j in 0..i {
                let s: f64 = self.diffs[p..p + self.d]
                    .iter()
                    .zip(theta)
                    .map(|(q, t)| q * t)
                    .sum();
                let v = (-s).exp();
                k[(i, j)] = v;
                k[(j, i)] = v;
                p += self.d;
            }
            k[(i, i)] = 1.0 + diag;
        }
        k
    }
}

fn factor_with_jitter(gram: Matrix) -> Result<(CholeskyFactor, f64)> {
    cholesky_jittered(&SymmetricMatrix::new(gram)?, 1.0)
}

fn nlml_from_factor(chol: &CholeskyFactor, resid: &[f64]) -> Result<(f64, Vec<f64>)> {
    let v = chol.solve_lower(resid)?;
    let quad: f64 = v.iter().map(|x| x * x).sum();
    let alpha = chol.solve_upper(&v)?;
    let n = resid.len() as f64;
    Ok((0.5 * chol.log_det() + 0.5 * quad + 0.5 * n * LN_2PI, alpha))
}

fn check_training(x: &Matrix, y: &[f64], min_n: usize) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if x.nrows() < min_n {
        return arg_err(format!(
            "need at least {min_n} training points, got {}",
            x.nrows()
        ));
    }
    if x.ncols() == 0 {
        return arg_err("training inputs have zero columns");
    }
    if y.iter().any(|v| !v.is_finite()) {
        return arg_err("training responses must be finite");
    }
    Ok(())
}

/// Negative log marginal likelihood of `y` under a GP with constant mean
/// `mean`, unit signal variance and the given kernel.
pub fn nlml(x: &Matrix, y: &[f64], mean: f64, params: &KernelParams) -> Result<f64> {
    check_training(x, y, 1)?;
    let gram = kernel_matrix(x, x, params)?;
    nlml_gram(gram, y, mean, params.nugget)
}

fn nlml_gram(mut gram: Matrix, y: &[f64], mean: f64, nugget: f64) -> Result<f64> {
    for i in 0..gram.nrows() {
        gram[(i, i)] += nugget;
    }
    let (chol, _) = factor_with_jitter(gram)?;
    let resid: Vec<f64> = y.iter().map(|v| v - mean).collect();
    Ok(nlml_from_factor(&chol, &resid)?.0)
}

/// Options for [`GpModel::fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Number of Latin-hypercube start points in log-parameter space.
    pub restarts: usize,
    pub theta_bounds: (f64, f64),
    pub nugget_bounds: (f64, f64),
    pub seed: u64,
    /// Simplex iterations per start.
    pub max_iters: usize,
    /// Additional start points tried alongside the Latin-hypercube ones.
    #[serde(skip)]
    pub extra_starts: Vec<KernelParams>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            theta_bounds: (1e-3, 1e3),
            nugget_bounds: (1e-8, 1.0),
            seed: 0,
            max_iters: 300,
            extra_starts: Vec::new(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let (tl, tu) = self.theta_bounds;
        let (nl, nu) = self.nugget_bounds;
        if !(tl >= tol::THETA_MIN && tu <= tol::THETA_MAX && tl < tu) {
            return arg_err(format!(
                "theta_bounds ({tl}, {tu}) must be an increasing range inside [1e-6, 1e6]"
            ));
        }
        if !(nl >= tol::NUGGET_MIN && nu <= tol::NUGGET_MAX && nl <= nu) {
            return arg_err(format!(
                "nugget_bounds ({nl}, {nu}) must be a range inside [1e-10, 1e2]"
            ));
        }
        if self.restarts == 0 && self.extra_starts.is_empty() {
            return arg_err("fit needs at least one start point");
        }
        Ok(())
    }

    /// Log-space box `[ln θ_1..ln θ_d, ln nugget]`.
    fn log_box(&self, d: usize) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![self.theta_bounds.0.ln(); d];
        let mut hi = vec![self.theta_bounds.1.ln(); d];
        lo.push(self.nugget_bounds.0.ln());
        hi.push(self.nugget_bounds.1.ln());
        (lo, hi)
    }
}

/// Inverse of [`params_to_log`], clamped into the configured bounds so that
/// `exp(ln b)` rounding never leaves the box.
fn params_from_log(z: &[f64], cfg: &FitConfig) -> KernelParams {
    let (t, n) = z.split_at(z.len() - 1);
    let (tl, tu) = cfg.theta_bounds;
    let (nl, nu) = cfg.nugget_bounds;
    KernelParams {
        theta: t.iter().map(|v| v.exp().clamp(tl, tu)).collect(),
        nugget: n[0].exp().clamp(nl, nu),
    }
}

fn params_to_log(p: &KernelParams) -> Vec<f64> {
    p.theta
        .iter()
        .map(|t| t.ln())
        .chain([p.nugget.ln()])
        .collect()
}

/// Posterior mean vector and covariance matrix at a set of query points.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

impl Posterior {
    pub fn sd(&self) -> Vec<f64> {
        (0..self.mean.len())
            .map(|i| self.cov[(i, i)].sqrt())
            .collect()
    }
}

/// A fitted (or fixed-parameter) Kriging model.
#[derive(Debug, Clone)]
pub struct GpModel {
    x: Matrix,
    y: Vec<f64>,
    mean: f64,
    scale: f64,
    params: KernelParams,
    jitter: f64,
    chol: CholeskyFactor,
    alpha: Vec<f64>,
    nlml: f64,
}

impl GpModel {
    /// Builds a model with given hyperparameters. Predictions are
    /// `mean + scale · (standardized GP)`; pass `scale = 1` for a
    /// unit-variance prior on the raw responses.
    pub fn with_params(
        x: Matrix,
        y: Vec<f64>,
        mean: f64,
        scale: f64,
        params: KernelParams,
    ) -> Result<Self> {
        check_training(&x, &y, 1)?;
        params.validate()?;
        if params.dim() != x.ncols() {
            return Err(Error::Dimension {
                expected: x.ncols(),
                got: params.dim(),
            });
        }
        if !(scale > 0.0 && scale.is_finite()) || !mean.is_finite() {
            return arg_err(format!(
                "invalid response standardization (mean {mean}, scale {scale})"
            ));
        }
        if x.as_slice().iter().any(|u| !(0.0..=1.0).contains(u)) {
            return arg_err("training inputs must lie in the unit cube");
        }
        let mut gram = kernel_matrix(&x, &x, &params)?;
        for i in 0..gram.nrows() {
            gram[(i, i)] += params.nugget;
        }
        let (chol, jitter) = factor_with_jitter(gram)?;
        let z: Vec<f64> = y.iter().map(|v| (v - mean) / scale).collect();
        let (nlml, alpha) = nlml_from_factor(&chol, &z)?;
        Ok(Self {
            x,
            y,
            mean,
            scale,
            params,
            jitter,
            chol,
            alpha,
            nlml,
        })
    }

    /// Fits kernel widths and nugget by NLML minimization.
    ///
    /// The returned model's NLML is no larger than the NLML at any start
    /// point tried (Latin-hypercube starts plus `cfg.extra_starts`).
    pub fn fit(x: &Matrix, y: &[f64], cfg: &FitConfig) -> Result<Self> {
        check_training(x, y, 2)?;
        cfg.validate()?;
        let d = x.ncols();
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        let scale = if sd > 1e-12 * mean.abs().max(1.0) {
            sd
        } else {
            1.0
        };
        let z: Vec<f64> = y.iter().map(|v| (v - mean) / scale).collect();

        let pairs = PairwiseSq::new(x);
        let objective = |logp: &[f64]| -> f64 {
            let p = params_from_log(logp, cfg);
            let gram = pairs.gram(&p.theta, p.nugget);
            nlml_gram(gram, &z, 0.0, 0.0).unwrap_or(f64::INFINITY)
        };

        let (lo, hi) = cfg.log_box(d);
        let mut starts: Vec<Vec<f64>> = Vec::new();
        if cfg.restarts > 0 {
            let design = lhs_sample(d + 1, cfg.restarts, cfg.seed)?;
            for u in design.points.rows_iter() {
                starts.push(
                    u.iter()
                        .zip(lo.iter().zip(&hi))
                        .map(|(u, (l, h))| l + u * (h - l))
                        .collect(),
                );
            }
        }
        for p in &cfg.extra_starts {
            if p.dim() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: p.dim(),
                });
            }
            let mut s = params_to_log(p);
            for ((v, l), h) in s.iter_mut().zip(&lo).zip(&hi) {
                *v = v.clamp(*l, *h);
            }
            starts.push(s);
        }

        let step: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.1 * (h - l)).collect();
        let opts = NelderMeadOptions {
            max_iters: cfg.max_iters,
            f_tol: 1e-9,
            x_tol: 1e-6,
        };
        let mut best: Option<(Vec<f64>, f64)> = None;
        for s in &starts {
            let m = nelder_mead(objective, s, &step, &lo, &hi, &opts);
            if m.f.is_finite() && best.as_ref().is_none_or(|(_, bf)| m.f < *bf) {
                best = Some((m.x, m.f));
            }
        }
        let (best_log, _) = best.ok_or_else(|| {
            Error::Numerical("kernel matrix could not be factorized at any start point".into())
        })?;
        Self::with_params(
            x.clone(),
            y.to_vec(),
            mean,
            scale,
            params_from_log(&best_log, cfg),
        )
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn inputs(&self) -> &Matrix {
        &self.x
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    /// Extra diagonal added beyond the nugget to make the Gram matrix factorizable.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn cholesky(&self) -> &CholeskyFactor {
        &self.chol
    }

    /// Solution of `(K + σ² I) α = (y - μ) / s`.
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// `(y - μ) / s`, the responses the likelihood is evaluated on.
    pub fn standardized_responses(&self) -> Vec<f64> {
        self.y
            .iter()
            .map(|v| (v - self.mean) / self.scale)
            .collect()
    }

    /// NLML of the standardized responses at the model's parameters.
    pub fn nlml(&self) -> f64 {
        self.nlml
    }

    /// NLML of the standardized responses at other parameters.
    pub fn nlml_at(&self, params: &KernelParams) -> Result<f64> {
        nlml(&self.x, &self.standardized_responses(), 0.0, params)
    }

    fn check_query(&self, xq: &Matrix) -> Result<()> {
        if xq.ncols() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: xq.ncols(),
            });
        }
        Ok(())
    }

    /// Joint posterior of the latent function at the rows of `xq`.
    pub fn posterior(&self, xq: &Matrix) -> Result<Posterior> {
        self.check_query(xq)?;
        let q = xq.nrows();
        let kx = kernel_matrix(xq, &self.x, &self.params)?;
        let kqq = kernel_matrix(xq, xq, &self.params)?;
        let mean: Vec<f64> = kx
            .rows_iter()
            .map(|k| self.mean + self.scale * dot(k, &self.alpha))
            .collect();
        let v: Vec<Vec<f64>> = kx
            .rows_iter()
            .map(|k| self.chol.solve_lower(k))
            .collect::<Result<_>>()?;
        let s2 = self.scale * self.scale;
        let mut cov = Matrix::zeros(q, q);
        for i in 0..q {
            for j in 0..=i {
                let c = s2 * (kqq[(i, j)] - dot(&v[i], &v[j]));
                cov[(i, j)] = c;
                cov[(j, i)] = c;
            }
            if cov[(i, i)] < 0.0 {
                cov[(i, i)] = 0.0;
            }
        }
        Ok(Posterior { mean, cov })
    }

    /// Posterior mean and variance at a single point.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let k: Vec<f64> = self
            .x
            .rows_iter()
            .map(|r| kernel(x, r, &self.params.theta))
            .collect();
        let m = self.mean + self.scale * dot(&k, &self.alpha);
        let v = self.chol.solve_lower(&k)?;
        let var = self.scale * self.scale * (1.0 - v.iter().map(|a| a * a).sum::<f64>());
        Ok((m, var.max(0.0)))
    }

    /// Leave-one-out posterior means with hyperparameters, mean and scale
    /// held fixed: `ŷ₋ᵢ = yᵢ - s · αᵢ / [(K + σ²I)⁻¹]ᵢᵢ`.
    pub fn loo_predictions(&self) -> Vec<f64> {
        let kinv = self.chol.inverse();
        self.y
            .iter()
            .enumerate()
            .map(|(i, yi)| yi - self.scale * self.alpha[i] / kinv[(i, i)])
            .collect()
    }

    /// Cross-validated coefficient of determination from leave-one-out predictions.
    pub fn loo_r_squared(&self) -> Result<f64> {
        if self.n() < 3 {
            return arg_err("leave-one-out R² needs at least 3 observations");
        }
        let n = self.n() as f64;
        let ybar = self.y.iter().sum::<f64>() / n;
        let sst: f64 = self.y.iter().map(|v| (v - ybar).powi(2)).sum();
        if sst <= 0.0 {
            return Err(Error::ZeroVariance);
        }
        let sse: f64 = self
            .loo_predictions()
            .iter()
            .zip(&self.y)
            .map(|(p, y)| (y - p).powi(2))
            .sum();
        Ok(1.0 - sse / sst)
    }

    /// Same kernel, mean and scale with extra observations appended.
    pub fn with_observations(&self, x_new: &Matrix, y_new: &[f64]) -> Result<Self> {
        let mut x = self.x.clone();
        for r in x_new.rows_iter() {
            x.push_row(r)?;
        }
        let mut y = self.y.clone();
        y.extend_from_slice(y_new);
        Self::with_params(x, y, self.mean, self.scale, self.params.clone())
    }

    /// Short hash of the training data and hyperparameters.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for v in self.x.as_slice().iter().chain(&self.y) {
            h.update(v.to_le_bytes());
        }
        for v in self
            .params
            .theta
            .iter()
            .chain([&self.params.nugget, &self.mean, &self.scale])
        {
            h.update(v.to_le_bytes());
        }
        let out = h.finalize();
        out.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
