//! Expected improvement, Monte-Carlo batch expected improvement (qEI), and
//! the inner maximization that turns a fitted model into a batch of proposals.
//!
//! All quantities are on the internal (minimization) scale.
//!
//! Batches are built greedily with the constant-liar heuristic: pick the EI
//! maximizer, pretend it was observed at `f_min`, recondition the model with
//! frozen kernel parameters and repeat. The finished batch is scored once
//! with qEI.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::doe::lhs_sample;
use crate::error::{arg_err, Error, Result};
use crate::gp::GpModel;
use crate::numerics::{cholesky_jittered, norm_cdf, norm_pdf, tol, Matrix, SymmetricMatrix};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcquisitionKind {
    /// Analytic EI per point; batch scores are the greedy EI values.
    Ei,
    /// Batch scored with Monte-Carlo qEI.
    #[default]
    Qei,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcquisitionContext {
    /// Best internal response observed so far.
    pub f_min: f64,
    pub mc_samples: usize,
    pub seed: u64,
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QeiEstimate {
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub multistarts: usize,
    pub local_steps: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self {
            multistarts: 64,
            local_steps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalBatch {
    /// `q × d` unit-cube points.
    pub points: Matrix,
    /// Analytic EI of each point under the model it was selected with.
    pub scores: Vec<f64>,
    /// qEI of the whole batch under the original model (qEI acquisition only).
    pub qei: Option<QeiEstimate>,
    /// Set when no point with positive EI could be found and some points
    /// were placed by a space-filling fallback.
    pub degenerate: bool,
}

impl ProposalBatch {
    pub fn q(&self) -> usize {
        self.points.nrows()
    }
}

/// `E[max(f_min - Y, 0)]` for `Y ~ N(mean, sd²)`.
pub fn expected_improvement(mean: f64, sd: f64, f_min: f64) -> Result<f64> {
    if !mean.is_finite() || !sd.is_finite() || !f_min.is_finite() {
        return arg_err(format!(
            "EI needs finite inputs (mean {mean}, sd {sd}, f_min {f_min})"
        ));
    }
    if sd < 0.0 {
        return arg_err(format!("EI needs sd >= 0 (got {sd})"));
    }
    let gap = f_min - mean;
    if sd == 0.0 {
        return Ok(gap.max(0.0));
    }
    let z = gap / sd;
    Ok((gap * norm_cdf(z) + sd * norm_pdf(z)).max(0.0))
}

fn ei_at(model: &GpModel, u: &[f64], f_min: f64) -> f64 {
    match model.predict(u) {
        Ok((m, v)) => expected_improvement(m, v.sqrt(), f_min).unwrap_or(0.0),
        Err(_) => 0.0,
    }
}

/// Monte-Carlo qEI: `E[max_j max(f_min - Y_j, 0)]` under the joint posterior
/// at the rows of `xq`.
///
/// Rows are sorted lexicographically before sampling, so the estimate does
/// not depend on row order.
pub fn q_expected_improvement(
    model: &GpModel,
    xq: &Matrix,
    ctx: &AcquisitionContext,
) -> Result<QeiEstimate> {
    if xq.nrows() == 0 {
        return arg_err("qEI needs at least one point");
    }
    if ctx.mc_samples < 2 {
        return arg_err("qEI needs at least two Monte-Carlo samples");
    }
    if !ctx.f_min.is_finite() {
        return arg_err("f_min must be finite");
    }
    let mut order: Vec<usize> = (0..xq.nrows()).collect();
    order.sort_by(|&a, &b| {
        xq.row(a)
            .iter()
            .zip(xq.row(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let xs = xq.select_rows(&order);
    let post = model.posterior(&xs)?;
    let q = xs.nrows();
    let max_var = (0..q).map(|i| post.cov[(i, i)]).fold(0.0f64, f64::max);
    let lower = if max_var > 0.0 {
        let (f, _) = cholesky_jittered(&SymmetricMatrix::new(post.cov.clone())?, max_var)?;
        f.lower().clone()
    } else {
        Matrix::zeros(q, q)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut e = vec![0.0; q];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..ctx.mc_samples {
        for v in e.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let mut best = 0.0f64;
        for i in 0..q {
            let y = post.mean[i] + crate::numerics::dot(&lower.row(i)[..=i], &e[..=i]);
            best = best.max(ctx.f_min - y);
        }
        sum += best;
        sum_sq += best * best;
    }
    let n = ctx.mc_samples as f64;
    let value = sum / n;
    let var = ((sum_sq / n - value * value) * n / (n - 1.0)).max(0.0);
    Ok(QeiEstimate {
        value,
        std_error: (var / n).sqrt(),
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn min_dist(u: &[f64], pts: &[&[f64]]) -> f64 {
    pts.iter()
        .map(|p| sq_dist(u, p))
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Multistart Nelder-Mead maximization of analytic EI over the unit cube.
/// Returns the best point, its EI and the Latin-hypercube starts used.
fn maximize_ei(
    model: &GpModel,
    f_min: f64,
    budget: &SearchBudget,
    seed: u64,
) -> Result<(Vec<f64>, f64, Matrix)> {
    let d = model.dim();
    let starts = lhs_sample(d, budget.multistarts.max(1), seed)?.points;
    let lo = vec![0.0; d];
    let hi = vec![1.0; d];
    let step = vec![0.1; d];
    let opts = NelderMeadOptions {
        max_iters: budget.local_steps,
        f_tol: 1e-12,
        x_tol: 1e-7,
    };
    let mut best = (starts.row(0).to_vec(), f64::NEG_INFINITY);
    for s in starts.rows_iter() {
        let m = nelder_mead(|u| -ei_at(model, u, f_min), s, &step, &lo, &hi, &opts);
        if -m.f > best.1 {
            best = (m.x, -m.f);
        }
    }
    Ok((best.0, best.1, starts))
}

/// Proposes `q` distinct unit-cube points for the next round of evaluations.
pub fn propose_batch(
    model: &GpModel,
    q: usize,
    ctx: &AcquisitionContext,
    budget: &SearchBudget,
    kind: AcquisitionKind,
) -> Result<ProposalBatch> {
    if q == 0 {
        return arg_err("batch size q must be at least 1");
    }
    if !ctx.f_min.is_finite() {
        return arg_err("f_min must be finite");
    }
    if budget.local_steps == 0 && budget.multistarts == 0 {
        return arg_err("search budget is empty");
    }
    let d = model.dim();
    let mut points = Matrix::zeros(0, d);
    let mut scores = Vec::with_capacity(q);
    let mut degenerate = false;
    let mut current = model.clone();

    for k in 0..q {
        let (mut u, mut score, starts) =
            maximize_ei(&current, ctx.f_min, budget, derive_seed(ctx.seed, k as u64))?;
        let taken: Vec<&[f64]> = model
            .inputs()
            .rows_iter()
            .chain(points.rows_iter())
            .collect();
        if score <= 0.0 || min_dist(&u, &taken) < tol::DEDUP_DISTANCE {
            // Nothing to gain anywhere: fall back to the start point farthest
            // from everything already evaluated or proposed.
            degenerate = true;
            let far = starts
                .rows_iter()
                .max_by(|a, b| min_dist(a, &taken).total_cmp(&min_dist(b, &taken)))
                .expect("at least one start");
            u = far.to_vec();
            score = ei_at(&current, &u, ctx.f_min);
        }
        points.push_row(&u)?;
        scores.push(score);
        if k + 1 < q {
            let lie = Matrix::from_rows(&[u.as_slice()])?;
            match current.with_observations(&lie, &[ctx.f_min]) {
                Ok(m) => current = m,
                Err(Error::Numerical(_)) => degenerate = true,
                Err(e) => return Err(e),
            }
        }
    }

    let qei = match kind {
        AcquisitionKind::Qei => Some(q_expected_improvement(model, &points, ctx)?),
        AcquisitionKind::Ei => None,
    };
    Ok(ProposalBatch {
        points,
        scores,
        qei,
        degenerate,
    })
}
