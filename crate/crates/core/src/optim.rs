//! Box-constrained Nelder-Mead simplex search.
//!
//! Trial points are projected onto the box before evaluation, so every
//! evaluated point is feasible. The returned point is never worse than the
//! start point.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    /// Maximum number of simplex iterations.
    pub max_iters: usize,
    /// Stop once the spread of vertex values falls below this.
    pub f_tol: f64,
    /// ... and the simplex fits inside a box of this half-width.
    pub x_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            f_tol: 1e-10,
            x_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub iters: usize,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, &lo), &hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(lo, hi);
    }
}

/// Minimizes `f` over the box `[lower, upper]` starting from `x0`.
///
/// `step` sets the initial simplex edge per coordinate; edges that would leave
/// the box are flipped to the other side of `x0`.
pub fn nelder_mead<F>(
    mut f: F,
    x0: &[f64],
    step: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &NelderMeadOptions,
) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert!(
        step.len() == n && lower.len() == n && upper.len() == n,
        "nelder_mead: inconsistent dimensions"
    );
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut start = x0.to_vec();
    project(&mut start, lower, upper);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(&start, &mut evals);
    simplex.push((start.clone(), f0));
    for j in 0..n {
        let mut v = start.clone();
        let mut h = step[j];
        if v[j] + h > upper[j] {
            h = -h;
        }
        v[j] += h;
        project(&mut v, lower, upper);
        let fv = eval(&v, &mut evals);
        simplex.push((v, fv));
    }

    let mut iters = 0;
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    while iters < opts.max_iters {
        iters += 1;
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best_f = simplex[0].1;
        let worst_f = simplex[n].1;
        let spread = if best_f.is_finite() && worst_f.is_finite() {
            (worst_f - best_f).abs()
        } else {
            f64::INFINITY
        };
        let size = simplex[1..]
            .iter()
            .flat_map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        if spread <= opts.f_tol && size <= opts.x_tol {
            break;
        }
        if n == 0 {
            break;
        }

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for (v, _) in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let along = |coef: f64, out: &mut Vec<f64>, worst: &[f64]| {
            for ((o, c), w) in out.iter_mut().zip(&centroid).zip(worst) {
                *o = c + coef * (c - w);
            }
            project(out, lower, upper);
        };

        let worst = simplex[n].0.clone();
        along(REFLECT, &mut trial, &worst);
        let fr = eval(&trial, &mut evals);
        if fr < simplex[0].1 {
            let mut exp = vec![0.0; n];
            along(EXPAND, &mut exp, &worst);
            let fe = eval(&exp, &mut evals);
            simplex[n] = if fe < fr {
                (exp, fe)
            } else {
                (trial.clone(), fr)
            };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (trial.clone(), fr);
            continue;
        }
        // contraction: outside if the reflection improved on the worst vertex
        let (coef, ref_f) = if fr < simplex[n].1 {
            (CONTRACT, fr)
        } else {
            (-CONTRACT, simplex[n].1)
        };
        let mut con = vec![0.0; n];
        along(coef, &mut con, &worst);
        let fc = eval(&con, &mut evals);
        if fc <= ref_f {
            simplex[n] = (con, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for (v, fv) in simplex.iter_mut().skip(1) {
            for (x, b) in v.iter_mut().zip(&best) {
                *x = b + SHRINK * (*x - b);
            }
            *fv = eval(v, &mut evals);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    Minimum {
        x,
        f: fx,
        evals,
        iters,
    }
}
