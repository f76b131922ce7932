//! Linear-model sensitivity analysis: least squares by Householder QR and a
//! sequential (Type I) ANOVA table.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::numerics::{f_sf, tol, Matrix};

/// QR factorization of `[1 | X]` with `Qᵀy` applied.
struct Qr {
    /// Upper triangle, `p × p`, row-major.
    r: Vec<f64>,
    p: usize,
    /// `Qᵀy`, length `n`.
    qty: Vec<f64>,
}

fn householder(x: &Matrix, y: &[f64], names: Option<&[String]>) -> Result<Qr> {
    let (n, k) = (x.nrows(), x.ncols());
    if y.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: y.len(),
        });
    }
    if n <= k + 1 {
        return arg_err(format!(
            "need more than {} observations for {k} predictors, got {n}",
            k + 1
        ));
    }
    if y.iter().chain(x.as_slice()).any(|v| !v.is_finite()) {
        return arg_err("predictors and responses must be finite");
    }
    let p = k + 1;
    // column-major working copy of [1 | X]
    let mut a: Vec<Vec<f64>> = std::iter::once(vec![1.0; n])
        .chain((0..k).map(|j| x.column(j)))
        .collect();
    let norms: Vec<f64> = a
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut qty = y.to_vec();
    let mut r = vec![0.0; p * p];
    let mut dependent = Vec::new();

    for j in 0..p {
        let norm = a[j][j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= tol::RANK * norms[j] || norms[j] == 0.0 {
            dependent.push(j);
            for i in 0..j {
                r[i * p + j] = a[j][i];
            }
            continue;
        }
        let alpha = if a[j][j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[j][j..].to_vec();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|t| t * t).sum();
        let reflect = |col: &mut [f64]| {
            let s = 2.0 * v.iter().zip(col.iter()).map(|(a, b)| a * b).sum::<f64>() / vv;
            for (c, vi) in col.iter_mut().zip(&v) {
                *c -= s * vi;
            }
        };
        for col in a.iter_mut().skip(j) {
            reflect(&mut col[j..]);
        }
        reflect(&mut qty[j..]);
        for (i, cell) in a[j][..=j].iter().enumerate() {
            r[i * p + j] = *cell;
        }
    }
    if !dependent.is_empty() {
        let label = |j: usize| match (j, names) {
            (0, _) => "(intercept)".to_string(),
            (j, Some(n)) => n[j - 1].clone(),
            (j, None) => format!("x{j}"),
        };
        return Err(Error::SingularDesign {
            columns: dependent.into_iter().map(label).collect(),
        });
    }
    Ok(Qr { r, p, qty })
}

/// Least-squares fit of `y` on `X` with an intercept. Returns
/// `[intercept, b_1, …, b_k]`.
pub fn fit_linear(x: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    let qr = householder(x, y, None)?;
    let p = qr.p;
    let mut beta = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = ((i + 1)..p).map(|j| qr.r[i * p + j] * beta[j]).sum();
        beta[i] = (qr.qty[i] - s) / qr.r[i * p + i];
    }
    Ok(beta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaRow {
    pub factor: String,
    pub df: usize,
    pub ss: f64,
    pub ms: f64,
    /// `None` on the residual row.
    pub f_value: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaTable {
    pub rows: Vec<AnovaRow>,
    pub residual: AnovaRow,
    pub total_ss: f64,
    /// Residual sum of squares is zero: factor rows with positive SS get
    /// `F = ∞, p = 0`, the others `F = 0, p = 1`.
    pub exact_fit: bool,
}

impl AnovaTable {
    pub fn r_squared(&self) -> f64 {
        if self.total_ss == 0.0 {
            return 0.0;
        }
        1.0 - self.residual.ss / self.total_ss
    }

    /// Factor rows followed by the residual row.
    pub fn all_rows(&self) -> impl Iterator<Item = &AnovaRow> {
        self.rows.iter().chain(std::iter::once(&self.residual))
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_infinite() {
        "Inf".into()
    } else {
        format!("{v:.2}")
    }
}

fn fmt_p(v: f64) -> String {
    if v < 1e-4 {
        format!("{v:.2e}")
    } else {
        format!("{v:.4}")
    }
}

impl fmt::Display for AnovaTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let header = ["", "Df", "Sum Sq", "Mean Sq", "F value", "Pr(>F)"];
        let body: Vec<[String; 6]> = self
            .all_rows()
            .map(|r| {
                [
                    r.factor.clone(),
                    r.df.to_string(),
                    fmt_num(r.ss),
                    fmt_num(r.ms),
                    r.f_value.map(fmt_num).unwrap_or_default(),
                    r.p_value.map(fmt_p).unwrap_or_default(),
                ]
            })
            .collect();
        let mut width = header.map(str::len);
        for row in &body {
            for (w, cell) in width.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |f: &mut fmt::Formatter<'_>, cells: &[&str]| -> fmt::Result {
            write!(f, "{:<w$}", cells[0], w = width[0])?;
            for (cell, w) in cells.iter().zip(&width).skip(1) {
                write!(f, "  {cell:>w$}")?;
            }
            writeln!(f)
        };
        line(f, &header)?;
        for row in &body {
            line(f, &row.iter().map(String::as_str).collect::<Vec<_>>())?;
        }
        Ok(())
    }
}

/// Sequential ANOVA: factor `k`'s sum of squares is the drop in residual
/// sum of squares when it is added after factors `1..k`.
pub fn anova_sequential(x: &Matrix, y: &[f64], factor_names: &[String]) -> Result<AnovaTable> {
    if factor_names.len() != x.ncols() {
        return Err(Error::Dimension {
            expected: x.ncols(),
            got: factor_names.len(),
        });
    }
    let qr = householder(x, y, Some(factor_names))?;
    let (n, p) = (y.len(), qr.p);
    let mean = y.iter().sum::<f64>() / n as f64;
    let total_ss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let residual_ss: f64 = qr.qty[p..].iter().map(|v| v * v).sum();
    let df_res = n - p;
    let ms_res = residual_ss / df_res as f64;
    // Treat a residual at rounding level as an exact fit.
    let exact_fit = residual_ss <= 1e-24 * total_ss.max(f64::MIN_POSITIVE) || residual_ss == 0.0;

    let mut rows = Vec::with_capacity(p - 1);
    for (j, name) in factor_names.iter().enumerate() {
        let ss = qr.qty[j + 1].powi(2);
        let (f_value, p_value) = if exact_fit {
            if ss > 0.0 {
                (f64::INFINITY, 0.0)
            } else {
                (0.0, 1.0)
            }
        } else {
            let fv = ss / ms_res;
            (fv, f_sf(fv, 1.0, df_res as f64)?)
        };
        rows.push(AnovaRow {
            factor: name.clone(),
            df: 1,
            ss,
            ms: ss,
            f_value: Some(f_value),
            p_value: Some(p_value),
        });
    }
    Ok(AnovaTable {
        rows,
        residual: AnovaRow {
            factor: "Residuals".into(),
            df: df_res,
            ss: residual_ss,
            ms: ms_res,
            f_value: None,
            p_value: None,
        },
        total_ss,
        exact_fit,
    })
}

/// Share of the total sum of squares per factor, residual included as the
/// last entry. Entries sum to 100.
pub fn ss_percentages(table: &AnovaTable) -> Result<Vec<(String, f64)>> {
    let total: f64 = table.all_rows().map(|r| r.ss).sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(table
        .all_rows()
        .map(|r| (r.factor.clone(), 100.0 * r.ss / total))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub factor: String,
    pub r2_full: f64,
    pub r2_without: f64,
    /// `r2_full − r2_without`.
    pub delta_r2: f64,
}

/// Refits the model once per factor with that factor removed.
pub fn ablation(x: &Matrix, y: &[f64], factor_names: &[String]) -> Result<Vec<AblationRow>> {
    let full = anova_sequential(x, y, factor_names)?.r_squared();
    let k = x.ncols();
    (0..k)
        .map(|drop| {
            let keep: Vec<usize> = (0..k).filter(|&j| j != drop).collect();
            let sub = Matrix::from_fn(x.nrows(), keep.len(), |i, j| x[(i, keep[j])]);
            let names: Vec<String> = keep.iter().map(|&j| factor_names[j].clone()).collect();
            let r2 = if keep.is_empty() {
                0.0
            } else {
                anova_sequential(&sub, y, &names)?.r_squared()
            };
            Ok(AblationRow {
                factor: factor_names[drop].clone(),
                r2_full: full,
                r2_without: r2,
                delta_r2: full - r2,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|j| format!("f{j}")).collect()
    }

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, k: usize) -> (Matrix, Vec<f64>) {
        let x = Matrix::from_fn(n, k, |_, _| rng.random::<f64>());
        let y = (0..n)
            .map(|i| {
                (0..k).map(|j| (j as f64 + 1.0) * x[(i, j)]).sum::<f64>() + rng.random::<f64>()
                    - 0.5
            })
            .collect();
        (x, y)
    }

    fn rss_oracle(x: &Matrix, y: &[f64], cols: usize) -> f64 {
        if cols == 0 {
            let m = y.iter().sum::<f64>() / y.len() as f64;
            return y.iter().map(|v| (v - m).powi(2)).sum();
        }
        let sub = Matrix::from_fn(x.nrows(), cols, |i, j| x[(i, j)]);
        let beta = normal_equations(&sub, y);
        (0..y.len())
            .map(|i| {
                let fit = beta[0] + (0..cols).map(|j| beta[j + 1] * sub[(i, j)]).sum::<f64>();
                (y[i] - fit).powi(2)
            })
            .sum()
    }

    fn normal_equations(x: &Matrix, y: &[f64]) -> Vec<f64> {
        let a = Matrix::from_fn(x.nrows(), x.ncols() + 1, |i, j| {
            if j == 0 {
                1.0
            } else {
                x[(i, j - 1)]
            }
        });
        let at = a.transpose();
        let ata = at.matmul(&a).unwrap();
        let aty = at.matvec(y).unwrap();
        ata.inverse().unwrap().matvec(&aty).unwrap()
    }

    #[test]
    fn exact_line() {
        let x = Matrix::from_fn(10, 1, |i, _| i as f64 * 0.3);
        let y: Vec<f64> = (0..10).map(|i| 3.0 + 2.0 * (i as f64 * 0.3)).collect();
        let b = fit_linear(&x, &y).unwrap();
        assert!((b[0] - 3.0).abs() < 1e-10 && (b[1] - 2.0).abs() < 1e-10);
        let b = fit_linear(&x, &[4.0; 10]).unwrap();
        assert!(b[1].abs() < 1e-12 && (b[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn matches_normal_equations_and_residuals_are_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, y) = random_problem(&mut rng, 50, 3);
        let b = fit_linear(&x, &y).unwrap();
        let oracle = normal_equations(&x, &y);
        for (a, o) in b.iter().zip(&oracle) {
            assert!((a - o).abs() < 1e-8, "{a} vs {o}");
        }
        let resid: Vec<f64> = (0..50)
            .map(|i| y[i] - b[0] - (0..3).map(|j| b[j + 1] * x[(i, j)]).sum::<f64>())
            .collect();
        assert!(resid.iter().sum::<f64>().abs() < 1e-8);
        for j in 0..3 {
            let c: f64 = (0..50).map(|i| resid[i] * x[(i, j)]).sum();
            assert!(c.abs() < 1e-8);
        }
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let x = Matrix::from_fn(8, 3, |i, j| match j {
            0 => i as f64,
            1 => 2.0 * i as f64,
            _ => ((i * 7) % 5) as f64,
        });
        let y = vec![1.0; 8];
        match anova_sequential(&x, &y, &["a".into(), "b".into(), "c".into()]) {
            Err(Error::SingularDesign { columns }) => assert_eq!(columns, vec!["b".to_string()]),
            other => panic!("{other:?}"),
        }
        let constant = Matrix::from_fn(8, 1, |_, _| 5.0);
        assert!(matches!(
            fit_linear(&constant, &y),
            Err(Error::SingularDesign { .. })
        ));
        assert!(fit_linear(&Matrix::zeros(2, 1), &[1.0, 2.0]).is_err());
    }

    #[test]
    fn noiseless_single_factor() {
        let xs = [0.1, 0.5, 0.2, 0.9, 0.7, 0.3];
        let x = Matrix::from_fn(6, 1, |i, _| xs[i]);
        let y: Vec<f64> = xs.iter().map(|v| 2.0 * v).collect();
        let t = anova_sequential(&x, &y, &names(1)).unwrap();
        let m = xs.iter().sum::<f64>() / 6.0;
        let hand = 4.0 * xs.iter().map(|v| (v - m).powi(2)).sum::<f64>();
        assert!((t.rows[0].ss - hand).abs() < 1e-12);
        assert!(t.residual.ss < 1e-20);
        assert!(t.exact_fit);
        assert_eq!(t.rows[0].p_value, Some(0.0));
        let pct = ss_percentages(&t).unwrap();
        assert!((pct[0].1 - 100.0).abs() < 1e-9 && pct[1].1.abs() < 1e-9);
    }

    #[test]
    fn constant_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, _) = random_problem(&mut rng, 20, 2);
        let t = anova_sequential(&x, &[7.0; 20], &names(2)).unwrap();
        assert!(t.rows.iter().all(|r| r.ss < 1e-20));
        assert!(matches!(ss_percentages(&t), Err(Error::ZeroVariance)));
    }

    #[test]
    fn sequential_ss_equals_nested_refits() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let k = rng.random_range(1..=6);
            let n = rng.random_range(k + 5..=200);
            let (x, y) = random_problem(&mut rng, n, k);
            let t = anova_sequential(&x, &y, &names(k)).unwrap();
            for j in 0..k {
                let want = rss_oracle(&x, &y, j) - rss_oracle(&x, &y, j + 1);
                assert!(
                    (t.rows[j].ss - want).abs() <= 1e-8 * t.total_ss,
                    "{} vs {want}",
                    t.rows[j].ss
                );
            }
            let sum: f64 = t.all_rows().map(|r| r.ss).sum();
            assert!((sum - t.total_ss).abs() <= 1e-8 * t.total_ss);
            assert_eq!(t.residual.df, n - k - 1);
            for r in &t.rows {
                let p = r.p_value.unwrap();
                assert!((0.0..=1.0).contains(&p));
                assert!((r.ms - r.ss / r.df as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn order_changes_rows_not_totals() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, y) = random_problem(&mut rng, 40, 3);
        let x2 = Matrix::from_fn(40, 3, |i, j| x[(i, 2 - j)]);
        let a = anova_sequential(&x, &y, &names(3)).unwrap();
        let b = anova_sequential(&x2, &y, &names(3)).unwrap();
        assert!((a.residual.ss - b.residual.ss).abs() < 1e-9 * a.total_ss);
        assert!((a.total_ss - b.total_ss).abs() < 1e-9 * a.total_ss);
    }

    #[test]
    fn percentages_of_the_reported_ss_column() {
        let ss = [
            1469550.59,
            129213.20,
            970001.90,
            2430213.17,
            1393485.29,
            319998.77,
            10480358.63,
        ];
        let mk = |name: &str, ss: f64| AnovaRow {
            factor: name.into(),
            df: 1,
            ss,
            ms: ss,
            f_value: None,
            p_value: None,
        };
        let t = AnovaTable {
            rows: ss[..6]
                .iter()
                .enumerate()
                .map(|(i, &s)| mk(&format!("f{i}"), s))
                .collect(),
            residual: mk("Residuals", ss[6]),
            total_ss: ss.iter().sum(),
            exact_fit: false,
        };
        let pct = ss_percentages(&t).unwrap();
        assert!((pct[3].1 - 100.0 * 2430213.17 / 17192821.55).abs() < 1e-9);
        assert!((pct[3].1 - 14.1).abs() < 0.05);
        assert!((pct.iter().map(|p| p.1).sum::<f64>() - 100.0).abs() < 1e-6);
    }

    #[test]
    fn two_equal_factors_split_evenly() {
        // orthogonal ±1 columns, y = a + b
        let a = [1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0];
        let b = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let x = Matrix::from_fn(8, 2, |i, j| if j == 0 { a[i] } else { b[i] });
        let y: Vec<f64> = (0..8).map(|i| a[i] + b[i]).collect();
        let pct = ss_percentages(&anova_sequential(&x, &y, &names(2)).unwrap()).unwrap();
        assert!((pct[0].1 - 50.0).abs() < 1e-9 && (pct[1].1 - 50.0).abs() < 1e-9);
    }

    #[test]
    fn rendering_and_ablation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (x, y) = random_problem(&mut rng, 30, 2);
        let t = anova_sequential(&x, &y, &["Batch Size".into(), "Horizon".into()]).unwrap();
        let text = t.to_string();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().next().unwrap().contains("Pr(>F)"));
        assert!(text.contains("Residuals"));
        let abl = ablation(&x, &y, &["a".into(), "b".into()]).unwrap();
        assert_eq!(abl.len(), 2);
        // the factor with the larger coefficient matters more
        assert!(abl[1].delta_r2 > abl[0].delta_r2);
        assert!(abl.iter().all(|r| r.delta_r2 >= -1e-12));
    }
}
