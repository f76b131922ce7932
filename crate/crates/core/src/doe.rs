//! Latin hypercube designs on the unit cube.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{arg_err, Error, Result};
use crate::numerics::Matrix;
use crate::search_space::SearchSpace;

/// `n × d` design with one point in every stratum `[k/n, (k+1)/n)` of every column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub points: Matrix,
    pub seed: u64,
}

impl DesignMatrix {
    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}

/// Random-permutation Latin hypercube sample with uniform jitter inside each stratum.
pub fn lhs_sample(d: usize, n: usize, seed: u64) -> Result<DesignMatrix> {
    if d == 0 || n == 0 {
        return arg_err(format!(
            "latin hypercube needs n >= 1 and d >= 1 (got n={n}, d={d})"
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Matrix::zeros(n, d);
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..d {
        perm.shuffle(&mut rng);
        for (i, &k) in perm.iter().enumerate() {
            let r: f64 = rng.random();
            points[(i, j)] = in_stratum(k, n, r);
        }
    }
    Ok(DesignMatrix { points, seed })
}

/// `(k + r) / n`, nudged so that `floor(u * n) == k` survives rounding.
fn in_stratum(k: usize, n: usize, r: f64) -> f64 {
    let nf = n as f64;
    let mut u = (k as f64 + r) / nf;
    while (u * nf).floor() as usize > k || u >= 1.0 {
        u = u.next_down();
    }
    while ((u * nf).floor() as usize) < k {
        u = u.next_up();
    }
    u
}

/// Maps every design row to raw parameter values.
pub fn design_to_raw(space: &SearchSpace, design: &DesignMatrix) -> Result<Vec<Vec<f64>>> {
    if design.dim() != space.dim() {
        return Err(Error::Dimension {
            expected: space.dim(),
            got: design.dim(),
        });
    }
    design
        .points
        .rows_iter()
        .map(|u| space.from_unit(u))
        .collect()
}
