//! Hyperparameter domains and the map between raw values and the unit cube.
//!
//! Every parameter is first passed through its warp (identity, `log10`, or
//! logit) and then affinely normalized so that the warped bounds land on 0
//! and 1. Integer parameters are optimized as continuous values and rounded
//! half-up when mapped back to raw units.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};

/// Monotone reparameterization applied before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Warp {
    #[default]
    Identity,
    Log10,
    /// `ln(p / (1 - p))`
    Logit,
}

impl Warp {
    pub fn forward(self, x: f64) -> f64 {
        match self {
            Warp::Identity => x,
            Warp::Log10 => x.log10(),
            Warp::Logit => (x / (1.0 - x)).ln(),
        }
    }

    pub fn inverse(self, w: f64) -> f64 {
        match self {
            Warp::Identity => w,
            Warp::Log10 => 10f64.powf(w),
            Warp::Logit => 1.0 / (1.0 + (-w).exp()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSpec {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    #[serde(default)]
    pub warp: Warp,
    #[serde(default)]
    pub integer: bool,
}

impl ParameterSpec {
    pub fn new(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            lower,
            upper,
            warp: Warp::Identity,
            integer: false,
        }
    }

    pub fn warp(mut self, warp: Warp) -> Self {
        self.warp = warp;
        self
    }

    pub fn integer(mut self) -> Self {
        self.integer = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let name = &self.name;
        if name.is_empty() {
            return arg_err("parameter name must not be empty");
        }
        if !self.lower.is_finite() || !self.upper.is_finite() || self.lower >= self.upper {
            return arg_err(format!(
                "parameter `{name}`: need finite lower < upper (got {} .. {})",
                self.lower, self.upper
            ));
        }
        match self.warp {
            Warp::Log10 if self.lower <= 0.0 => {
                return arg_err(format!("parameter `{name}`: log10 warp needs lower > 0"));
            }
            Warp::Logit if self.lower <= 0.0 || self.upper >= 1.0 => {
                return arg_err(format!(
                    "parameter `{name}`: logit warp needs 0 < lower and upper < 1"
                ));
            }
            _ => {}
        }
        if self.integer && self.upper.floor() - self.lower.ceil() < 1.0 {
            return arg_err(format!(
                "parameter `{name}`: integer range must contain at least two integers"
            ));
        }
        Ok(())
    }

    fn warped_bounds(&self) -> (f64, f64) {
        (self.warp.forward(self.lower), self.warp.forward(self.upper))
    }

    fn domain_error(&self, value: f64) -> Error {
        Error::Domain {
            name: self.name.clone(),
            value,
            lower: self.lower,
            upper: self.upper,
        }
    }

    pub fn to_unit(&self, raw: f64) -> Result<f64> {
        if !(raw >= self.lower && raw <= self.upper) {
            return Err(self.domain_error(raw));
        }
        // Exact endpoints so that the bounds map to 0 and 1 bit-for-bit.
        if raw == self.lower {
            return Ok(0.0);
        }
        if raw == self.upper {
            return Ok(1.0);
        }
        let (wl, wu) = self.warped_bounds();
        let u = (self.warp.forward(raw) - wl) / (wu - wl);
        Ok(u.clamp(0.0, 1.0))
    }

    pub fn from_unit(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Domain {
                name: self.name.clone(),
                value: u,
                lower: 0.0,
                upper: 1.0,
            });
        }
        let raw = if u == 0.0 {
            self.lower
        } else if u == 1.0 {
            self.upper
        } else {
            let (wl, wu) = self.warped_bounds();
            self.warp.inverse(wl + u * (wu - wl))
        };
        if self.integer {
            Ok(round_half_up(raw).clamp(self.lower.ceil(), self.upper.floor()))
        } else {
            Ok(raw.clamp(self.lower, self.upper))
        }
    }
}

fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Ordered, named collection of parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SearchSpace {
    params: Vec<ParameterSpec>,
}

impl SearchSpace {
    pub fn new(params: Vec<ParameterSpec>) -> Result<Self> {
        if params.is_empty() {
            return arg_err("search space needs at least one parameter");
        }
        let mut seen = HashSet::new();
        for p in &params {
            p.validate()?;
            if !seen.insert(p.name.as_str()) {
                return arg_err(format!("duplicate parameter name `{}`", p.name));
            }
        }
        Ok(Self { params })
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[ParameterSpec] {
        &self.params
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: len,
            });
        }
        Ok(())
    }

    pub fn to_unit(&self, raw: &[f64]) -> Result<Vec<f64>> {
        self.check_len(raw.len())?;
        self.params
            .iter()
            .zip(raw)
            .map(|(p, &x)| p.to_unit(x))
            .collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u.len())?;
        self.params
            .iter()
            .zip(u)
            .map(|(p, &x)| p.from_unit(x))
            .collect()
    }

    /// `from_unit(to_unit(raw))`; returns the reconstructed raw vector.
    pub fn round_trip(&self, raw: &[f64]) -> Result<Vec<f64>> {
        self.from_unit(&self.to_unit(raw)?)
    }

    /// The six-parameter space used for the autonomous-driving PPO study:
    /// batch size, time horizon, discount (logit), learning rate (log10),
    /// PPO epochs and entropy beta (log10).
    pub fn ppo_table() -> Self {
        Self::new(vec![
            ParameterSpec::new("batch_size", 512.0, 2560.0).integer(),
            ParameterSpec::new("time_horizon", 64.0, 600.0).integer(),
            ParameterSpec::new("discount", 0.90, 0.99).warp(Warp::Logit),
            ParameterSpec::new("learning_rate", 1e-5, 1e-3).warp(Warp::Log10),
            ParameterSpec::new("ppo_epochs", 3.0, 10.0).integer(),
            ParameterSpec::new("beta", 1e-4, 1e-2).warp(Warp::Log10),
        ])
        .expect("static space is valid")
    }
}
