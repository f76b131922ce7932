//! Built-in black boxes: analytic test functions, noise and latency wrappers,
//! a six-parameter synthetic reward surface over the PPO search space, and an
//! evaluator that runs an external command per evaluation.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::driver::{EvalContext, EvalError, Evaluator};
use crate::error::{arg_err, Error, Result};
use crate::search_space::SearchSpace;
use crate::seed::derive_seed;

fn check_box(name: &str, x: &[f64], bounds: &[(f64, f64)]) -> Result<()> {
    if x.len() != bounds.len() {
        return Err(Error::Dimension {
            expected: bounds.len(),
            got: x.len(),
        });
    }
    for (i, (&v, &(lo, hi))) in x.iter().zip(bounds).enumerate() {
        if !(v >= lo && v <= hi) {
            return Err(Error::Domain {
                name: format!("{name}[{i}]"),
                value: v,
                lower: lo,
                upper: hi,
            });
        }
    }
    Ok(())
}

/// Branin-Hoo on `[-5, 10] × [0, 15]`; global minimum 0.397887 at three points.
pub fn branin(x: &[f64]) -> Result<f64> {
    check_box("branin", x, &[(-5.0, 10.0), (0.0, 15.0)])?;
    let (x1, x2) = (x[0], x[1]);
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    Ok((x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0)
}

pub fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

const H6_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const H6_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const H6_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

/// Hartmann 6-d on `[0, 1]^6`; global minimum -3.32237.
pub fn hartmann6(x: &[f64]) -> Result<f64> {
    check_box("hartmann6", x, &[(0.0, 1.0); 6])?;
    let mut s = 0.0;
    for i in 0..4 {
        let inner: f64 = (0..6)
            .map(|j| H6_A[i][j] * (x[j] - H6_P[i][j]).powi(2))
            .sum();
        s += H6_ALPHA[i] * (-inner).exp();
    }
    Ok(-s)
}

// Synthetic PPO reward surface, defined on the warped unit cube of
// `SearchSpace::ppo_table()`. Widths encode a sensitivity ordering
// (learning rate > batch size > epochs > discount > beta > horizon).
const RL6_BASE: f64 = 200.0;
const RL6_PEAK: f64 = 1200.0;
const RL6_CENTER: [f64; 6] = [0.72, 0.40, 0.62, 0.80, 0.25, 0.45];
const RL6_WIDTH: [f64; 6] = [4.0, 1.0, 2.5, 6.0, 3.5, 1.5];
const RL6_BUMP: f64 = 250.0;
const RL6_BUMP_CENTER: [f64; 6] = [0.20, 0.75, 0.30, 0.30, 0.80, 0.70];
const RL6_BUMP_WIDTH: f64 = 12.0;
const RL6_RIPPLE: f64 = 25.0;
/// Standard deviation of the seeded evaluation noise.
pub const RL6_NOISE_SD: f64 = 5.0;

/// Noise-free maximizer of [`rl6_mean`] in raw units, and its value.
/// Found by a 10⁶-point random search refined with Nelder-Mead.
pub const RL6_ARGMAX: [f64; 6] = [
    2001.0,
    278.0,
    0.9754914163573573,
    0.0004084138193391906,
    5.0,
    0.000794331611167377,
];
pub const RL6_MAX: f64 = 1398.8036694825284;

fn rl6_unit(u: &[f64]) -> f64 {
    let main: f64 = u
        .iter()
        .zip(RL6_CENTER.iter().zip(&RL6_WIDTH))
        .map(|(x, (c, w))| w * (x - c) * (x - c))
        .sum();
    let bump: f64 = u
        .iter()
        .zip(&RL6_BUMP_CENTER)
        .map(|(x, c)| RL6_BUMP_WIDTH * (x - c) * (x - c))
        .sum();
    let ripple = (3.0 * PI * u[0]).sin() * (2.0 * PI * u[3]).cos();
    RL6_BASE + RL6_PEAK * (-main).exp() + RL6_BUMP * (-bump).exp() + RL6_RIPPLE * ripple
}

/// Deterministic part of the synthetic reward at raw PPO hyperparameters.
pub fn rl6_mean(raw: &[f64]) -> Result<f64> {
    let u = SearchSpace::ppo_table().to_unit(raw)?;
    Ok(rl6_unit(&u))
}

/// Synthetic reward with seeded Gaussian noise (sd [`RL6_NOISE_SD`]).
pub fn rl6(raw: &[f64], seed: u64) -> Result<f64> {
    let mean = rl6_mean(raw)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: f64 = StandardNormal.sample(&mut rng);
    Ok(mean + RL6_NOISE_SD * z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Builtin {
    Branin,
    Hartmann6,
    Sphere,
    Rl6,
}

impl Builtin {
    pub fn name(self) -> &'static str {
        match self {
            Builtin::Branin => "branin",
            Builtin::Hartmann6 => "hartmann6",
            Builtin::Sphere => "sphere",
            Builtin::Rl6 => "rl6",
        }
    }

    /// Required dimension, if fixed.
    pub fn dim(self) -> Option<usize> {
        match self {
            Builtin::Branin => Some(2),
            Builtin::Hartmann6 | Builtin::Rl6 => Some(6),
            Builtin::Sphere => None,
        }
    }

    pub fn eval(self, raw: &[f64], seed: u64) -> Result<f64> {
        match self {
            Builtin::Branin => branin(raw),
            Builtin::Hartmann6 => hartmann6(raw),
            Builtin::Sphere => Ok(sphere(raw)),
            Builtin::Rl6 => rl6(raw, seed),
        }
    }
}

impl fmt::Display for Builtin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Builtin {
    type Err = Error;

    /// Accepts `branin` as well as `builtin:branin`.
    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("builtin:").unwrap_or(s) {
            "branin" => Ok(Builtin::Branin),
            "hartmann6" => Ok(Builtin::Hartmann6),
            "sphere" => Ok(Builtin::Sphere),
            "rl6" => Ok(Builtin::Rl6),
            other => arg_err(format!("unknown builtin black box `{other}`")),
        }
    }
}

impl Evaluator for Builtin {
    fn evaluate(&self, raw: &[f64], ctx: &EvalContext) -> Result<f64, EvalError> {
        self.eval(raw, ctx.seed)
            .map_err(|e| EvalError(e.to_string()))
    }
}

/// Adds `N(0, sigma²)` noise drawn from a stream keyed by `(seed, eval seed, eval_id)`.
#[derive(Debug, Clone)]
pub struct Noisy<E> {
    pub inner: E,
    pub sigma: f64,
    pub seed: u64,
}

pub fn with_noise<E: Evaluator>(inner: E, sigma: f64, seed: u64) -> Result<Noisy<E>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return arg_err(format!("noise sigma must be >= 0 (got {sigma})"));
    }
    Ok(Noisy { inner, sigma, seed })
}

impl<E: Evaluator> Evaluator for Noisy<E> {
    fn evaluate(&self, raw: &[f64], ctx: &EvalContext) -> Result<f64, EvalError> {
        let v = self.inner.evaluate(raw, ctx)?;
        if self.sigma == 0.0 {
            return Ok(v);
        }
        let stream = derive_seed(derive_seed(self.seed, ctx.seed), ctx.eval_id as u64);
        let z: f64 = StandardNormal.sample(&mut ChaCha8Rng::seed_from_u64(stream));
        Ok(v + self.sigma * z)
    }
}

/// Sleeps for a fixed time before delegating.
#[derive(Debug, Clone)]
pub struct Delayed<E> {
    pub inner: E,
    pub latency: Duration,
}

pub fn with_latency<E: Evaluator>(inner: E, seconds: f64) -> Result<Delayed<E>> {
    if !(seconds >= 0.0 && seconds.is_finite()) {
        return arg_err(format!("latency must be >= 0 seconds (got {seconds})"));
    }
    Ok(Delayed {
        inner,
        latency: Duration::from_secs_f64(seconds),
    })
}

impl<E: Evaluator> Evaluator for Delayed<E> {
    fn evaluate(&self, raw: &[f64], ctx: &EvalContext) -> Result<f64, EvalError> {
        std::thread::sleep(self.latency);
        self.inner.evaluate(raw, ctx)
    }
}

/// How an external command is launched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CommandLine {
    /// Run through `sh -c`.
    Shell(String),
    /// Program followed by its arguments, no shell involved.
    Argv(Vec<String>),
}

/// Runs one process per evaluation.
///
/// The process receives `{"eval_id": .., "seed": .., "params": {name: value}}`
/// on stdin. The last non-empty line of its stdout must be a finite number;
/// a nonzero exit status or anything else is a failed evaluation.
#[derive(Debug, Clone)]
pub struct CommandEvaluator {
    pub command: CommandLine,
    pub param_names: Vec<String>,
}

impl CommandEvaluator {
    pub fn new(command: CommandLine, param_names: Vec<String>) -> Result<Self> {
        match &command {
            CommandLine::Shell(s) if s.trim().is_empty() => return arg_err("empty command"),
            CommandLine::Argv(v) if v.is_empty() => return arg_err("empty command"),
            _ => {}
        }
        Ok(Self {
            command,
            param_names,
        })
    }

    fn request(&self, raw: &[f64], ctx: &EvalContext) -> String {
        let params: serde_json::Map<String, serde_json::Value> = self
            .param_names
            .iter()
            .zip(raw)
            .map(|(n, v)| (n.clone(), serde_json::json!(v)))
            .collect();
        serde_json::json!({ "eval_id": ctx.eval_id, "seed": ctx.seed, "params": params })
            .to_string()
    }
}

/// Parses the response from the last non-empty line of a command's stdout.
pub fn parse_command_output(stdout: &str) -> Result<f64, EvalError> {
    let line = stdout
        .trim()
        .lines()
        .next_back()
        .map(str::trim)
        .unwrap_or_default();
    match line.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(EvalError(format!(
            "last output line `{line}` is not a finite number"
        ))),
    }
}

impl Evaluator for CommandEvaluator {
    fn evaluate(&self, raw: &[f64], ctx: &EvalContext) -> Result<f64, EvalError> {
        let mut cmd = match &self.command {
            CommandLine::Shell(s) => {
                let mut c = Command::new("sh");
                c.arg("-c").arg(s);
                c
            }
            CommandLine::Argv(v) => {
                let mut c = Command::new(&v[0]);
                c.args(&v[1..]);
                c
            }
        };
        let mut child = cmd
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| EvalError(format!("cannot spawn command: {e}")))?;
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            // A command that ignores its input may exit before reading it.
            let _ = stdin.write_all(self.request(raw, ctx).as_bytes());
            let _ = stdin.write_all(b"\n");
        }
        let out = child
            .wait_with_output()
            .map_err(|e| EvalError(format!("waiting for command failed: {e}")))?;
        if !out.status.success() {
            return Err(EvalError(format!("command exited with {}", out.status)));
        }
        parse_command_output(&String::from_utf8_lossy(&out.stdout))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(eval_id: usize, seed: u64) -> EvalContext {
        EvalContext { eval_id, seed }
    }

    #[test]
    fn branin_values() {
        for x in [[PI, 2.275], [-PI, 12.275], [9.42478, 2.475]] {
            assert!((branin(&x).unwrap() - 0.397_887).abs() < 1e-5);
        }
        assert!((branin(&[0.0, 0.0]).unwrap() - 55.602_113).abs() < 1e-5);
        assert!(branin(&[-6.0, 0.0]).is_err());
        assert!(branin(&[0.0]).is_err());
    }

    #[test]
    fn branin_grid_oracle() {
        // dense grid over the domain never undercuts the known minimum
        let mut best = f64::INFINITY;
        for i in 0..=1500 {
            for j in 0..=1500 {
                let x = [
                    -5.0 + 15.0 * f64::from(i) / 1500.0,
                    15.0 * f64::from(j) / 1500.0,
                ];
                best = best.min(branin(&x).unwrap());
            }
        }
        assert!(
            (0.397_887 - 1e-6..0.397_887 + 1e-3).contains(&best),
            "{best}"
        );
    }

    #[test]
    fn sphere_and_hartmann() {
        assert_eq!(sphere(&[0.0; 5]), 0.0);
        assert_eq!(sphere(&[1.0, 1.0]), 2.0);
        let xstar = [0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573];
        assert!((hartmann6(&xstar).unwrap() + 3.32237).abs() < 1e-4);
        assert!(hartmann6(&[1.2; 6]).is_err());
    }

    #[test]
    fn builtin_parsing() {
        assert_eq!("builtin:rl6".parse::<Builtin>().unwrap(), Builtin::Rl6);
        assert_eq!("branin".parse::<Builtin>().unwrap(), Builtin::Branin);
        assert!("builtin:nope".parse::<Builtin>().is_err());
    }

    #[test]
    fn rl6_is_deterministic_per_seed() {
        let raw = [2029.0, 511.0, 0.974, 9.3e-4, 3.0, 0.01];
        assert_eq!(rl6(&raw, 4).unwrap(), rl6(&raw, 4).unwrap());
        assert_ne!(rl6(&raw, 4).unwrap(), rl6(&raw, 5).unwrap());
        assert!(rl6(&[100.0, 511.0, 0.974, 9.3e-4, 3.0, 0.01], 0).is_err());
    }

    #[test]
    fn noise_wrapper() {
        let quiet = with_noise(Builtin::Sphere, 0.0, 1).unwrap();
        assert_eq!(quiet.evaluate(&[1.0, 2.0], &ctx(3, 0)).unwrap(), 5.0);

        let noisy = with_noise(Builtin::Sphere, 1.0, 42).unwrap();
        let n = 10_000;
        let vals: Vec<f64> = (0..n)
            .map(|i| noisy.evaluate(&[0.0, 0.0], &ctx(i, 7)).unwrap())
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((0.97..=1.03).contains(&sd), "{sd}");
        assert_eq!(
            noisy.evaluate(&[0.0, 0.0], &ctx(5, 7)).unwrap(),
            noisy.evaluate(&[0.0, 0.0], &ctx(5, 7)).unwrap()
        );
        assert!(with_noise(Builtin::Sphere, -1.0, 0).is_err());
    }

    #[test]
    fn wrappers_compose() {
        let a = with_latency(with_noise(Builtin::Sphere, 0.5, 3).unwrap(), 0.0).unwrap();
        let b = with_noise(with_latency(Builtin::Sphere, 0.0).unwrap(), 0.5, 3).unwrap();
        for i in 0..10 {
            let c = ctx(i, 1);
            assert_eq!(
                a.evaluate(&[0.3], &c).unwrap(),
                b.evaluate(&[0.3], &c).unwrap()
            );
        }
    }

    #[test]
    fn latency_wrapper_sleeps() {
        let slow = with_latency(Builtin::Sphere, 0.05).unwrap();
        let t = std::time::Instant::now();
        slow.evaluate(&[1.0], &ctx(0, 0)).unwrap();
        assert!(t.elapsed().as_secs_f64() >= 0.05);
    }

    #[test]
    fn command_output_parsing() {
        assert_eq!(parse_command_output("log line\n  3.5  \n\n").unwrap(), 3.5);
        assert_eq!(parse_command_output("-1e-3").unwrap(), -1e-3);
        assert!(parse_command_output("").is_err());
        assert!(parse_command_output("1.0\nnot a number").is_err());
        assert!(parse_command_output("inf").is_err());
    }

    #[test]
    fn command_evaluator_round_trip() {
        let e = CommandEvaluator::new(
            CommandLine::Shell("cat > /dev/null; echo starting; echo 2.5".into()),
            vec!["a".into()],
        )
        .unwrap();
        assert_eq!(e.evaluate(&[0.1], &ctx(0, 0)).unwrap(), 2.5);
        let fail = CommandEvaluator::new(CommandLine::Shell("exit 3".into()), vec![]).unwrap();
        assert!(fail.evaluate(&[], &ctx(0, 0)).is_err());
        assert!(CommandEvaluator::new(CommandLine::Argv(vec![]), vec![]).is_err());
        let req = e.request(&[0.25], &ctx(4, 9));
        let v: serde_json::Value = serde_json::from_str(&req).unwrap();
        assert_eq!(v["eval_id"], 4);
        assert_eq!(v["seed"], 9);
        assert_eq!(v["params"]["a"], 0.25);
    }
}
