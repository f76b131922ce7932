//! The optimization loop: a Latin-hypercube initialization phase followed by
//! batches of fit → propose → evaluate until the budget is spent.
//!
//! Everything internal minimizes. With `Direction::Maximize` the responses
//! are negated on the way in and reported in the user's direction on the
//! way out.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{
    propose_batch, AcquisitionContext, AcquisitionKind, QeiEstimate, SearchBudget,
};
use crate::doe::{lhs_sample, DesignMatrix};
use crate::error::{arg_err, Error, Result};
use crate::gp::{FitConfig, GpModel, KernelParams};
use crate::numerics::Matrix;
use crate::search_space::SearchSpace;
use crate::seed::derive_seed;

/// Failure reported by a black box for one evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct EvalError(pub String);

/// Per-evaluation context handed to the black box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalContext {
    pub eval_id: usize,
    /// Seed for any randomness inside the evaluation.
    pub seed: u64,
}

/// A black-box objective. Must tolerate concurrent calls.
pub trait Evaluator: Send + Sync {
    fn evaluate(&self, raw: &[f64], ctx: &EvalContext) -> Result<f64, EvalError>;
}

impl<F> Evaluator for F
where
    F: Fn(&[f64], &EvalContext) -> Result<f64, EvalError> + Send + Sync,
{
    fn evaluate(&self, raw: &[f64], ctx: &EvalContext) -> Result<f64, EvalError> {
        self(raw, ctx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Minimize,
    Maximize,
}

impl Direction {
    pub fn to_internal(self, response: f64) -> f64 {
        match self {
            Direction::Minimize => response,
            Direction::Maximize => -response,
        }
    }

    pub fn to_response(self, internal: f64) -> f64 {
        self.to_internal(internal)
    }

    /// Whether `a` is strictly better than `b` in the user's direction.
    pub fn better(self, a: f64, b: f64) -> bool {
        self.to_internal(a) < self.to_internal(b)
    }
}

macro_rules! text_enum {
    ($ty:ident { $($var:ident => $s:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($ty::$var => $s),+ }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($ty::$var),)+
                    other => arg_err(format!(concat!("unknown ", stringify!($ty), " `{}`"), other)),
                }
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Init,
    Ego,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

text_enum!(Phase { Init => "init", Ego => "ego" });
text_enum!(Status { Ok => "ok", Failed => "failed" });
text_enum!(Direction { Minimize => "minimize", Maximize => "maximize" });

/// One evaluated point.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub eval_id: usize,
    pub phase: Phase,
    /// Unit-cube coordinates of `raw`.
    pub u: Vec<f64>,
    pub raw: Vec<f64>,
    /// Response in the user's direction. For failed evaluations this is the
    /// imputed value (`NaN` until an imputation reference exists).
    pub response: f64,
    /// Minimization-scale response.
    pub internal: f64,
    pub status: Status,
    pub duration_s: f64,
}

impl Observation {
    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    /// Failed evaluations carry an imputed value.
    pub fn imputed(&self) -> bool {
        self.status == Status::Failed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub init_best: f64,
    pub ego_best: f64,
    /// Relative gain of the overall best over the initialization best, in
    /// the user's direction. `None` when the initialization best is zero.
    pub improvement_fraction: Option<f64>,
}

/// Append-only record of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunHistory {
    observations: Vec<Observation>,
    pub config_digest: String,
}

impl RunHistory {
    pub fn new(config_digest: impl Into<String>) -> Self {
        Self {
            observations: Vec::new(),
            config_digest: config_digest.into(),
        }
    }

    /// Builds a history from observations whose ids must be `0..n` in order.
    pub fn from_observations(
        config_digest: impl Into<String>,
        observations: Vec<Observation>,
    ) -> Result<Self> {
        let mut h = Self::new(config_digest);
        for o in observations {
            h.push(o)?;
        }
        Ok(h)
    }

    pub fn push(&mut self, obs: Observation) -> Result<()> {
        if obs.eval_id != self.observations.len() {
            return arg_err(format!(
                "eval_id {} breaks the dense sequence (expected {})",
                obs.eval_id,
                self.observations.len()
            ));
        }
        if obs.phase == Phase::Init
            && self
                .observations
                .last()
                .is_some_and(|o| o.phase == Phase::Ego)
        {
            return arg_err("initialization observation after an EGO observation");
        }
        self.observations.push(obs);
        Ok(())
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Best successful observation (lowest internal value; first wins ties).
    pub fn best(&self) -> Option<&Observation> {
        self.observations
            .iter()
            .filter(|o| o.is_ok())
            .fold(None, |acc: Option<&Observation>, o| match acc {
                Some(b) if b.internal <= o.internal => Some(b),
                _ => Some(o),
            })
    }

    /// Running minimum of internal values over successful observations, one
    /// entry per observation from the first success onwards.
    pub fn best_so_far(&self) -> Result<Vec<(usize, f64)>> {
        if self.observations.is_empty() {
            return arg_err("history is empty");
        }
        let mut best = f64::INFINITY;
        let mut trace = Vec::with_capacity(self.observations.len());
        for o in &self.observations {
            if o.is_ok() && o.internal < best {
                best = o.internal;
            }
            if best.is_finite() {
                trace.push((o.eval_id, best));
            }
        }
        if trace.is_empty() {
            return arg_err("history has no successful observations");
        }
        Ok(trace)
    }

    fn phase_best(&self, phase: Phase) -> Option<f64> {
        self.observations
            .iter()
            .filter(|o| o.phase == phase && o.is_ok())
            .map(|o| o.internal)
            .min_by(f64::total_cmp)
    }

    pub fn phase_summary(&self, direction: Direction) -> Result<PhaseSummary> {
        let init = self
            .phase_best(Phase::Init)
            .ok_or_else(|| Error::Argument("no successful initialization observations".into()))?;
        let ego = self
            .phase_best(Phase::Ego)
            .ok_or_else(|| Error::Argument("no successful EGO observations".into()))?;
        let gain = init - init.min(ego);
        let init_best = direction.to_response(init);
        let improvement_fraction = if gain == 0.0 {
            Some(0.0)
        } else if init_best == 0.0 {
            None
        } else {
            Some(gain / init_best.abs())
        };
        Ok(PhaseSummary {
            init_best,
            ego_best: direction.to_response(ego),
            improvement_fraction,
        })
    }
}

/// Evaluation budget: `n_init` Latin-hypercube points, then `n_opt` points in batches of `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub n_init: usize,
    pub n_opt: usize,
    pub q: usize,
}

impl BudgetPlan {
    /// Half of `total` (rounded up) for initialization, the rest for EGO.
    pub fn even_split(total: usize, q: usize) -> Self {
        let n_init = total.div_ceil(2);
        Self {
            n_init,
            n_opt: total - n_init,
            q,
        }
    }

    pub fn total(&self) -> usize {
        self.n_init + self.n_opt
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.n_init < d + 2 {
            return arg_err(format!(
                "n_init = {} is too small for {d} parameters (need >= {})",
                self.n_init,
                d + 2
            ));
        }
        if self.q == 0 {
            return arg_err("q must be at least 1");
        }
        if self.n_opt < self.q {
            return arg_err(format!("n_opt = {} must be >= q = {}", self.n_opt, self.q));
        }
        Ok(())
    }

    /// Sizes of the EGO batches; the last one is truncated to fit.
    pub fn ego_batches(&self) -> Vec<usize> {
        let mut left = self.n_opt;
        let mut out = Vec::new();
        while left > 0 {
            let b = left.min(self.q);
            out.push(b);
            left -= b;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriverConfig {
    pub seed: u64,
    pub direction: Direction,
    /// Concurrent evaluations during initialization.
    pub init_parallelism: usize,
    /// Concurrent evaluations during EGO (capped by `q`).
    pub ego_parallelism: usize,
    pub fit: FitConfig,
    pub acquisition: AcquisitionKind,
    pub mc_samples: usize,
    pub search: SearchBudget,
    pub config_digest: String,
}

impl Default for DriverConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            direction: Direction::Minimize,
            init_parallelism: 1,
            ego_parallelism: usize::MAX,
            fit: FitConfig::default(),
            acquisition: AcquisitionKind::Qei,
            mc_samples: 10_000,
            search: SearchBudget::default(),
            config_digest: String::new(),
        }
    }
}

/// What the model looked like when an EGO batch was proposed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub batch: usize,
    pub first_eval_id: usize,
    pub size: usize,
    /// Number of observations the model was fitted on; always equal to
    /// `first_eval_id`.
    pub trained_on: usize,
    pub kernel: KernelParams,
    pub mean: f64,
    pub scale: f64,
    pub nlml: f64,
    pub loo_r2: Option<f64>,
    pub model_digest: String,
    pub qei: Option<QeiEstimate>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalModel {
    pub kernel: KernelParams,
    pub loo_r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub history: RunHistory,
    pub batches: Vec<BatchRecord>,
    pub final_model: Option<FinalModel>,
}

/// A run that stopped early, with everything recorded up to that point.
#[derive(Debug, Clone, Error)]
#[error("run aborted after {} observations: {error}", .history.len())]
pub struct RunError {
    pub error: Error,
    pub history: RunHistory,
    pub batches: Vec<BatchRecord>,
}

pub struct EgoDriver<'a, E: ?Sized> {
    pub space: &'a SearchSpace,
    pub evaluator: &'a E,
    pub plan: BudgetPlan,
    pub config: DriverConfig,
}

/// The Latin-hypercube design a run with this seed starts from.
pub fn initial_design(space: &SearchSpace, n_init: usize, seed: u64) -> Result<DesignMatrix> {
    lhs_sample(space.dim(), n_init, derive_seed(seed, u64::MAX))
}

struct Pending {
    eval_id: usize,
    phase: Phase,
    u: Vec<f64>,
    raw: Vec<f64>,
}

impl<'a, E: Evaluator + ?Sized> EgoDriver<'a, E> {
    pub fn new(
        space: &'a SearchSpace,
        evaluator: &'a E,
        plan: BudgetPlan,
        config: DriverConfig,
    ) -> Self {
        Self {
            space,
            evaluator,
            plan,
            config,
        }
    }

    /// Seed handed to the black box for evaluation `eval_id`.
    pub fn eval_seed(&self, eval_id: usize) -> u64 {
        derive_seed(self.config.seed, eval_id as u64)
    }

    /// Runs the whole budget.
    pub fn run(
        &self,
        observer: impl FnMut(&RunHistory, Option<&BatchRecord>),
    ) -> Result<RunOutcome, RunError> {
        self.run_with_replay(&[], observer)
    }

    /// Runs the budget, taking the outcome of any evaluation found in
    /// `replay` (matched by `eval_id`) instead of calling the black box.
    ///
    /// Proposals are regenerated and must reproduce the replayed raw
    /// parameters exactly; otherwise the replay belongs to a different
    /// configuration and the run is rejected.
    pub fn run_with_replay(
        &self,
        replay: &[Observation],
        mut observer: impl FnMut(&RunHistory, Option<&BatchRecord>),
    ) -> Result<RunOutcome, RunError> {
        let mut history = RunHistory::new(self.config.config_digest.clone());
        let mut batches = Vec::new();
        let fail = |error: Error, history: &RunHistory, batches: &Vec<BatchRecord>| RunError {
            error,
            history: history.clone(),
            batches: batches.clone(),
        };
        if let Err(e) = self.plan.validate(self.space.dim()) {
            return Err(fail(e, &history, &batches));
        }
        let replay: HashMap<usize, &Observation> = replay.iter().map(|o| (o.eval_id, o)).collect();

        // initialization
        let design = match initial_design(self.space, self.plan.n_init, self.config.seed) {
            Ok(d) => d,
            Err(e) => return Err(fail(e, &history, &batches)),
        };
        let init: Vec<Pending> = match design
            .points
            .rows_iter()
            .enumerate()
            .map(|(i, u)| self.pending(i, Phase::Init, u))
            .collect::<Result<_>>()
        {
            Ok(p) => p,
            Err(e) => return Err(fail(e, &history, &batches)),
        };
        let par = self.config.init_parallelism.max(1);
        let mut rest = init;
        while !rest.is_empty() {
            let tail = rest.split_off(par.min(rest.len()));
            let chunk = std::mem::replace(&mut rest, tail);
            if let Err(e) = self.evaluate_chunk(chunk, &replay, &mut history) {
                return Err(fail(e, &history, &batches));
            }
            observer(&history, None);
        }
        if history.observations.iter().any(|o| o.response.is_nan()) {
            return Err(fail(
                Error::Numerical("every initialization evaluation failed".into()),
                &history,
                &batches,
            ));
        }

        // EGO batches
        let mut warm: Option<KernelParams> = None;
        for (b, size) in self.plan.ego_batches().into_iter().enumerate() {
            let step = self.ego_batch(b, size, &replay, &mut history, &mut warm);
            match step {
                Ok(rec) => {
                    observer(&history, Some(&rec));
                    batches.push(rec);
                }
                Err(e) => return Err(fail(e, &history, &batches)),
            }
        }

        let final_model = self
            .fit(&history, u64::MAX - 1, warm)
            .ok()
            .map(|m| FinalModel {
                kernel: m.params().clone(),
                loo_r2: m.loo_r_squared().ok(),
            });
        Ok(RunOutcome {
            history,
            batches,
            final_model,
        })
    }

    fn pending(&self, eval_id: usize, phase: Phase, u: &[f64]) -> Result<Pending> {
        let raw = self.space.from_unit(u)?;
        // the model trains on what was actually evaluated (after rounding)
        let u = self.space.to_unit(&raw)?;
        Ok(Pending {
            eval_id,
            phase,
            u,
            raw,
        })
    }

    fn fit(
        &self,
        history: &RunHistory,
        stream: u64,
        warm: Option<KernelParams>,
    ) -> Result<GpModel> {
        let obs = history.observations();
        let x = Matrix::from_rows(&obs.iter().map(|o| o.u.as_slice()).collect::<Vec<_>>())?;
        let y: Vec<f64> = obs.iter().map(|o| o.internal).collect();
        let mut cfg = self.config.fit.clone();
        cfg.seed = derive_seed(self.config.seed, stream);
        cfg.extra_starts.extend(warm);
        GpModel::fit(&x, &y, &cfg)
    }

    fn ego_batch(
        &self,
        b: usize,
        size: usize,
        replay: &HashMap<usize, &Observation>,
        history: &mut RunHistory,
        warm: &mut Option<KernelParams>,
    ) -> Result<BatchRecord> {
        let model = self.fit(history, 1 << 32 | b as u64, warm.clone())?;
        *warm = Some(model.params().clone());
        let f_min = history
            .best()
            .map(|o| o.internal)
            .ok_or_else(|| Error::Numerical("no successful observations to improve on".into()))?;
        let ctx = AcquisitionContext {
            f_min,
            mc_samples: self.config.mc_samples,
            seed: derive_seed(self.config.seed, 2 << 32 | b as u64),
        };
        let proposal = propose_batch(
            &model,
            size,
            &ctx,
            &self.config.search,
            self.config.acquisition,
        )?;
        let first = history.len();
        let chunk: Vec<Pending> = proposal
            .points
            .rows_iter()
            .enumerate()
            .map(|(k, u)| self.pending(first + k, Phase::Ego, u))
            .collect::<Result<_>>()?;
        let rec = BatchRecord {
            batch: b,
            first_eval_id: first,
            size,
            trained_on: model.n(),
            kernel: model.params().clone(),
            mean: model.mean(),
            scale: model.scale(),
            nlml: model.nlml(),
            loo_r2: model.loo_r_squared().ok(),
            model_digest: model.digest(),
            qei: proposal.qei,
            degenerate: proposal.degenerate,
        };
        let par = self.config.ego_parallelism.clamp(1, size);
        let mut rest = chunk;
        while !rest.is_empty() {
            let tail = rest.split_off(par.min(rest.len()));
            let part = std::mem::replace(&mut rest, tail);
            self.evaluate_chunk(part, replay, history)?;
        }
        Ok(rec)
    }

    /// Evaluates a chunk concurrently (one thread per point), appends the
    /// results in `eval_id` order and imputes failures.
    fn evaluate_chunk(
        &self,
        chunk: Vec<Pending>,
        replay: &HashMap<usize, &Observation>,
        history: &mut RunHistory,
    ) -> Result<()> {
        let direction = self.config.direction;
        for p in &chunk {
            if let Some(r) = replay.get(&p.eval_id) {
                if r.phase != p.phase || r.raw != p.raw {
                    return arg_err(format!(
                        "recorded evaluation {} does not match this configuration (phase {} raw {:?}, expected phase {} raw {:?})",
                        p.eval_id, r.phase, r.raw, p.phase, p.raw
                    ));
                }
            }
        }
        let results: Vec<(f64, Status, f64)> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|p| {
                    let recorded = replay.get(&p.eval_id).copied();
                    s.spawn(move || match recorded {
                        Some(r) => (r.response, r.status, r.duration_s),
                        None => self.evaluate_one(p),
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation thread panicked"))
                .collect()
        });
        for (p, (response, status, duration_s)) in chunk.into_iter().zip(results) {
            history.push(Observation {
                eval_id: p.eval_id,
                phase: p.phase,
                u: p.u,
                raw: p.raw,
                response,
                internal: direction.to_internal(response),
                status,
                duration_s,
            })?;
        }
        self.impute(history);
        Ok(())
    }

    fn evaluate_one(&self, p: &Pending) -> (f64, Status, f64) {
        let ctx = EvalContext {
            eval_id: p.eval_id,
            seed: self.eval_seed(p.eval_id),
        };
        let start = Instant::now();
        // one retry
        let out = self
            .evaluator
            .evaluate(&p.raw, &ctx)
            .or_else(|_| self.evaluator.evaluate(&p.raw, &ctx))
            .ok()
            .filter(|v| v.is_finite());
        let secs = start.elapsed().as_secs_f64();
        match out {
            Some(v) => (v, Status::Ok, secs),
            None => (f64::NAN, Status::Failed, secs),
        }
    }

    /// Fills failed observations that have no value yet with the worst
    /// successful internal value recorded so far.
    fn impute(&self, history: &mut RunHistory) {
        let worst = history
            .observations
            .iter()
            .filter(|o| o.is_ok())
            .map(|o| o.internal)
            .max_by(f64::total_cmp);
        if let Some(w) = worst {
            for o in history.observations.iter_mut() {
                if !o.is_ok() && o.internal.is_nan() {
                    o.internal = w;
                    o.response = self.config.direction.to_response(w);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search_space::ParameterSpec;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn obs(eval_id: usize, phase: Phase, internal: f64, status: Status) -> Observation {
        Observation {
            eval_id,
            phase,
            u: vec![0.5],
            raw: vec![0.5],
            response: internal,
            internal,
            status,
            duration_s: 0.0,
        }
    }

    fn untimed(h: &RunHistory) -> Vec<Observation> {
        h.observations()
            .iter()
            .map(|o| Observation {
                duration_s: 0.0,
                ..o.clone()
            })
            .collect()
    }

    fn quick_config(seed: u64) -> DriverConfig {
        DriverConfig {
            seed,
            mc_samples: 2000,
            search: SearchBudget {
                multistarts: 16,
                local_steps: 40,
            },
            fit: FitConfig {
                restarts: 4,
                max_iters: 150,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn square_space() -> SearchSpace {
        SearchSpace::new(vec![
            ParameterSpec::new("a", -1.0, 1.0),
            ParameterSpec::new("b", -1.0, 1.0),
        ])
        .unwrap()
    }

    fn quadratic(x: &[f64], _: &EvalContext) -> Result<f64, EvalError> {
        Ok((x[0] - 0.3).powi(2) + (x[1] + 0.2).powi(2))
    }

    #[test]
    fn best_so_far_examples() {
        let h =
            RunHistory::from_observations("", vec![obs(0, Phase::Init, 3.0, Status::Ok)]).unwrap();
        assert_eq!(h.best_so_far().unwrap(), vec![(0, 3.0)]);
        let h = RunHistory::from_observations(
            "",
            vec![
                obs(0, Phase::Init, 3.0, Status::Ok),
                obs(1, Phase::Init, 1.0, Status::Ok),
                obs(2, Phase::Init, 2.0, Status::Ok),
            ],
        )
        .unwrap();
        let trace: Vec<f64> = h.best_so_far().unwrap().into_iter().map(|t| t.1).collect();
        assert_eq!(trace, vec![3.0, 1.0, 1.0]);
        assert!(RunHistory::new("").best_so_far().is_err());
    }

    #[test]
    fn best_so_far_skips_failures() {
        let h = RunHistory::from_observations(
            "",
            vec![
                obs(0, Phase::Init, 5.0, Status::Failed),
                obs(1, Phase::Init, 2.0, Status::Ok),
                obs(2, Phase::Init, -9.0, Status::Failed),
            ],
        )
        .unwrap();
        assert_eq!(h.best_so_far().unwrap(), vec![(1, 2.0), (2, 2.0)]);
    }

    #[test]
    fn history_rejects_gaps_and_phase_order() {
        let mut h = RunHistory::new("");
        assert!(h.push(obs(1, Phase::Init, 0.0, Status::Ok)).is_err());
        h.push(obs(0, Phase::Ego, 0.0, Status::Ok)).unwrap();
        assert!(h.push(obs(1, Phase::Init, 0.0, Status::Ok)).is_err());
    }

    #[test]
    fn phase_summary_examples() {
        // maximize: init best 1140, overall 1193
        let mk = |vals: &[(Phase, f64)]| {
            RunHistory::from_observations(
                "",
                vals.iter()
                    .enumerate()
                    .map(|(i, &(p, v))| Observation {
                        response: v,
                        internal: -v,
                        ..obs(i, p, -v, Status::Ok)
                    })
                    .collect(),
            )
            .unwrap()
        };
        let h = mk(&[
            (Phase::Init, 1000.0),
            (Phase::Init, 1140.0),
            (Phase::Ego, 1193.0),
            (Phase::Ego, 1100.0),
        ]);
        let s = h.phase_summary(Direction::Maximize).unwrap();
        assert_eq!((s.init_best, s.ego_best), (1140.0, 1193.0));
        assert!((s.improvement_fraction.unwrap() - 53.0 / 1140.0).abs() < 1e-15);
        assert!((s.improvement_fraction.unwrap() - 0.0465).abs() < 1e-4);

        let h = mk(&[(Phase::Init, 1140.0), (Phase::Ego, 1000.0)]);
        assert_eq!(
            h.phase_summary(Direction::Maximize)
                .unwrap()
                .improvement_fraction,
            Some(0.0)
        );

        // minimize: 4.0 -> 3.0 is a 25% improvement
        let h = RunHistory::from_observations(
            "",
            vec![
                obs(0, Phase::Init, 4.0, Status::Ok),
                obs(1, Phase::Ego, 3.0, Status::Ok),
            ],
        )
        .unwrap();
        assert_eq!(
            h.phase_summary(Direction::Minimize)
                .unwrap()
                .improvement_fraction,
            Some(0.25)
        );

        let only_init =
            RunHistory::from_observations("", vec![obs(0, Phase::Init, 4.0, Status::Ok)]).unwrap();
        assert!(only_init.phase_summary(Direction::Minimize).is_err());
    }

    #[test]
    fn budget_plan() {
        let p = BudgetPlan::even_split(400, 4);
        assert_eq!((p.n_init, p.n_opt), (200, 200));
        assert_eq!(
            BudgetPlan {
                n_init: 5,
                n_opt: 10,
                q: 4
            }
            .ego_batches(),
            vec![4, 4, 2]
        );
        assert!(BudgetPlan {
            n_init: 3,
            n_opt: 10,
            q: 1
        }
        .validate(2)
        .is_err());
        assert!(BudgetPlan {
            n_init: 4,
            n_opt: 3,
            q: 4
        }
        .validate(2)
        .is_err());
        assert!(BudgetPlan {
            n_init: 4,
            n_opt: 4,
            q: 0
        }
        .validate(2)
        .is_err());
        assert!(BudgetPlan {
            n_init: 4,
            n_opt: 4,
            q: 4
        }
        .validate(2)
        .is_ok());
    }

    #[test]
    fn quadratic_run_contract() {
        let space = square_space();
        let plan = BudgetPlan {
            n_init: 10,
            n_opt: 10,
            q: 1,
        };
        let driver = EgoDriver::new(&space, &quadratic, plan, quick_config(1));
        let mut calls = 0;
        let out = driver.run(|_, _| calls += 1).unwrap();
        let h = &out.history;
        assert_eq!(h.len(), 20);
        assert_eq!(calls, 10 + 10);
        assert_eq!(out.batches.len(), 10);
        let trace = h.best_so_far().unwrap();
        assert!(trace.windows(2).all(|w| w[1].1 <= w[0].1));
        let first_ego = h
            .observations()
            .iter()
            .position(|o| o.phase == Phase::Ego)
            .unwrap();
        assert!(h.observations()[first_ego..]
            .iter()
            .all(|o| o.phase == Phase::Ego));
        for rec in &out.batches {
            assert_eq!(rec.trained_on, rec.first_eval_id);
        }
        assert!(h.best().unwrap().internal < 0.05);
    }

    #[test]
    fn runs_are_reproducible_and_batches_truncate() {
        let space = square_space();
        let plan = BudgetPlan {
            n_init: 6,
            n_opt: 7,
            q: 3,
        };
        let cfg = DriverConfig {
            init_parallelism: 4,
            ..quick_config(5)
        };
        let a = EgoDriver::new(&space, &quadratic, plan, cfg.clone())
            .run(|_, _| {})
            .unwrap();
        let b = EgoDriver::new(&space, &quadratic, plan, cfg)
            .run(|_, _| {})
            .unwrap();
        assert_eq!(untimed(&a.history), untimed(&b.history));
        assert_eq!(a.history.len(), 13);
        let sizes: Vec<usize> = a.batches.iter().map(|r| r.size).collect();
        assert_eq!(sizes, vec![3, 3, 1]);
    }

    #[test]
    fn replay_reproduces_without_calling_the_black_box() {
        let space = square_space();
        let plan = BudgetPlan {
            n_init: 6,
            n_opt: 6,
            q: 2,
        };
        let full = EgoDriver::new(&space, &quadratic, plan, quick_config(2))
            .run(|_, _| {})
            .unwrap();
        let calls = AtomicUsize::new(0);
        let counting = |x: &[f64], c: &EvalContext| {
            calls.fetch_add(1, Ordering::SeqCst);
            quadratic(x, c)
        };
        let prefix = &full.history.observations()[..8];
        let resumed = EgoDriver::new(&space, &counting, plan, quick_config(2))
            .run_with_replay(prefix, |_, _| {})
            .unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 4);
        assert_eq!(untimed(&resumed.history), untimed(&full.history));
        assert_eq!(
            resumed.history.observations()[..8],
            full.history.observations()[..8]
        );

        let other = EgoDriver::new(&space, &quadratic, plan, quick_config(3));
        assert!(other.run_with_replay(prefix, |_, _| {}).is_err());
    }

    #[test]
    fn failures_are_retried_then_imputed() {
        let space = square_space();
        let attempts = AtomicUsize::new(0);
        // eval 2 always fails, eval 4 fails once
        let flaky = |x: &[f64], c: &EvalContext| {
            if c.eval_id == 4 && attempts.fetch_add(1, Ordering::SeqCst) == 0 {
                return Err(EvalError("transient".into()));
            }
            if c.eval_id == 2 {
                return Err(EvalError("broken".into()));
            }
            quadratic(x, c)
        };
        let plan = BudgetPlan {
            n_init: 6,
            n_opt: 2,
            q: 2,
        };
        let out = EgoDriver::new(&space, &flaky, plan, quick_config(4))
            .run(|_, _| {})
            .unwrap();
        let h = out.history.observations();
        assert_eq!(h.len(), 8);
        assert_eq!(h[2].status, Status::Failed);
        assert!(h[2].imputed());
        assert_eq!(h[4].status, Status::Ok);
        // imputed with the worst value known when it failed
        let worst = h[..2].iter().map(|o| o.internal).fold(f64::MIN, f64::max);
        assert_eq!(h[2].internal, worst);
    }

    #[test]
    fn all_failing_init_aborts_with_partial_history() {
        let space = square_space();
        let broken =
            |_: &[f64], _: &EvalContext| -> Result<f64, EvalError> { Err(EvalError("no".into())) };
        let plan = BudgetPlan {
            n_init: 4,
            n_opt: 2,
            q: 1,
        };
        let err = EgoDriver::new(&space, &broken, plan, quick_config(0))
            .run(|_, _| {})
            .unwrap_err();
        assert_eq!(err.history.len(), 4);
    }

    #[test]
    fn maximize_negates_internally() {
        let space = square_space();
        let neg = |x: &[f64], c: &EvalContext| quadratic(x, c).map(|v| -v);
        let plan = BudgetPlan {
            n_init: 6,
            n_opt: 4,
            q: 2,
        };
        let cfg = DriverConfig {
            direction: Direction::Maximize,
            ..quick_config(8)
        };
        let out = EgoDriver::new(&space, &neg, plan, cfg)
            .run(|_, _| {})
            .unwrap();
        for o in out.history.observations() {
            assert_eq!(o.internal, -o.response);
        }
        let s = out.history.phase_summary(Direction::Maximize).unwrap();
        assert!(s.init_best <= 0.0);
    }

    #[test]
    fn latency_is_recorded() {
        let space = square_space();
        let slow = crate::benchbox::with_latency(quadratic, 0.1).unwrap();
        let plan = BudgetPlan {
            n_init: 4,
            n_opt: 1,
            q: 1,
        };
        let cfg = DriverConfig {
            init_parallelism: 4,
            ..quick_config(1)
        };
        let t = Instant::now();
        let out = EgoDriver::new(&space, &slow, plan, cfg)
            .run(|_, _| {})
            .unwrap();
        assert!(out
            .history
            .observations()
            .iter()
            .all(|o| o.duration_s >= 0.1));
        // four init evaluations ran concurrently
        assert!(t.elapsed().as_secs_f64() < 0.45);
    }
}
