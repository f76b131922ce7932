use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use egohpo::benchbox::{with_latency, with_noise, Builtin, CommandEvaluator};
use egohpo::{
    ablation, anova_sequential, initial_design, ss_percentages, BatchRecord, Direction, EgoDriver,
    EvalContext, EvalError, Evaluator, Matrix, Observation, PhaseSummary, RunHistory, Status,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{BlackboxKind, RunConfig};
use crate::history::{fmt_f64, write_atomic, HistoryTable};

pub const HISTORY_FILE: &str = "history.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const META_FILE: &str = "meta.json";

enum Blackbox {
    Builtin(Builtin),
    Command(CommandEvaluator),
}

impl Evaluator for Blackbox {
    fn evaluate(&self, raw: &[f64], ctx: &EvalContext) -> Result<f64, EvalError> {
        match self {
            Blackbox::Builtin(b) => b.evaluate(raw, ctx),
            Blackbox::Command(c) => c.evaluate(raw, ctx),
        }
    }
}

fn blackbox(cfg: &RunConfig) -> Result<impl Evaluator> {
    let bb = &cfg.blackbox;
    let inner = match bb.kind {
        BlackboxKind::Builtin => Blackbox::Builtin(bb.builtin()?.context("missing builtin")?),
        BlackboxKind::Command => {
            let names = cfg.parameters.iter().map(|p| p.name.clone()).collect();
            Blackbox::Command(CommandEvaluator::new(
                bb.command.clone().context("missing command")?,
                names,
            )?)
        }
    };
    Ok(with_noise(
        with_latency(inner, bb.latency_s)?,
        bb.noise_sd,
        cfg.seed,
    )?)
}

fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    write_atomic(path, &w.into_inner()?)
}

/// Writes the initial Latin-hypercube design in raw units.
pub fn cmd_design(cfg: &RunConfig, out: &Path) -> Result<()> {
    let space = cfg.space()?;
    let design = initial_design(&space, cfg.budget.n_init, cfg.seed)?;
    let mut header = vec!["eval_id"];
    header.extend(space.names());
    let rows = design
        .points
        .rows_iter()
        .enumerate()
        .map(|(i, u)| {
            let raw = space.from_unit(u)?;
            Ok(std::iter::once(i.to_string())
                .chain(raw.into_iter().map(fmt_f64))
                .collect())
        })
        .collect::<Result<Vec<Vec<String>>>>()?;
    write_csv(out, &header, rows)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub resume: bool,
    /// Caps concurrent evaluations.
    pub parallel: Option<usize>,
    /// Record wall-clock durations; when off every `duration_s` is 0 and
    /// the history file depends only on the config.
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub name: String,
    pub config_digest: String,
}

#[derive(Debug, Serialize)]
struct BestPoint {
    eval_id: usize,
    params: serde_json::Map<String, serde_json::Value>,
    response: f64,
}

/// Runs the optimization and writes `history.csv`, `summary.json` and
/// `meta.json` into `out_dir`. Returns the path of the summary.
pub fn cmd_run(cfg: &RunConfig, out_dir: &Path, opts: &RunOptions) -> Result<PathBuf> {
    let space = cfg.space()?;
    let names: Vec<String> = space.names().map(str::to_string).collect();
    fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let history_path = out_dir.join(HISTORY_FILE);
    let meta_path = out_dir.join(META_FILE);
    let meta = RunMeta {
        name: cfg.name.clone(),
        config_digest: cfg.digest(),
    };

    let replay: Vec<Observation> = if opts.resume {
        let old: RunMeta = serde_json::from_str(
            &fs::read_to_string(&meta_path)
                .with_context(|| format!("cannot resume: {} is missing", meta_path.display()))?,
        )?;
        ensure!(
            old.config_digest == meta.config_digest,
            "cannot resume: {} was produced by a different configuration",
            out_dir.display()
        );
        if history_path.exists() {
            HistoryTable::read(&history_path)?.to_observations(&space, cfg.direction)?
        } else {
            Vec::new()
        }
    } else {
        if history_path.exists() {
            bail!(
                "{} already exists; pass --resume to continue it",
                history_path.display()
            );
        }
        Vec::new()
    };
    write_atomic(&meta_path, serde_json::to_string_pretty(&meta)?.as_bytes())?;

    let evaluator = blackbox(cfg)?;
    let driver = EgoDriver::new(
        &space,
        &evaluator,
        cfg.plan(),
        cfg.driver_config(opts.parallel),
    );
    let timing = opts.timing;
    let snapshot = |h: &RunHistory| {
        let mut obs = h.observations().to_vec();
        if !timing {
            obs.iter_mut().for_each(|o| o.duration_s = 0.0);
        }
        HistoryTable::from_observations(names.clone(), &obs)
    };
    let mut write_err = None;
    let result = driver.run_with_replay(&replay, |h, _| {
        if let Err(e) = snapshot(h).write_atomic(&history_path) {
            write_err.get_or_insert(e);
        }
    });
    if let Some(e) = write_err {
        return Err(e);
    }
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            snapshot(&e.history).write_atomic(&history_path)?;
            return Err(anyhow::Error::new(e.error).context(format!(
                "run aborted after {} evaluations; partial history in {}",
                e.history.len(),
                history_path.display()
            )));
        }
    };
    snapshot(&outcome.history).write_atomic(&history_path)?;

    let h = &outcome.history;
    let best = h.best().map(|o| BestPoint {
        eval_id: o.eval_id,
        params: names
            .iter()
            .cloned()
            .zip(o.raw.iter().map(|v| json!(v)))
            .collect(),
        response: o.response,
    });
    let phases: Option<PhaseSummary> = h.phase_summary(cfg.direction).ok();
    let refits: Vec<&BatchRecord> = outcome.batches.iter().collect();
    let summary = json!({
        "name": cfg.name,
        "config_digest": meta.config_digest,
        "direction": cfg.direction,
        "evaluations": h.len(),
        "failed": h.observations().iter().filter(|o| o.status == Status::Failed).count(),
        "best": best,
        "phase_summary": phases,
        "final_model": outcome.final_model,
        "refits": refits,
    });
    let summary_path = out_dir.join(SUMMARY_FILE);
    write_atomic(
        &summary_path,
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    Ok(summary_path)
}

/// ANOVA of the successful observations on their unit-cube coordinates.
/// Writes `anova.csv`, `anova.txt`, `ss_percent.csv` and `ablation.csv`.
pub fn cmd_sensitivity(history_path: &Path, cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let space = cfg.space()?;
    let obs = HistoryTable::read(history_path)?.to_observations(&space, cfg.direction)?;
    let ok: Vec<&Observation> = obs.iter().filter(|o| o.is_ok()).collect();
    let d = space.dim();
    ensure!(
        ok.len() >= d + 5,
        "sensitivity needs at least {} successful observations, history has {}",
        d + 5,
        ok.len()
    );
    let y: Vec<f64> = ok.iter().map(|o| o.response).collect();
    ensure!(
        y.iter().any(|v| *v != y[0]),
        "zero variance: every successful response equals {}",
        y[0]
    );
    let x = Matrix::from_rows(&ok.iter().map(|o| o.u.as_slice()).collect::<Vec<_>>())?;
    let names: Vec<String> = space.names().map(str::to_string).collect();
    let table = anova_sequential(&x, &y, &names)?;
    let pct = ss_percentages(&table)?;
    let abl = ablation(&x, &y, &names)?;

    fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    write_csv(
        &out_dir.join("anova.csv"),
        &["factor", "df", "sum_sq", "mean_sq", "f_value", "p_value"],
        table.all_rows().map(|r| {
            vec![
                r.factor.clone(),
                r.df.to_string(),
                fmt_f64(r.ss),
                fmt_f64(r.ms),
                opt(r.f_value),
                opt(r.p_value),
            ]
        }),
    )?;
    write_atomic(&out_dir.join("anova.txt"), table.to_string().as_bytes())?;
    write_csv(
        &out_dir.join("ss_percent.csv"),
        &["factor", "percent"],
        pct.into_iter().map(|(f, p)| vec![f, fmt_f64(p)]),
    )?;
    write_csv(
        &out_dir.join("ablation.csv"),
        &["factor", "r2_full", "r2_without", "delta_r2"],
        abl.into_iter().map(|a| {
            vec![
                a.factor,
                fmt_f64(a.r2_full),
                fmt_f64(a.r2_without),
                fmt_f64(a.delta_r2),
            ]
        }),
    )?;
    Ok(())
}

/// Convergence trace: one row per observation with the best response so far
/// (empty until the first success).
pub fn cmd_report(history_path: &Path, direction: Direction, out: &Path) -> Result<()> {
    let table = HistoryTable::read(history_path)?;
    ensure!(
        !table.rows.is_empty(),
        "history {} is empty",
        history_path.display()
    );
    let mut best: Option<f64> = None;
    let rows = table.rows.iter().map(|r| {
        if r.status == Status::Ok && best.is_none_or(|b| direction.better(r.response, b)) {
            best = Some(r.response);
        }
        vec![
            r.eval_id.to_string(),
            fmt_f64(r.response),
            best.map(fmt_f64).unwrap_or_default(),
            r.phase.to_string(),
        ]
    });
    write_csv(
        out,
        &["eval_id", "response", "best_so_far", "phase"],
        rows.collect::<Vec<_>>(),
    )
}
