//! History CSV: `eval_id,phase,status,duration_s,<parameters...>,response`.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use egohpo::{Direction, Observation, Phase, SearchSpace, Status};

const LEADING: [&str; 4] = ["eval_id", "phase", "status", "duration_s"];

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub eval_id: usize,
    pub phase: Phase,
    pub status: Status,
    pub duration_s: f64,
    pub raw: Vec<f64>,
    pub response: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryTable {
    pub param_names: Vec<String>,
    pub rows: Vec<HistoryRow>,
}

/// Shortest decimal string that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

impl HistoryTable {
    pub fn from_observations(param_names: Vec<String>, obs: &[Observation]) -> Self {
        let rows = obs
            .iter()
            .map(|o| HistoryRow {
                eval_id: o.eval_id,
                phase: o.phase,
                status: o.status,
                duration_s: o.duration_s,
                raw: o.raw.clone(),
                response: o.response,
            })
            .collect();
        Self { param_names, rows }
    }

    pub fn header(&self) -> Vec<String> {
        LEADING
            .iter()
            .map(|s| s.to_string())
            .chain(self.param_names.iter().cloned())
            .chain(["response".to_string()])
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(self.header()).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![
                r.eval_id.to_string(),
                r.phase.to_string(),
                r.status.to_string(),
                fmt_f64(r.duration_s),
            ];
            rec.extend(r.raw.iter().map(|v| fmt_f64(*v)));
            rec.push(fmt_f64(r.response));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("ascii output")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        ensure!(
            header.len() >= LEADING.len() + 2
                && header[..LEADING.len()] == LEADING
                && header.last().map(String::as_str) == Some("response"),
            "history header must be `eval_id,phase,status,duration_s,<parameters...>,response`, got `{}`",
            header.join(",")
        );
        let param_names = header[LEADING.len()..header.len() - 1].to_vec();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.with_context(|| format!("history line {line}"))?;
            let field = |j: usize| rec.get(j).unwrap_or_default();
            let num = |j: usize| -> Result<f64> {
                field(j)
                    .parse::<f64>()
                    .with_context(|| format!("history line {line}: `{}` is not a number", field(j)))
            };
            let eval_id: usize = field(0)
                .parse()
                .with_context(|| format!("history line {line}: bad eval_id `{}`", field(0)))?;
            ensure!(
                eval_id == rows.len(),
                "history line {line}: eval_id {eval_id} out of sequence"
            );
            let raw = (0..param_names.len())
                .map(|j| num(LEADING.len() + j))
                .collect::<Result<Vec<_>>>()?;
            rows.push(HistoryRow {
                eval_id,
                phase: field(1)
                    .parse()
                    .with_context(|| format!("history line {line}"))?,
                status: field(2)
                    .parse()
                    .with_context(|| format!("history line {line}"))?,
                duration_s: num(3)?,
                raw,
                response: num(header.len() - 1)?,
            });
        }
        Ok(Self { param_names, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read history {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("malformed history {}", path.display()))
    }

    /// Replaces `path` in one step (write to a sibling file, then rename).
    pub fn write_atomic(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    /// Observations over `space`, whose parameter names must match the header.
    pub fn to_observations(
        &self,
        space: &SearchSpace,
        direction: Direction,
    ) -> Result<Vec<Observation>> {
        let names: Vec<&str> = space.names().collect();
        if names != self.param_names {
            bail!(
                "history parameters [{}] do not match the config [{}]",
                self.param_names.join(", "),
                names.join(", ")
            );
        }
        self.rows
            .iter()
            .map(|r| {
                let u = space
                    .to_unit(&r.raw)
                    .with_context(|| format!("history row {}", r.eval_id))?;
                Ok(Observation {
                    eval_id: r.eval_id,
                    phase: r.phase,
                    u,
                    raw: r.raw.clone(),
                    response: r.response,
                    internal: direction.to_internal(r.response),
                    status: r.status,
                    duration_s: r.duration_s,
                })
            })
            .collect()
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path.file_name().context("output path has no file name")?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = std::fs::File::create(&tmp)
            .with_context(|| format!("cannot write {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use egohpo::ParameterSpec;

    fn table() -> HistoryTable {
        HistoryTable {
            param_names: vec!["a".into(), "b".into()],
            rows: vec![
                HistoryRow {
                    eval_id: 0,
                    phase: Phase::Init,
                    status: Status::Ok,
                    duration_s: 0.125,
                    raw: vec![0.1 + 0.2, 3.0],
                    response: -1e-300,
                },
                HistoryRow {
                    eval_id: 1,
                    phase: Phase::Ego,
                    status: Status::Failed,
                    duration_s: 1.0 / 3.0,
                    raw: vec![1e-7, 2.0],
                    response: 12345.678,
                },
            ],
        }
    }

    #[test]
    fn exact_header_and_round_trip() {
        let t = table();
        let text = t.to_csv();
        assert!(text.starts_with("eval_id,phase,status,duration_s,a,b,response\n"));
        assert!(!text.contains('\r'));
        assert_eq!(HistoryTable::parse(&text).unwrap(), t);
        assert!(text.contains("0.30000000000000004"));
    }

    #[test]
    fn malformed_input() {
        assert!(HistoryTable::parse("eval_id,phase,status,a,response\n").is_err());
        let t = table().to_csv();
        assert!(HistoryTable::parse(&t.replace("1,ego", "5,ego")).is_err());
        assert!(HistoryTable::parse(&t.replace("failed", "broken")).is_err());
        assert!(HistoryTable::parse(&t.replace("12345.678", "many")).is_err());
    }

    #[test]
    fn observation_conversion_checks_names() {
        let space = SearchSpace::new(vec![
            ParameterSpec::new("a", 0.0, 1.0),
            ParameterSpec::new("b", 0.0, 4.0),
        ])
        .unwrap();
        let obs = table()
            .to_observations(&space, Direction::Maximize)
            .unwrap();
        assert_eq!(obs[1].internal, -12345.678);
        assert_eq!(
            HistoryTable::from_observations(vec!["a".into(), "b".into()], &obs),
            table()
        );
        let other = SearchSpace::new(vec![
            ParameterSpec::new("b", 0.0, 1.0),
            ParameterSpec::new("a", 0.0, 4.0),
        ])
        .unwrap();
        assert!(table()
            .to_observations(&other, Direction::Minimize)
            .is_err());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        std::fs::write(&p, "old").unwrap();
        table().write_atomic(&p).unwrap();
        assert_eq!(HistoryTable::read(&p).unwrap(), table());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
