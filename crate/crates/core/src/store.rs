//! Persistence: JSON-lines trajectory files and delimited parameter tables.
//!
//! Files use letters for arms (`"A"` is arm 0); indices are internal. Every
//! line is one game, so a torn write can only damage the line it touches.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{arm_letter, letter_arm, ArmSet, FinalDecision, Outcome, Round, TaskConfig, Trajectory};
use crate::fit::FitResult;
use crate::mech::MechParams;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: malformed JSON: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {line}: field `{field}`: {reason}")]
    Schema { line: usize, field: String, reason: String },
    #[error("table row {row}: {reason}")]
    Table { row: usize, reason: String },
    #[error("nothing to export")]
    Empty,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundRecord {
    pub t: usize,
    pub available: Vec<String>,
    pub choice: Option<String>,
    pub valid: bool,
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalRecord {
    pub choice: Option<String>,
    pub valid: bool,
    pub correct: bool,
    pub score: i64,
}

/// Serialized form of a [`Trajectory`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub schema_version: u32,
    pub game_id: String,
    pub agent_id: String,
    pub condition: String,
    pub config_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub z: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub rounds: Vec<RoundRecord>,
    #[serde(rename = "final")]
    pub final_: FinalRecord,
    /// Path of the raw request/response transcript, relative to the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    /// Why the game stopped early; remaining rounds are logged as non-responses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

fn letter(arm: usize) -> String {
    arm_letter(arm).to_string()
}

impl TrajectoryRecord {
    pub fn from_trajectory(t: &Trajectory) -> Self {
        TrajectoryRecord {
            schema_version: SCHEMA_VERSION,
            game_id: t.game_id.clone(),
            agent_id: t.agent_id.clone(),
            condition: t.condition.clone(),
            config_digest: t.config_digest.clone(),
            seed: t.seed,
            z: letter(t.biased_arm),
            n: t.horizon,
            rounds: t
                .rounds
                .iter()
                .map(|r| RoundRecord {
                    t: r.t,
                    available: r.available.iter().map(letter).collect(),
                    choice: r.choice.map(letter),
                    valid: r.valid,
                    outcome: r.outcome,
                })
                .collect(),
            final_: FinalRecord {
                choice: t.final_decision.choice.map(letter),
                valid: t.final_decision.valid,
                correct: t.final_decision.correct,
                score: t.final_decision.score,
            },
            transcript: None,
            aborted: None,
        }
    }

    /// Checks every invariant for a `k_arms` task and converts to a trajectory.
    /// Errors carry the offending field; the caller adds the line number.
    pub fn to_trajectory(&self, k_arms: usize) -> Result<Trajectory, (String, String)> {
        let fail = |field: &str, reason: String| Err((field.to_string(), reason));
        if self.schema_version != SCHEMA_VERSION {
            return fail("schema_version", format!("unsupported version {}", self.schema_version));
        }
        let arm = |field: &str, s: &str| -> Result<usize, (String, String)> {
            let mut chars = s.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) if c.is_ascii_uppercase() => match letter_arm(c) {
                    Some(a) if a < k_arms => Ok(a),
                    _ => Err((field.to_string(), format!("letter {s:?} outside A..{}", arm_letter(k_arms - 1)))),
                },
                _ => Err((field.to_string(), format!("{s:?} is not a single upper-case letter"))),
            }
        };
        let biased_arm = arm("z", &self.z)?;
        if self.rounds.len() != self.n {
            return fail("N", format!("{} rounds recorded but N = {}", self.rounds.len(), self.n));
        }
        let mut rounds = Vec::with_capacity(self.rounds.len());
        for r in &self.rounds {
            let mut available = ArmSet::empty();
            for l in &r.available {
                available.insert(arm("rounds.available", l)?);
            }
            let choice = r.choice.as_deref().map(|c| arm("rounds.choice", c)).transpose()?;
            rounds.push(Round { t: r.t, available, choice, valid: r.valid, outcome: r.outcome });
        }
        let f = &self.final_;
        let traj = Trajectory {
            game_id: self.game_id.clone(),
            agent_id: self.agent_id.clone(),
            condition: self.condition.clone(),
            config_digest: self.config_digest.clone(),
            seed: self.seed,
            biased_arm,
            horizon: self.n,
            rounds,
            final_decision: FinalDecision {
                choice: f.choice.as_deref().map(|c| arm("final.choice", c)).transpose()?,
                valid: f.valid,
                correct: f.correct,
                score: f.score,
            },
        };
        traj.validate(k_arms).map_err(|e| (e.field.to_string(), e.reason))?;
        Ok(traj)
    }
}

/// Writes `records` to `path`, replacing any existing file.
pub fn write_records(path: &Path, records: &[TrajectoryRecord]) -> Result<(), StoreError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).expect("records serialize");
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<(), StoreError> {
    let records: Vec<_> = trajectories.iter().map(TrajectoryRecord::from_trajectory).collect();
    write_records(path, &records)
}

/// Parses every line without task-specific checks beyond JSON shape.
pub fn read_records(path: &Path) -> Result<Vec<TrajectoryRecord>, StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| StoreError::Json { line: i + 1, source })?;
        out.push(rec);
    }
    Ok(out)
}

/// Reads and validates a trajectory file against `config`, stopping at the
/// first violation.
pub fn read_trajectories(path: &Path, config: &TaskConfig) -> Result<Vec<Trajectory>, StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let digest = config.digest();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, i + 1, config.k_arms, &digest)?);
    }
    Ok(out)
}

/// Parses one line; `line` is 1-based and only used for diagnostics.
pub fn parse_line(text: &str, line: usize, k_arms: usize, digest: &str) -> Result<Trajectory, StoreError> {
    let rec: TrajectoryRecord =
        serde_json::from_str(text).map_err(|source| StoreError::Json { line, source })?;
    if rec.config_digest != digest {
        return Err(StoreError::Schema {
            line,
            field: "config_digest".into(),
            reason: format!("{} does not match the task config ({digest})", rec.config_digest),
        });
    }
    rec.to_trajectory(k_arms).map_err(|(field, reason)| StoreError::Schema { line, field, reason })
}

/// Append-only writer shared by concurrent producers. Each record is
/// serialized up front and written with a single call under the lock.
#[derive(Debug)]
pub struct TrajectoryWriter {
    path: PathBuf,
    file: Mutex<File>,
}

impl TrajectoryWriter {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
        Ok(TrajectoryWriter { path: path.to_path_buf(), file: Mutex::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &TrajectoryRecord) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(record).expect("records serialize");
        line.push(b'\n');
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(&line).map_err(io_err(&self.path))?;
        file.flush().map_err(io_err(&self.path))
    }

    pub fn append_trajectory(&self, t: &Trajectory) -> Result<(), StoreError> {
        self.append(&TrajectoryRecord::from_trajectory(t))
    }
}

pub const PARAM_COLUMNS: [&str; 10] =
    ["Model", "Reasoning", "ω_s", "ω_f", "β", "κ_s", "κ_f", "log θ", "Train NLL", "Test NLL"];

/// One row of a parameter table.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamRow {
    pub model: String,
    pub reasoning: String,
    pub params: MechParams,
    pub train_nll: Option<f64>,
    pub test_nll: Option<f64>,
}

impl From<&FitResult> for ParamRow {
    fn from(f: &FitResult) -> Self {
        ParamRow {
            model: f.model.clone(),
            reasoning: f.reasoning.clone(),
            params: f.params.clone(),
            train_nll: Some(f.train_nll),
            test_nll: f.test_nll,
        }
    }
}

pub fn format_vector(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

fn format_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.3}"))
}

/// Tab-separated parameter table with a header line.
pub fn param_table(rows: &[ParamRow]) -> Result<String, StoreError> {
    if rows.is_empty() {
        return Err(StoreError::Empty);
    }
    let mut out = PARAM_COLUMNS.join("\t");
    out.push('\n');
    for r in rows {
        let p = &r.params;
        let cells = [
            r.model.clone(),
            r.reasoning.clone(),
            format_vector(&p.omega_s),
            format_vector(&p.omega_f),
            format!("{:.3}", p.beta),
            format!("{:.3}", p.kappa_s),
            format!("{:.3}", p.kappa_f),
            format!("{:.3}", p.log_theta),
            format_opt(r.train_nll),
            format_opt(r.test_nll),
        ];
        out.push_str(&cells.join("\t"));
        out.push('\n');
    }
    Ok(out)
}

pub fn export_param_table(fits: &[FitResult]) -> Result<String, StoreError> {
    param_table(&fits.iter().map(ParamRow::from).collect::<Vec<_>>())
}

/// Inverse of [`param_table`].
pub fn parse_param_table(text: &str) -> Result<Vec<ParamRow>, StoreError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or(StoreError::Empty)?.split('\t').collect();
    if header != PARAM_COLUMNS {
        return Err(StoreError::Table { row: 0, reason: format!("unexpected header {header:?}") });
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let row = i + 1;
            let bad = |reason: String| StoreError::Table { row, reason };
            let cells: Vec<&str> = line.split('\t').collect();
            if cells.len() != PARAM_COLUMNS.len() {
                return Err(bad(format!("{} cells, expected {}", cells.len(), PARAM_COLUMNS.len())));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
            let opt = |s: &str| if s.trim() == "NA" { Ok(None) } else { num(s).map(Some) };
            let vector = |s: &str| -> Result<Vec<f64>, StoreError> {
                let inner = s
                    .trim()
                    .strip_prefix('[')
                    .and_then(|s| s.strip_suffix(']'))
                    .ok_or_else(|| bad(format!("{s:?} is not a bracketed vector")))?;
                inner.split(',').map(num).collect()
            };
            Ok(ParamRow {
                model: cells[0].to_string(),
                reasoning: cells[1].to_string(),
                params: MechParams {
                    omega_s: vector(cells[2])?,
                    omega_f: vector(cells[3])?,
                    beta: num(cells[4])?,
                    kappa_s: num(cells[5])?,
                    kappa_f: num(cells[6])?,
                    log_theta: num(cells[7])?,
                },
                train_nll: opt(cells[8])?,
                test_nll: opt(cells[9])?,
            })
        })
        .collect()
}
