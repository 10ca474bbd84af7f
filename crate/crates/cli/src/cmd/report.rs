//! `apr report`: plot-ready tables from metrics and fit outputs.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::PathBuf;

use apr_core::fit::FitResult;
use apr_core::metrics::{self, AgentReport};
use clap::Args;
use serde::{Deserialize, Serialize};

use super::metrics::read_fits;
use crate::error::CliError;
use crate::manifest::{self, Recorder};

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics reports (JSON) from `apr metrics`.
    #[arg(long = "metrics")]
    pub metrics: Vec<PathBuf>,
    /// Fit results (`fit.json`) from `apr fit`.
    #[arg(long = "fit")]
    pub fits: Vec<PathBuf>,
    #[arg(long, default_value = "report")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSpec {
    pub metrics: Vec<PathBuf>,
    pub fits: Vec<PathBuf>,
    pub out_dir: PathBuf,
}

pub fn resolve(args: &ReportArgs) -> Result<ReportSpec, CliError> {
    if args.metrics.is_empty() && args.fits.is_empty() {
        return Err(CliError::Usage("report needs at least one --metrics or --fit file".into()));
    }
    Ok(ReportSpec { metrics: args.metrics.clone(), fits: args.fits.clone(), out_dir: args.out_dir.clone() })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.4}"))
}

/// One row per fit: the (β, κ_f) coordinates plus success where a matching
/// metrics report exists.
pub fn cognitive_space(fits: &[FitResult], reports: &[AgentReport]) -> String {
    let mut out = String::from("model\treasoning\tbeta\tkappa_f\tkappa_s\tlog_theta\ttest_nll\tsuccess\tinference_loss\n");
    for f in fits {
        let r = reports.iter().find(|r| r.agent_id == f.model && r.condition == f.reasoning);
        let _ = writeln!(
            out,
            "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}",
            f.model,
            f.reasoning,
            f.params.beta,
            f.params.kappa_f,
            f.params.kappa_s,
            f.params.log_theta,
            fmt_opt(f.test_nll),
            fmt_opt(r.map(|r| r.success_overall)),
            fmt_opt(r.map(|r| r.inference_loss)),
        );
    }
    out
}

pub fn run(spec: &ReportSpec) -> Result<(), CliError> {
    let recorder = Recorder::start("report");
    let mut reports: Vec<AgentReport> = Vec::new();
    for p in &spec.metrics {
        let text = std::fs::read_to_string(p).map_err(CliError::io(p))?;
        let rs: Vec<AgentReport> =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
        reports.extend(rs);
    }
    let fits = read_fits(&spec.fits)?;
    std::fs::create_dir_all(&spec.out_dir).map_err(CliError::io(&spec.out_dir))?;
    let mut outputs = Vec::new();
    if !reports.is_empty() {
        let path = spec.out_dir.join("per_n.tsv");
        manifest::write_text(&path, &metrics::per_n_plot_data(&reports))?;
        outputs.push(path);
        let path = spec.out_dir.join("agents.tsv");
        manifest::write_text(&path, &metrics::report_table(&reports))?;
        outputs.push(path);
    }
    if !fits.is_empty() {
        let path = spec.out_dir.join("cognitive_space.tsv");
        manifest::write_text(&path, &cognitive_space(&fits, &reports))?;
        outputs.push(path);
    }
    let mut inputs = spec.metrics.clone();
    inputs.extend(spec.fits.iter().cloned());
    recorder.finish(&manifest::for_dir(&spec.out_dir), spec, inputs, outputs, BTreeMap::new())?;
    Ok(())
}
