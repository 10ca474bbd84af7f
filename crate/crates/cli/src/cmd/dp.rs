//! `apr solve-dp`: exact planner tables.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use apr_core::agents::dp::DpPolicy;
use apr_core::env::arm_letter;
use apr_core::TaskConfig;
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::agent;
use crate::config;
use crate::error::CliError;
use crate::manifest::{self, Recorder};

#[derive(Debug, Args)]
pub struct SolveDpArgs {
    #[arg(long)]
    pub task: Option<PathBuf>,
    #[arg(long, default_value = "dp")]
    pub out_dir: PathBuf,
    /// Skip the per-state policy table and write only the summary.
    #[arg(long)]
    pub summary_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveDpSpec {
    pub task: TaskConfig,
    pub out_dir: PathBuf,
    pub policy_table: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpSummary {
    pub config_digest: String,
    pub root_value: f64,
    pub n_states: usize,
    pub solve_secs: f64,
}

pub fn resolve(args: &SolveDpArgs) -> Result<SolveDpSpec, CliError> {
    Ok(SolveDpSpec {
        task: config::load(args.task.as_deref())?,
        out_dir: args.out_dir.clone(),
        policy_table: !args.summary_only,
    })
}

fn write_table(policy: &DpPolicy, path: &std::path::Path) -> std::io::Result<()> {
    let k = policy.config().k_arms;
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "t")?;
    for a in 0..k {
        let l = arm_letter(a);
        write!(w, "\t{l}_red\t{l}_green")?;
    }
    writeln!(w, "\tvalue\tpreference")?;
    let all = policy.config().all_arms();
    for t in 0..policy.config().n_max {
        for (counts, value) in policy.level_values(t) {
            write!(w, "{t}")?;
            for c in &counts {
                write!(w, "\t{}\t{}", c.red, c.green)?;
            }
            // Arms in preference order; the first available one is played.
            let mut avail = all;
            let mut order = String::new();
            while let Some(a) = policy.action(&counts, avail) {
                order.push(arm_letter(a));
                avail.remove(a);
            }
            writeln!(w, "\t{value:.12}\t{order}")?;
        }
    }
    w.flush()
}

pub fn run(spec: &SolveDpSpec) -> Result<(), CliError> {
    let recorder = Recorder::start("solve-dp");
    spec.task.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    std::fs::create_dir_all(&spec.out_dir).map_err(CliError::io(&spec.out_dir))?;
    let started = Instant::now();
    let policy = agent::solve(&spec.task)?;
    let summary = DpSummary {
        config_digest: spec.task.digest(),
        root_value: policy.root_value(),
        n_states: policy.n_states(),
        solve_secs: started.elapsed().as_secs_f64(),
    };
    let mut outputs = vec![spec.out_dir.join("summary.json")];
    manifest::write_json(&outputs[0], &summary)?;
    if spec.policy_table {
        let path = spec.out_dir.join("policy.tsv");
        write_table(&policy, &path).map_err(CliError::io(&path))?;
        outputs.push(path);
    }
    tracing::info!(root_value = summary.root_value, states = summary.n_states, "solved");
    recorder.finish(&manifest::for_dir(&spec.out_dir), spec, vec![], outputs, BTreeMap::new())?;
    Ok(())
}
