//! Behavioural metrics: success rates, counterfactual MAP rescoring, the
//! sampling/inference loss decomposition and invalid-choice accounting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayes;
use crate::env::{TaskConfig, Trajectory};

/// z-value for two-sided 95% normal intervals.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Buckets smaller than this get their intervals flagged.
pub const MIN_BUCKET: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("dataset is empty")]
    Empty,
    #[error("config digest mismatch: dataset has {dataset}, reference has {reference}")]
    ConfigMismatch { dataset: String, reference: String },
}

/// A binomial proportion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rate {
    pub hits: usize,
    pub n: usize,
}

impl Rate {
    pub fn new(hits: usize, n: usize) -> Self {
        Rate { hits, n }
    }

    pub fn value(self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.hits as f64 / self.n as f64
        }
    }

    pub fn std_err(self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let p = self.value();
        (p * (1.0 - p) / self.n as f64).sqrt()
    }

    /// Half-width of the 95% normal-approximation interval.
    pub fn ci95(self) -> f64 {
        Z95 * self.std_err()
    }

    /// Standard error under a known true rate, for "± 3σ" style checks.
    pub fn sigma_at(self, p: f64) -> f64 {
        (p * (1.0 - p) / self.n.max(1) as f64).sqrt()
    }

    pub fn low_count(self) -> bool {
        self.n < MIN_BUCKET
    }

    fn add(&mut self, hit: bool) {
        self.n += 1;
        self.hits += hit as usize;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessStats {
    /// Pooled over all games.
    pub overall: Rate,
    pub by_n: BTreeMap<usize, Rate>,
    /// Mean of the per-N rates, each horizon weighted equally.
    pub uniform_over_n: f64,
    /// 95% half-width of `uniform_over_n`.
    pub uniform_ci95: f64,
}

impl SuccessStats {
    fn from_hits(items: impl Iterator<Item = (usize, bool)>) -> Self {
        let mut overall = Rate::default();
        let mut by_n: BTreeMap<usize, Rate> = BTreeMap::new();
        for (n, hit) in items {
            overall.add(hit);
            by_n.entry(n).or_default().add(hit);
        }
        let buckets = by_n.len().max(1) as f64;
        let uniform_over_n = by_n.values().map(|r| r.value()).sum::<f64>() / buckets;
        let var: f64 = by_n.values().map(|r| r.std_err().powi(2)).sum();
        SuccessStats {
            overall,
            by_n,
            uniform_over_n,
            uniform_ci95: Z95 * var.sqrt() / buckets,
        }
    }

    pub fn rate(&self) -> f64 {
        self.overall.value()
    }
}

/// Fraction of games whose final choice was correct.
pub fn success_rate(dataset: &[Trajectory]) -> SuccessStats {
    SuccessStats::from_hits(dataset.iter().map(|t| (t.horizon, t.final_decision.correct)))
}

/// Whether MAP applied to the logged evidence names the biased arm.
pub fn counterfactual_correct(traj: &Trajectory, config: &TaskConfig) -> bool {
    bayes::map_choice(&bayes::final_posterior(traj, config)) == traj.biased_arm
}

/// Success of the agent that keeps each game's evidence but answers by MAP.
pub fn counterfactual_map_rescore(dataset: &[Trajectory], config: &TaskConfig) -> SuccessStats {
    SuccessStats::from_hits(dataset.iter().map(|t| (t.horizon, counterfactual_correct(t, config))))
}

/// Success of a reference agent, tagged with the config it was measured under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub label: String,
    pub success: f64,
    pub config_digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub agent_success: f64,
    pub counterfactual_success: f64,
    pub reference_success: f64,
    pub inference_loss: f64,
    pub sampling_loss: f64,
}

impl Decomposition {
    /// `agent + inference + sampling − reference`; zero up to rounding.
    pub fn residual(&self) -> f64 {
        self.agent_success + self.inference_loss + self.sampling_loss - self.reference_success
    }
}

fn check_digest(dataset: &[Trajectory], config: &TaskConfig, reference: &Reference) -> Result<(), MetricsError> {
    let digest = config.digest();
    if reference.config_digest != digest {
        return Err(MetricsError::ConfigMismatch {
            dataset: digest,
            reference: reference.config_digest.clone(),
        });
    }
    if let Some(t) = dataset.iter().find(|t| t.config_digest != digest) {
        return Err(MetricsError::ConfigMismatch {
            dataset: t.config_digest.clone(),
            reference: digest,
        });
    }
    Ok(())
}

/// Splits the gap to the reference into sampling and inference losses.
pub fn loss_decomposition(
    dataset: &[Trajectory],
    config: &TaskConfig,
    reference: &Reference,
) -> Result<Decomposition, MetricsError> {
    if dataset.is_empty() {
        return Err(MetricsError::Empty);
    }
    check_digest(dataset, config, reference)?;
    let agent = success_rate(dataset).rate();
    let cf = counterfactual_map_rescore(dataset, config).rate();
    Ok(Decomposition {
        agent_success: agent,
        counterfactual_success: cf,
        reference_success: reference.success,
        inference_loss: cf - agent,
        sampling_loss: reference.success - cf,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct InvalidRates {
    pub sampling: Rate,
    /// Invalid sampling picks that named an occluded arm.
    pub sampling_occluded: usize,
    /// Invalid sampling picks with no letter at all.
    pub sampling_unparsed: usize,
    pub final_: Rate,
}

pub fn invalid_rates(dataset: &[Trajectory]) -> InvalidRates {
    let mut out = InvalidRates::default();
    for t in dataset {
        for r in &t.rounds {
            out.sampling.add(!r.valid);
            if !r.valid {
                match r.choice {
                    Some(_) => out.sampling_occluded += 1,
                    None => out.sampling_unparsed += 1,
                }
            }
        }
        out.final_.add(!t.final_decision.valid);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketSummary {
    pub n_games: usize,
    pub success: f64,
    pub ci95: f64,
    pub low_count: bool,
}

impl From<Rate> for BucketSummary {
    fn from(r: Rate) -> Self {
        BucketSummary {
            n_games: r.n,
            success: r.value(),
            ci95: r.ci95(),
            low_count: r.low_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReport {
    pub agent_id: String,
    pub condition: String,
    pub n_games: usize,
    pub success_overall: f64,
    pub success_ci95: f64,
    pub success_uniform_n: f64,
    pub success_by_n: BTreeMap<usize, BucketSummary>,
    pub counterfactual_success: f64,
    pub inference_loss: f64,
    pub reference: Option<Reference>,
    pub sampling_loss: Option<f64>,
    pub invalid_rate_sampling: f64,
    pub invalid_rate_final: f64,
    pub bias_entropy_s: Option<f64>,
    pub bias_entropy_f: Option<f64>,
    pub warnings: Vec<String>,
}

impl AgentReport {
    pub fn build(
        dataset: &[Trajectory],
        config: &TaskConfig,
        reference: Option<&Reference>,
    ) -> Result<Self, MetricsError> {
        let first = dataset.first().ok_or(MetricsError::Empty)?;
        let stats = success_rate(dataset);
        let cf = counterfactual_map_rescore(dataset, config);
        let inv = invalid_rates(dataset);
        let same = |f: fn(&Trajectory) -> &str| {
            let v = f(first);
            if dataset.iter().all(|t| f(t) == v) {
                v.to_string()
            } else {
                "mixed".to_string()
            }
        };
        let mut warnings = Vec::new();
        for (n, r) in &stats.by_n {
            if r.low_count() {
                warnings.push(format!("N={n}: only {} games", r.n));
            }
        }
        let ci = stats.overall.ci95();
        let inference_loss = cf.rate() - stats.rate();
        if inference_loss < -2.0 * ci {
            warnings.push(format!("inference loss {inference_loss:.4} is negative beyond noise"));
        }
        let sampling_loss = match reference {
            Some(r) => {
                let d = loss_decomposition(dataset, config, r)?;
                if d.sampling_loss < -2.0 * ci {
                    warnings.push(format!("sampling loss {:.4} is negative beyond noise", d.sampling_loss));
                }
                Some(d.sampling_loss)
            }
            None => None,
        };
        Ok(AgentReport {
            agent_id: same(|t| &t.agent_id),
            condition: same(|t| &t.condition),
            n_games: dataset.len(),
            success_overall: stats.rate(),
            success_ci95: ci,
            success_uniform_n: stats.uniform_over_n,
            success_by_n: stats.by_n.iter().map(|(n, r)| (*n, (*r).into())).collect(),
            counterfactual_success: cf.rate(),
            inference_loss,
            reference: reference.cloned(),
            sampling_loss,
            invalid_rate_sampling: inv.sampling.value(),
            invalid_rate_final: inv.final_.value(),
            bias_entropy_s: None,
            bias_entropy_f: None,
            warnings,
        })
    }
}

/// Groups a dataset by `(agent_id, condition)`, preserving file order within groups.
pub fn group_by_agent(dataset: &[Trajectory]) -> BTreeMap<(String, String), Vec<Trajectory>> {
    let mut out: BTreeMap<(String, String), Vec<Trajectory>> = BTreeMap::new();
    for t in dataset {
        out.entry((t.agent_id.clone(), t.condition.clone())).or_default().push(t.clone());
    }
    out
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"))
}

/// One row per report, tab-separated.
pub fn report_table(reports: &[AgentReport]) -> String {
    let mut out = String::from(
        "agent\tcondition\tn_games\tsuccess\tci95\tsuccess_uniform_n\tcounterfactual\tinference_loss\tsampling_loss\treference\tinvalid_sampling\tinvalid_final\n",
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{:.4}\t{:.4}",
            r.agent_id,
            r.condition,
            r.n_games,
            r.success_overall,
            r.success_ci95,
            r.success_uniform_n,
            r.counterfactual_success,
            r.inference_loss,
            fmt_opt(r.sampling_loss),
            r.reference.as_ref().map_or("NA", |x| x.label.as_str()),
            r.invalid_rate_sampling,
            r.invalid_rate_final,
        );
    }
    out
}

/// Success-by-horizon curves with one column pair (rate, ci) per report.
pub fn per_n_plot_data(reports: &[AgentReport]) -> String {
    let mut horizons: Vec<usize> = reports.iter().flat_map(|r| r.success_by_n.keys().copied()).collect();
    horizons.sort_unstable();
    horizons.dedup();
    let mut out = String::from("N");
    for r in reports {
        let name = format!("{}/{}", r.agent_id, r.condition);
        let _ = write!(out, "\t{name}\t{name}:ci95");
    }
    out.push('\n');
    for n in horizons {
        let _ = write!(out, "{n}");
        for r in reports {
            match r.success_by_n.get(&n) {
                Some(b) => {
                    let _ = write!(out, "\t{:.4}\t{:.4}", b.success, b.ci95);
                }
                None => out.push_str("\tNA\tNA"),
            }
        }
        out.push('\n');
    }
    out
}
