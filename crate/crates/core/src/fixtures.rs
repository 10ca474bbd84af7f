//! Published parameter rows used as simulation fixtures.

use crate::mech::MechParams;

/// A labelled parameter row with its reported per-decision NLLs.
#[derive(Debug, Clone, Copy)]
pub struct FixtureRow {
    pub model: &'static str,
    pub reasoning: &'static str,
    pub omega_s: [f64; 4],
    pub omega_f: [f64; 4],
    pub beta: f64,
    pub kappa_s: f64,
    pub kappa_f: f64,
    pub log_theta: f64,
    pub train_nll: f64,
    pub test_nll: f64,
}

impl FixtureRow {
    /// Parameters exactly as tabulated; bias vectors may miss the simplex by
    /// rounding, see [`MechParams::normalized`].
    pub fn params(&self) -> MechParams {
        MechParams {
            beta: self.beta,
            kappa_s: self.kappa_s,
            kappa_f: self.kappa_f,
            omega_s: self.omega_s.to_vec(),
            omega_f: self.omega_f.to_vec(),
            log_theta: self.log_theta,
        }
    }
}

pub const PPO_MAP: FixtureRow = FixtureRow {
    model: "PPO MAP",
    reasoning: "Base",
    omega_s: [0.304, 0.168, 0.367, 0.161],
    omega_f: [0.273, 0.215, 0.282, 0.231],
    beta: -0.016,
    kappa_s: 0.607,
    kappa_f: 9.971,
    log_theta: 7.449,
    train_nll: 0.576,
    test_nll: 0.580,
};

pub const HUMANS_BASE: FixtureRow = FixtureRow {
    model: "Humans",
    reasoning: "Base",
    omega_s: [0.275, 0.264, 0.235, 0.227],
    omega_f: [0.251, 0.259, 0.249, 0.240],
    beta: -0.028,
    kappa_s: 0.378,
    kappa_f: 1.179,
    log_theta: 6.977,
    train_nll: 0.724,
    test_nll: 0.724,
};

pub const HUMANS_EXTENDED: FixtureRow = FixtureRow {
    model: "Humans",
    reasoning: "Extended",
    omega_s: [0.271, 0.284, 0.215, 0.230],
    omega_f: [0.243, 0.259, 0.243, 0.254],
    beta: -0.061,
    kappa_s: 0.616,
    kappa_f: 1.697,
    log_theta: 7.166,
    train_nll: 0.627,
    test_nll: 0.630,
};

pub const GPT_OSS_20B_BASE: FixtureRow = FixtureRow {
    model: "gpt-oss-20b",
    reasoning: "Base",
    omega_s: [0.359, 0.296, 0.206, 0.139],
    omega_f: [0.340, 0.268, 0.218, 0.174],
    beta: -0.401,
    kappa_s: 0.000,
    kappa_f: 0.026,
    log_theta: 1.222,
    train_nll: 0.976,
    test_nll: 0.960,
};

pub const GPT_OSS_20B_EXTENDED: FixtureRow = FixtureRow {
    model: "gpt-oss-20b",
    reasoning: "Extended",
    omega_s: [0.331, 0.293, 0.216, 0.160],
    omega_f: [0.429, 0.265, 0.185, 0.122],
    beta: 0.020,
    kappa_s: 0.000,
    kappa_f: 1.821,
    log_theta: 1.429,
    train_nll: 0.825,
    test_nll: 0.833,
};

pub const ROWS: [FixtureRow; 5] = [PPO_MAP, HUMANS_BASE, HUMANS_EXTENDED, GPT_OSS_20B_BASE, GPT_OSS_20B_EXTENDED];

pub fn humans_base() -> MechParams {
    HUMANS_BASE.params()
}

/// Looks a row up by model and reasoning label, case-insensitively.
pub fn find(model: &str, reasoning: &str) -> Option<FixtureRow> {
    ROWS.iter()
        .find(|r| r.model.eq_ignore_ascii_case(model) && r.reasoning.eq_ignore_ascii_case(reasoning))
        .copied()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_valid_params() {
        for r in ROWS {
            r.params().normalized().validate().unwrap();
        }
        assert_eq!(find("humans", "base").unwrap().kappa_f, 1.179);
        assert!(find("humans", "none").is_none());
    }
}
