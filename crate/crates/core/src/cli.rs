//! Configuration-driven experiment runner behind the `maxloc` binary.
//!
//! A config is a JSON object `{ "output_dir": ..., "experiments": [...] }`.
//! Each experiment names one check and its parameters:
//!
//! ```json
//! { "name": "thm2", "check": "check_cov_identity",
//!   "params": { "process": { "process": "brownian_motion", "t_end": 1.0, "n_steps": 4096 } },
//!   "n_rep": 10000, "seed": 1, "z_threshold": 3.0, "emit_replicates": false }
//! ```
//!
//! `run` writes `summary.json` (every report, tagged with its experiment)
//! and `summary.csv` with the fixed columns [`CSV_COLUMNS`]. Exit codes:
//! 0 when every report passes, 1 when some report fails, 2 when the config
//! is unreadable or invalid.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identity::{
    check_cameron_martin, check_chain_rule, check_chernoff, check_cov_identity, check_nondiff_flat,
    check_scaling, check_shift_invariance, check_stationary_mean, check_twosided_identity,
    CameronMartinParams, ChainRuleParams, ChernoffParams, IdentityReport, NondiffParams,
    RunSettings, ScalingParams, ShiftParams, StationaryParams, TwoSidedParams, DEFAULT_THRESHOLD,
};
use crate::process::ProcessSpec;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_BAD_CONFIG: i32 = 2;

pub const WORKERS_ENV: &str = "MAXLOC_WORKERS";
pub const DEFAULT_OUTPUT_DIR: &str = "results";

pub const CSV_COLUMNS: [&str; 13] = [
    "experiment",
    "check",
    "lhs",
    "lhs_se",
    "rhs",
    "rhs_se",
    "diff",
    "z",
    "pass",
    "n_rep",
    "n_steps",
    "T",
    "seed",
];

/// Every runnable check with its reference label and a one-line summary.
pub const CHECKS: [(&str, &str, &str); 9] = [
    (
        "check_cov_identity",
        "Theorem 2",
        "E Z = Cov(M, B(t)) for B + f on [0, t]",
    ),
    (
        "check_twosided_identity",
        "Eq. (twosided)",
        "E Z+ = Cov(M, B(T)) on [-T, T], T vs 2T stability",
    ),
    (
        "check_chernoff",
        "Eq. (JaGr)",
        "E Z = 0 and E Z^2 = E M / 3 for B(z) - z^2",
    ),
    (
        "check_scaling",
        "Eq. (scaling)",
        "pathwise max and argmax scaling in the curvature",
    ),
    (
        "check_shift_invariance",
        "Lemma 3",
        "moving the parabola's vertex shifts the argmax",
    ),
    (
        "check_stationary_mean",
        "Theorem 4",
        "E Z = 0 for stationary OU minus z^2",
    ),
    (
        "check_cameron_martin",
        "Eq. (Cameron-Martin)",
        "E psi(Z) = E[M int phi dB]",
    ),
    (
        "check_chain_rule",
        "Eq. (chain)",
        "E[H'(M) Z] = E[H(M) B(t)]",
    ),
    (
        "check_nondiff_flat",
        "footnote 1",
        "flat path: right derivative t, left derivative 0",
    ),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovParams {
    pub process: ProcessSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", content = "params", rename_all = "snake_case")]
pub enum CheckConfig {
    CheckCovIdentity(CovParams),
    CheckTwosidedIdentity(TwoSidedParams),
    CheckChernoff(ChernoffParams),
    CheckScaling(ScalingParams),
    CheckShiftInvariance(ShiftParams),
    CheckStationaryMean(StationaryParams),
    CheckCameronMartin(CameronMartinParams),
    CheckChainRule(ChainRuleParams),
    CheckNondiffFlat(NondiffParams),
}

impl CheckConfig {
    pub fn name(&self) -> &'static str {
        let i = match self {
            CheckConfig::CheckCovIdentity(_) => 0,
            CheckConfig::CheckTwosidedIdentity(_) => 1,
            CheckConfig::CheckChernoff(_) => 2,
            CheckConfig::CheckScaling(_) => 3,
            CheckConfig::CheckShiftInvariance(_) => 4,
            CheckConfig::CheckStationaryMean(_) => 5,
            CheckConfig::CheckCameronMartin(_) => 6,
            CheckConfig::CheckChainRule(_) => 7,
            CheckConfig::CheckNondiffFlat(_) => 8,
        };
        CHECKS[i].0
    }

    pub fn run(&self, rs: &RunSettings) -> Result<Vec<IdentityReport>> {
        match self {
            CheckConfig::CheckCovIdentity(p) => check_cov_identity(&p.process, rs).map(|r| vec![r]),
            CheckConfig::CheckTwosidedIdentity(p) => check_twosided_identity(p, rs),
            CheckConfig::CheckChernoff(p) => check_chernoff(p, rs),
            CheckConfig::CheckScaling(p) => check_scaling(p, rs),
            CheckConfig::CheckShiftInvariance(p) => check_shift_invariance(p, rs),
            CheckConfig::CheckStationaryMean(p) => check_stationary_mean(p, rs).map(|r| vec![r]),
            CheckConfig::CheckCameronMartin(p) => check_cameron_martin(p, rs).map(|r| vec![r]),
            CheckConfig::CheckChainRule(p) => check_chain_rule(p, rs).map(|r| vec![r]),
            CheckConfig::CheckNondiffFlat(p) => check_nondiff_flat(p, rs).map(|r| vec![r]),
        }
    }
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(flatten)]
    pub check: CheckConfig,
    pub n_rep: usize,
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub z_threshold: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub emit_replicates: bool,
}

const EXPERIMENT_KEYS: [&str; 7] = [
    "name",
    "check",
    "params",
    "n_rep",
    "seed",
    "z_threshold",
    "emit_replicates",
];

impl ExperimentConfig {
    pub fn settings(&self) -> RunSettings {
        RunSettings::new(self.n_rep, self.seed).with_threshold(self.z_threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub experiments: Vec<ExperimentConfig>,
}

impl Config {
    /// Parses and validates a config. Syntax and type errors carry the
    /// line and column of the offending token.
    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let config: Config = serde_json::from_str(text)
            .map_err(|e| format!("line {}, column {}: {e}", e.line(), e.column()))?;
        // flattened experiments cannot deny unknown keys themselves
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if let Some(list) = raw.get("experiments").and_then(|v| v.as_array()) {
            for (i, exp) in list.iter().enumerate() {
                if let Some(obj) = exp.as_object() {
                    if let Some(k) = obj.keys().find(|k| !EXPERIMENT_KEYS.contains(&k.as_str())) {
                        return Err(format!("experiments[{i}]: unknown field `{k}`"));
                    }
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.experiments.is_empty() {
            return Err("config lists no experiments".into());
        }
        let mut names = BTreeSet::new();
        for (i, e) in self.experiments.iter().enumerate() {
            let at = format!("experiments[{i}] ({})", e.name);
            if e.name.is_empty()
                || !e
                    .name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
            {
                return Err(format!(
                    "{at}: name must be non-empty and use only letters, digits, '_', '-', '.'"
                ));
            }
            if !names.insert(e.name.as_str()) {
                return Err(format!("{at}: duplicate experiment name"));
            }
            if e.n_rep == 0 {
                return Err(format!("{at}: n_rep must be positive"));
            }
            if !(e.z_threshold > 0.0 && e.z_threshold.is_finite()) {
                return Err(format!("{at}: z_threshold must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub experiment: String,
    pub check: String,
    pub report: IdentityReport,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub experiment: ExperimentConfig,
    pub reports: Vec<IdentityReport>,
}

/// Runs every experiment in order on the ambient rayon pool.
pub fn run_config(config: &Config) -> Result<Vec<ExperimentOutcome>> {
    config
        .experiments
        .iter()
        .map(|e| {
            Ok(ExperimentOutcome {
                experiment: e.clone(),
                reports: e.check.run(&e.settings())?,
            })
        })
        .collect()
}

pub fn summary_entries(outcomes: &[ExperimentOutcome]) -> Vec<SummaryEntry> {
    outcomes
        .iter()
        .flat_map(|o| {
            o.reports.iter().map(|r| SummaryEntry {
                experiment: o.experiment.name.clone(),
                check: o.experiment.check.name().into(),
                report: r.clone(),
            })
        })
        .collect()
}

pub fn write_summary_json(entries: &[SummaryEntry], path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(entries)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// One row per report. `check` holds the report name, since one check may
/// produce several reports; `z` is empty when the paired stderr is zero.
pub fn write_summary_csv(entries: &[SummaryEntry], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_COLUMNS)?;
    for e in entries {
        let r = &e.report;
        let m = &r.metadata;
        w.write_record([
            e.experiment.clone(),
            r.name.clone(),
            r.lhs.mean.to_string(),
            r.lhs.stderr.to_string(),
            r.rhs.mean.to_string(),
            r.rhs.stderr.to_string(),
            r.diff.to_string(),
            r.z_score.map_or(String::new(), |z| z.to_string()),
            r.pass.to_string(),
            m.n_rep.to_string(),
            m.n_steps.to_string(),
            m.extent.to_string(),
            m.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_replicates(outcomes: &[ExperimentOutcome], dir: &Path) -> Result<()> {
    let sub = dir.join("replicates");
    for o in outcomes.iter().filter(|o| o.experiment.emit_replicates) {
        for r in &o.reports {
            if let Some(t) = &r.replicates {
                fs::create_dir_all(&sub)?;
                let file =
                    fs::File::create(sub.join(format!("{}__{}.csv", o.experiment.name, r.name)))?;
                t.write_csv(std::io::BufWriter::new(file))?;
            }
        }
    }
    Ok(())
}

fn fmt_est(mean: f64, se: f64) -> String {
    format!("{mean:.6} ± {se:.2e}")
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Worker count from the flag, then the environment, else rayon's default.
pub fn resolve_workers(flag: Option<usize>) -> std::result::Result<Option<usize>, String> {
    if let Some(n) = flag {
        return if n == 0 {
            Err("--workers must be positive".into())
        } else {
            Ok(Some(n))
        };
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("{WORKERS_ENV}={v:?} is not a positive integer")),
        },
        Err(_) => Ok(None),
    }
}

pub fn cmd_run(
    config_path: &Path,
    workers: Option<usize>,
    out: Option<&Path>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32 {
    let text = match fs::read_to_string(config_path) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(stderr, "cannot read {}: {e}", config_path.display());
            return EXIT_BAD_CONFIG;
        }
    };
    let config = match Config::from_json(&text) {
        Ok(c) => c,
        Err(msg) => {
            let _ = writeln!(stderr, "{}: {msg}", config_path.display());
            return EXIT_BAD_CONFIG;
        }
    };
    let workers = match resolve_workers(workers) {
        Ok(w) => w,
        Err(msg) => {
            let _ = writeln!(stderr, "{msg}");
            return EXIT_BAD_CONFIG;
        }
    };
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(stderr, "cannot start worker pool: {e}");
            return EXIT_BAD_CONFIG;
        }
    };
    let mut outcomes = Vec::with_capacity(config.experiments.len());
    for e in &config.experiments {
        match pool.install(|| e.check.run(&e.settings())) {
            Ok(reports) => outcomes.push(ExperimentOutcome {
                experiment: e.clone(),
                reports,
            }),
            Err(err) => {
                let _ = writeln!(stderr, "experiment {}: {err}", e.name);
                return EXIT_BAD_CONFIG;
            }
        }
    }

    let entries = summary_entries(&outcomes);
    let written = fs::create_dir_all(&dir)
        .map_err(Error::from)
        .and_then(|_| write_summary_json(&entries, &dir.join("summary.json")))
        .and_then(|_| write_summary_csv(&entries, &dir.join("summary.csv")))
        .and_then(|_| write_replicates(&outcomes, &dir));
    if let Err(e) = written {
        let _ = writeln!(stderr, "cannot write results to {}: {e}", dir.display());
        return EXIT_BAD_CONFIG;
    }

    for e in &entries {
        let r = &e.report;
        let _ = writeln!(
            stdout,
            "{} {}/{}: lhs {} rhs {} z {}",
            verdict(r.pass),
            e.experiment,
            r.name,
            fmt_est(r.lhs.mean, r.lhs.stderr),
            fmt_est(r.rhs.mean, r.rhs.stderr),
            r.z_score.map_or("-".into(), |z| format!("{z:.2}")),
        );
    }
    let _ = writeln!(stdout, "results in {}", dir.display());
    if entries.iter().all(|e| e.report.pass) {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    }
}

pub fn cmd_list(out: &mut dyn Write) {
    for (name, label, summary) in CHECKS {
        let _ = writeln!(out, "{name} → {label}    {summary}");
    }
}

pub fn cmd_report(dir: &Path, out: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let path = dir.join("summary.json");
    let entries: Vec<SummaryEntry> = match fs::read_to_string(&path)
        .map_err(|e| e.to_string())
        .and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string()))
    {
        Ok(v) => v,
        Err(msg) => {
            let _ = writeln!(stderr, "cannot load {}: {msg}", path.display());
            return EXIT_BAD_CONFIG;
        }
    };
    let rows: Vec<[String; 5]> = entries
        .iter()
        .map(|e| {
            let r = &e.report;
            [
                format!("{}/{}", e.experiment, r.name),
                fmt_est(r.lhs.mean, r.lhs.stderr),
                fmt_est(r.rhs.mean, r.rhs.stderr),
                r.z_score.map_or("-".into(), |z| format!("{z:.2}")),
                if r.pass {
                    "PASS".into()
                } else {
                    "FAIL  <--".into()
                },
            ]
        })
        .collect();
    let header = ["name", "lhs ± se", "rhs ± se", "z", "pass"].map(String::from);
    let mut widths = header.clone().map(|h| h.chars().count());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String; 5]| {
        cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect::<Vec<_>>()
            .join(" | ")
            .trim_end()
            .to_string()
    };
    let _ = writeln!(out, "{}", line(&header));
    for row in &rows {
        let _ = writeln!(out, "{}", line(row));
    }
    EXIT_OK
}

#[cfg(test)]
mod tests {
    use super::*;

    const FLAT: &str = r#"{"experiments": [{"name": "flat", "check": "check_nondiff_flat",
        "params": {"t_end": 1.0, "a_sequence": [0.1, 0.01]}, "n_rep": 1, "seed": 0}]}"#;

    #[test]
    fn parses_minimal_config_with_defaults() {
        let c = Config::from_json(FLAT).unwrap();
        let e = &c.experiments[0];
        assert_eq!(e.check.name(), "check_nondiff_flat");
        assert_eq!(e.z_threshold, 3.0);
        assert!(!e.emit_replicates);
        let back = Config::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn config_errors_name_the_location() {
        let err = Config::from_json("{\"experiments\": [\n  {\"name\": 3}]}").unwrap_err();
        assert!(err.starts_with("line 2"), "{err}");
        let unknown = FLAT.replace("\"seed\": 0", "\"seed\": 0, \"sede\": 1");
        let err = Config::from_json(&unknown).unwrap_err();
        assert!(err.contains("sede"), "{err}");
        let bad_param = FLAT.replace("\"t_end\"", "\"t_edn\"");
        assert!(Config::from_json(&bad_param).is_err());
        let bad_check = FLAT.replace("check_nondiff_flat", "check_nope");
        assert!(Config::from_json(&bad_check).is_err());
        assert!(Config::from_json(r#"{"experiments": []}"#).is_err());
    }

    #[test]
    fn list_has_nine_checks() {
        let mut out = Vec::new();
        cmd_list(&mut out);
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 9);
        assert!(text.contains("check_cov_identity → Theorem 2"));
        assert!(text.contains("check_chernoff → Eq. (JaGr)"));
    }

    #[test]
    fn check_names_match_serde_tags() {
        let c = Config::from_json(FLAT).unwrap();
        let v = serde_json::to_value(&c.experiments[0]).unwrap();
        assert_eq!(v["check"], c.experiments[0].check.name());
    }
}
