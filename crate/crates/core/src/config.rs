//! TOML run configuration.
//!
//! ```toml
//! mode = "continuation"
//! kappa_schedule = [1.0, 10.0, 100.0]
//!
//! [domain]
//! h = 0.05
//! cores = [
//!     { x = 0.0, y = 0.0, width = 1.0, height = 1.0 },
//!     { x = 2.0, y = 0.0, width = 1.0, height = 1.0 },
//! ]
//! channels = [{ x = 1.0, y = 0.45, width = 1.0, height = 0.1 }]
//!
//! [[species]]
//! lambda = 2.0
//! p = 2.0
//!
//! [[species]]
//! lambda = 2.0
//! p = 2.0
//! ```

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{validate_spec, DomainSpec};
use crate::reaction::{make_logistic, ReactionModel};
use crate::solver::SolveOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Solve,
    Continuation,
    Sweep,
    Check,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Solve => "solve",
            Mode::Continuation => "continuation",
            Mode::Sweep => "sweep",
            Mode::Check => "check",
        })
    }
}

/// Logistic growth parameters of one species.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesSpec {
    pub lambda: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainSpec,
    pub species: Vec<SpeciesSpec>,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default = "default_schedule")]
    pub kappa_schedule: Vec<f64>,
    /// Channel widths for `mode = "sweep"`.
    #[serde(default)]
    pub sweep: Option<Vec<f64>>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    /// Run the solver without projection and check the bounds to `1e-6`.
    #[serde(default)]
    pub verify_unclamped: bool,
}

fn default_schedule() -> Vec<f64> {
    vec![1e3]
}

fn default_output() -> PathBuf {
    PathBuf::from("output")
}

fn default_mode() -> Mode {
    Mode::Solve
}

/// Configuration failures, each with its own [`ConfigError::code`].
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("missing required section [{0}]")]
    MissingSection(&'static str),
    #[error("unknown key: {0}")]
    UnknownKey(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("invalid configuration: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::Syntax { .. } => "E101",
            ConfigError::MissingSection(_) => "E102",
            ConfigError::UnknownKey(_) => "E103",
            ConfigError::TypeMismatch(_) => "E104",
            ConfigError::Invalid(_) => "E105",
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn one_line(msg: &str) -> String {
    msg.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" ")
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let table: toml::Table = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        ConfigError::Syntax { line, column, message: e.message().to_string() }
    })?;
    for section in ["domain", "species"] {
        if !table.contains_key(section) {
            return Err(ConfigError::MissingSection(section));
        }
    }
    let config: RunConfig = toml::from_str(text).map_err(|e| {
        let msg = one_line(&e.to_string());
        if e.message().starts_with("unknown field") {
            ConfigError::UnknownKey(msg)
        } else {
            ConfigError::TypeMismatch(msg)
        }
    })?;
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    /// Checks every cross-field invariant and collects all failures.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        if self.species.len() != self.domain.cores.len() {
            problems.push(format!(
                "species/core mismatch: {} species, {} cores",
                self.species.len(),
                self.domain.cores.len()
            ));
        }
        problems.extend(validate_spec(&self.domain).iter().map(|v| format!("domain: {v}")));
        for (i, s) in self.species.iter().enumerate() {
            if let Err(e) = make_logistic(s.lambda, s.p) {
                problems.push(format!("species {}: {e}", i + 1));
            }
        }
        let ks = &self.kappa_schedule;
        if ks.is_empty() {
            problems.push("schedule is empty".into());
        } else if ks.windows(2).any(|w| w[1] <= w[0]) {
            problems.push("schedule not increasing".into());
        }
        if ks.iter().any(|k| !k.is_finite() || *k < 0.0) {
            problems.push("schedule entries must be finite and non-negative".into());
        }
        if let Err(e) = self.solver.validate() {
            problems.push(e.to_string());
        }
        match (&self.sweep, self.mode) {
            (None, Mode::Sweep) => problems.push("mode sweep needs a `sweep` list of channel widths".into()),
            (Some(ws), _) => {
                if ws.is_empty() {
                    problems.push("sweep list is empty".into());
                }
                if self.domain.channels.is_empty() {
                    problems.push("sweep needs at least one channel".into());
                }
                for &w in ws {
                    if w.is_nan() || w <= 0.0 {
                        problems.push(format!("sweep width {w} is not positive"));
                        continue;
                    }
                    for v in validate_spec(&self.domain.with_channel_width(w)) {
                        problems.push(format!("sweep width {w}: {v}"));
                    }
                }
            }
            _ => {}
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }

    pub fn models(&self) -> Vec<ReactionModel> {
        self.species.iter().map(|s| make_logistic(s.lambda, s.p).expect("validated species")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
mode = "solve"

[domain]
cores = [{ x = 0.0, y = 0.0, width = 1.0, height = 1.0 }]

[[species]]
lambda = 2.0
p = 2.0
"#;

    const DUMBBELL: &str = r#"
mode = "continuation"
kappa_schedule = [1.0, 10.0]

[domain]
h = 0.05
cores = [
    { x = 0.0, y = 0.0, width = 1.0, height = 1.0 },
    { x = 2.0, y = 0.0, width = 1.0, height = 1.0 },
]
channels = [{ x = 1.0, y = 0.45, width = 1.0, height = 0.1 }]

[[species]]
lambda = 2.0
p = 2.0

[[species]]
lambda = 2.0
p = 2.0
"#;

    #[test]
    fn minimal_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.domain.h, 0.025);
        assert_eq!(c.solver.tol_r, 1e-8);
        assert_eq!(c.solver.max_iter, 200_000);
        assert_eq!(c.kappa_schedule, vec![1e3]);
        assert_eq!(c.mode, Mode::Solve);
        assert!(c.solver.clamp);
        assert!(c.sweep.is_none());
    }

    #[test]
    fn dumbbell_parses() {
        let c = parse_config(DUMBBELL).unwrap();
        assert_eq!(c.domain, DomainSpec::dumbbell(0.1, 0.05));
        assert_eq!(c.models().len(), 2);
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_config("mode = \"solve\"\n[domain\n").unwrap_err();
        match err {
            ConfigError::Syntax { line, .. } => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_section() {
        let err = parse_config("mode = \"solve\"\n[domain]\ncores = []\n").unwrap_err();
        assert!(matches!(err, ConfigError::MissingSection("species")));
    }

    #[test]
    fn type_mismatch_and_unknown_key_differ() {
        let bad_type = MINIMAL.replace("lambda = 2.0", "lambda = \"two\"");
        let unknown = MINIMAL.replace("p = 2.0", "p = 2.0\ncolour = 1");
        let a = parse_config(&bad_type).unwrap_err();
        let b = parse_config(&unknown).unwrap_err();
        assert!(matches!(a, ConfigError::TypeMismatch(_)), "{a:?}");
        assert!(matches!(b, ConfigError::UnknownKey(_)), "{b:?}");
        assert_ne!(a.code(), b.code());
    }

    #[test]
    fn species_core_mismatch() {
        let text = DUMBBELL
            .replacen("[[species]]\nlambda = 2.0\np = 2.0\n", "", 1)
            .replace("]\nchannels", "    { x = 4.0, y = 0.0, width = 1.0, height = 1.0 },\n]\nchannels");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("species/core mismatch"), "{err}");
        assert_eq!(err.code(), "E105");
    }

    #[test]
    fn schedule_not_increasing() {
        let text = DUMBBELL.replace("[1.0, 10.0]", "[100.0, 10.0]");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("schedule not increasing"), "{err}");
    }

    #[test]
    fn sweep_mode_requires_widths() {
        let text = DUMBBELL.replace("\"continuation\"", "\"sweep\"");
        assert!(parse_config(&text).unwrap_err().to_string().contains("sweep"));
        let text = format!("sweep = [0.2, 0.1]\n{text}");
        assert_eq!(parse_config(&text).unwrap().sweep, Some(vec![0.2, 0.1]));
    }

    #[test]
    fn codes_are_distinct() {
        let errs = [
            ConfigError::Syntax { line: 1, column: 1, message: String::new() },
            ConfigError::MissingSection("domain"),
            ConfigError::UnknownKey(String::new()),
            ConfigError::TypeMismatch(String::new()),
            ConfigError::Invalid(vec![]),
        ];
        let mut codes: Vec<_> = errs.iter().map(ConfigError::code).collect();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), errs.len());
    }
}
