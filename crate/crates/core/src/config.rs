//! Run configuration, read from TOML. Relative input and output paths are resolved
//! against the directory holding the configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::GroupTestOptions;
use crate::ingest::{ClinicalSchema, TargetSpec};
use crate::model_select::{HyperGrid, SolverSettings};
use crate::stats::TestRule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub matrix: PathBuf,
    pub clinical: PathBuf,
    pub dekt: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocess {
    #[serde(default = "yes")]
    pub normalize: bool,
    #[serde(default = "yes")]
    pub filter: bool,
    #[serde(default = "default_threshold")]
    pub filter_threshold: f64,
    #[serde(default = "default_fraction")]
    pub filter_fraction: f64,
    #[serde(default)]
    pub remove_covariates: Vec<String>,
}

fn yes() -> bool {
    true
}

fn default_threshold() -> f64 {
    8.0
}

fn default_fraction() -> f64 {
    0.8
}

impl Default for Preprocess {
    fn default() -> Self {
        Self {
            normalize: true,
            filter: true,
            filter_threshold: default_threshold(),
            filter_fraction: default_fraction(),
            remove_covariates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: Inputs,
    pub target: TargetSpec,
    /// Declared kind of every clinical column other than the target.
    #[serde(default)]
    pub schema: ClinicalSchema,
    #[serde(default)]
    pub preprocess: Preprocess,
    #[serde(default)]
    pub grid: HyperGrid,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default = "default_k")]
    pub k_folds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub test_rule: TestRule,
    #[serde(default)]
    pub benjamini_hochberg: bool,
    pub output_dir: PathBuf,
    /// Fixed timestamp for reproducible reports; the current time is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

fn default_k() -> usize {
    10
}

fn default_alpha() -> f64 {
    0.05
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Read, resolve relative paths against the file's directory, and validate.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut config = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.inputs.matrix,
            &mut self.inputs.clinical,
            &mut self.inputs.dekt,
            &mut self.output_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_folds < 2 {
            return Err(Error::Config(format!("k_folds must be at least 2, got {}", self.k_folds)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        let f = self.preprocess.filter_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!(
                "preprocess.filter_fraction must be in (0, 1], got {f}"
            )));
        }
        if !(self.solver.tol > 0.0) {
            return Err(Error::Config(format!("solver.tol must be positive, got {}", self.solver.tol)));
        }
        if self.schema.contains_key(&self.target.name) {
            return Err(Error::Config(format!(
                "schema must not declare the target '{}'",
                self.target.name
            )));
        }
        self.grid.validate()
    }

    /// Every input file must exist; the error names the offending field.
    pub fn check_inputs(&self) -> Result<()> {
        for (field, path) in [
            ("inputs.matrix", &self.inputs.matrix),
            ("inputs.clinical", &self.inputs.clinical),
            ("inputs.dekt", &self.inputs.dekt),
        ] {
            if !path.is_file() {
                return Err(Error::Config(format!("{field}: no such file {}", path.display())));
            }
        }
        Ok(())
    }

    pub fn group_test_options(&self) -> GroupTestOptions {
        GroupTestOptions {
            alpha: self.alpha,
            test_rule: self.test_rule,
            benjamini_hochberg: self.benjamini_hochberg,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::CovariateKind;

    const MINIMAL: &str = r#"
output_dir = "out"

[inputs]
matrix = "m.tsv"
clinical = "c.tsv"
dekt = "d.csv"

[target]
name = "diagnosis"
control = "HC"
case = "PD"

[schema]
sex = { kind = "categorical" }
age = { kind = "numeric" }
"#;

    #[test]
    fn defaults_apply() {
        let c = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.k_folds, 10);
        assert_eq!(c.alpha, 0.05);
        assert_eq!(c.test_rule, TestRule::LargeCells);
        assert_eq!(c.grid, HyperGrid::default());
        assert!(c.preprocess.normalize && c.preprocess.filter);
        assert_eq!(c.schema["age"].kind, CovariateKind::Numeric);
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let mut c = RunConfig::from_toml(MINIMAL).unwrap();
        c.resolve_paths(Path::new("/data/run"));
        assert_eq!(c.inputs.dekt, Path::new("/data/run/d.csv"));
        assert_eq!(c.output_dir, Path::new("/data/run/out"));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for bad in ["k_folds = 1\n", "alpha = 1.5\n", "test_rule = \"sometimes\"\n", "colour = 3\n"] {
            let text = format!("{bad}{MINIMAL}");
            assert!(matches!(RunConfig::from_toml(&text), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn missing_dekt_field_is_named() {
        let text = MINIMAL.replace("dekt = \"d.csv\"\n", "");
        let err = RunConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("dekt"), "{err}");
        let c = RunConfig::from_toml(MINIMAL).unwrap();
        let err = c.check_inputs().unwrap_err().to_string();
        assert!(err.contains("inputs.matrix"), "{err}");
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }
}
