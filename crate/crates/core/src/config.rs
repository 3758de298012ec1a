//! Sectioned run configuration (`[lattice]`, `[model]`, `[sampler]`,
//! `[scan]`, `[output]`) read from TOML, with command-line overrides.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{ScanPlan, SpanCriterion};
use crate::lattice::{Boundary, LatticeKind, LatticeSpec};
use crate::sampler::SamplerParams;
use crate::weights::{ExponentConvention, QcBound, QcMode, Regime, WeightModel, DEFAULT_EXACT_CAP};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeSection {
    pub kind: LatticeKind,
    pub size: usize,
    pub boundary: Boundary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator_seed: Option<u64>,
}

impl Default for LatticeSection {
    fn default() -> Self {
        Self {
            kind: LatticeKind::Honeycomb,
            size: 16,
            boundary: Boundary::Open,
            source_path: None,
            generator_seed: None,
        }
    }
}

impl LatticeSection {
    pub fn spec(&self) -> LatticeSpec {
        LatticeSpec {
            kind: self.kind,
            size: self.size,
            boundary: self.boundary,
            source_path: self.source_path.clone(),
            generator_seed: self.generator_seed,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeChoice {
    #[default]
    Auto,
    Sub,
    Super,
}

impl RegimeChoice {
    pub fn fixed(self) -> Option<Regime> {
        match self {
            RegimeChoice::Auto => None,
            RegimeChoice::Sub => Some(Regime::Sub),
            RegimeChoice::Super => Some(Regime::Super),
        }
    }
}

impl std::str::FromStr for RegimeChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(RegimeChoice::Auto),
            "sub" => Ok(RegimeChoice::Sub),
            "super" => Ok(RegimeChoice::Super),
            other => Err(format!("unknown regime `{other}` (auto, sub, super)")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QcChoice {
    #[default]
    Lower,
    Upper,
    Exact,
}

impl std::str::FromStr for QcChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lower" => Ok(QcChoice::Lower),
            "upper" => Ok(QcChoice::Upper),
            "exact" => Ok(QcChoice::Exact),
            other => Err(format!("unknown q_c mode `{other}` (lower, upper, exact)")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FallbackChoice {
    #[default]
    None,
    Lower,
    Upper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    pub regime: RegimeChoice,
    pub qc_mode: QcChoice,
    pub exact_cap: usize,
    pub exact_fallback: FallbackChoice,
    pub exponent: ExponentConvention,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            g: None,
            grid: None,
            regime: RegimeChoice::Auto,
            qc_mode: QcChoice::Lower,
            exact_cap: DEFAULT_EXACT_CAP,
            exact_fallback: FallbackChoice::Lower,
            exponent: ExponentConvention::Corrected,
        }
    }
}

impl ModelSection {
    pub fn qc_mode(&self) -> QcMode {
        match self.qc_mode {
            QcChoice::Lower => QcMode::LowerBound,
            QcChoice::Upper => QcMode::UpperBound,
            QcChoice::Exact => QcMode::Exact {
                cap: self.exact_cap,
                fallback: match self.exact_fallback {
                    FallbackChoice::None => None,
                    FallbackChoice::Lower => Some(QcBound::Lower),
                    FallbackChoice::Upper => Some(QcBound::Upper),
                },
            },
        }
    }

    pub fn model(&self, g: f64) -> Result<WeightModel, ConfigError> {
        let regime = self.regime.fixed().unwrap_or(Regime::for_g(g));
        WeightModel::with_regime(g, regime, self.qc_mode())
            .and_then(|m| m.with_exponent(self.exponent))
            .map_err(|e| invalid(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    pub sizes: Vec<usize>,
    pub criterion: SpanCriterion,
    pub workers: usize,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self {
            g_min: None,
            g_max: None,
            steps: None,
            sizes: vec![16, 24, 32],
            criterion: SpanCriterion::Auto,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub formats: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            formats: vec!["csv".into(), "json".into(), "svg".into()],
        }
    }
}

impl OutputSection {
    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f == format)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub lattice: LatticeSection,
    pub model: ModelSection,
    pub sampler: SamplerParams,
    pub scan: ScanSection,
    pub output: OutputSection,
}

/// Default 21-point grids centred on the reported thresholds.
pub fn default_grid(kind: LatticeKind, regime: Regime, qc: QcChoice) -> (f64, f64, usize) {
    match (kind, regime, qc) {
        (LatticeKind::Square, Regime::Sub, _) => (0.58, 0.70, 21),
        (_, Regime::Sub, _) => (0.70, 0.82, 21),
        (LatticeKind::Square, Regime::Super, _) => (1.25, 1.95, 21),
        (_, Regime::Super, _) => (1.10, 1.50, 21),
    }
}

pub fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![lo];
    }
    (0..steps)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (steps - 1) as f64;
            // Trim representation noise so grids print cleanly.
            (x * 1e9).round() / 1e9
        })
        .collect()
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// The g values to run: an explicit grid, a `[scan]` range, a single
    /// `g`, or the default grid of the lattice and regime.
    pub fn g_grid(&self) -> Result<Vec<f64>, ConfigError> {
        let grid = self.raw_grid()?;
        for &g in &grid {
            self.model.model(g)?;
        }
        Ok(grid)
    }

    /// The grid without checking that each g admits a weight model.
    pub fn raw_grid(&self) -> Result<Vec<f64>, ConfigError> {
        let grid = if let Some(grid) = &self.model.grid {
            grid.clone()
        } else if self.scan.g_min.is_some() || self.scan.g_max.is_some() || self.scan.steps.is_some() {
            let (Some(lo), Some(hi), Some(n)) = (self.scan.g_min, self.scan.g_max, self.scan.steps) else {
                return Err(invalid("scan needs all of g_min, g_max and steps"));
            };
            if n == 0 || hi < lo {
                return Err(invalid("scan range must have steps >= 1 and g_max >= g_min"));
            }
            linspace(lo, hi, n)
        } else if let Some(g) = self.model.g {
            vec![g]
        } else {
            let regime = self.model.regime.fixed().unwrap_or(Regime::Sub);
            let (lo, hi, n) = default_grid(self.lattice.kind, regime, self.model.qc_mode);
            linspace(lo, hi, n)
        };
        if grid.is_empty() {
            return Err(invalid("empty g grid"));
        }
        if grid.iter().any(|g| !g.is_finite()) {
            return Err(invalid("g values must be finite"));
        }
        Ok(grid)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_settings()?;
        self.g_grid()?;
        Ok(())
    }

    /// Everything except the per-g model checks.
    pub fn validate_settings(&self) -> Result<(), ConfigError> {
        self.lattice.spec().validate().map_err(|e| invalid(e.to_string()))?;
        self.sampler.validate().map_err(|e| invalid(e.to_string()))?;
        self.raw_grid()?;
        if self.scan.sizes.is_empty() {
            return Err(invalid("scan.sizes is empty"));
        }
        if self.scan.workers == 0 {
            return Err(invalid("scan.workers must be at least 1"));
        }
        for f in &self.output.formats {
            if !["csv", "json", "svg"].contains(&f.as_str()) {
                return Err(invalid(format!("unknown output format `{f}`")));
            }
        }
        Ok(())
    }

    pub fn scan_plan(&self) -> Result<ScanPlan, ConfigError> {
        self.validate()?;
        Ok(ScanPlan {
            lattice: self.lattice.spec(),
            regime: self.model.regime.fixed(),
            qc_mode: self.model.qc_mode(),
            grid: self.g_grid()?,
            sizes: self.scan.sizes.clone(),
            sampler: self.sampler.clone(),
            criterion: self.scan.criterion,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(c.g_grid().unwrap().len(), 21);
    }

    #[test]
    fn sections_parse() {
        let c = RunConfig::from_toml(
            r#"
            [lattice]
            kind = "square"
            size = 8
            boundary = "torus"
            [model]
            regime = "super"
            qc_mode = "upper"
            [sampler]
            n_samples = 100
            start = "coldkeep"
            [scan]
            g_min = 1.3
            g_max = 1.5
            steps = 3
            sizes = [8, 12]
            [output]
            formats = ["csv"]
            "#,
        )
        .unwrap();
        assert_eq!(c.lattice.kind, LatticeKind::Square);
        assert_eq!(c.g_grid().unwrap(), vec![1.3, 1.4, 1.5]);
        assert_eq!(c.model.qc_mode(), QcMode::UpperBound);
        assert_eq!(c.sampler.burn_in_sweeps, 1000);
        assert!(c.output.wants("csv") && !c.output.wants("svg"));
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_bad_grids_are_rejected() {
        assert!(RunConfig::from_toml("[lattice]\nsides = 3\n").is_err());
        let mut c = RunConfig::default();
        c.model.grid = Some(vec![]);
        assert!(c.validate().is_err());
        c.model.grid = Some(vec![0.5, 1.2]);
        c.model.regime = RegimeChoice::Sub;
        assert!(c.validate().is_err());
        c.model.regime = RegimeChoice::Auto;
        c.validate().unwrap();
    }
}
