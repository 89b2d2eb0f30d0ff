//! TOML problem description.
//!
//! ```toml
//! [problem]
//! dim = 2
//! weight = "(x1^2 + x2^2)/2"
//!
//! [problem.A]
//! diagonal = true
//! entries = ["1 + x1^2 + x2^2", "1 + x1^2 + x2^2"]
//!
//! [problem.constants]
//! mu1 = 0.5
//!
//! [region]
//! box = [[-1.5, 1.5], [-1.5, 1.5]]
//! constraints = ["x1^2 + x2^2 - 2"]
//!
//! [options]
//! resolution = 33
//! ```
//!
//! Every table rejects unknown keys.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeff::{CoeffError, CoefficientField};
use crate::condition::WeightFunction;
use crate::curvature::Probe;
use crate::domain::{Region, RegionError};
use crate::expr::{ConstantTable, Expression, ParseError};
use crate::weight::{SignCase, DEFAULT_LAMBDA_MAX};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{location}: {source}")]
    Expression { location: String, source: ParseError },
    #[error(transparent)]
    Coeff(#[from] CoeffError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub problem: ProblemSection,
    pub region: RegionSection,
    #[serde(default)]
    pub options: Options,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub dim: usize,
    #[serde(rename = "A")]
    pub a: CoefficientSection,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub constants: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSection {
    pub diagonal: bool,
    pub entries: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSection {
    #[serde(rename = "box")]
    pub bounds: Vec<[f64; 2]>,
    #[serde(default)]
    pub constraints: Vec<String>,
    #[serde(default)]
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    /// 1-based axis.
    pub axis: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Options {
    pub resolution: usize,
    pub lambda_max: f64,
    pub target_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub force_j: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub force_case: Option<SignCase>,
    pub horizon: f64,
    pub step: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    pub count: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub probes: Vec<ProbeSpec>,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            resolution: 33,
            lambda_max: DEFAULT_LAMBDA_MAX,
            target_margin: 0.0,
            force_j: None,
            force_case: None,
            horizon: 20.0,
            step: 0.05,
            center: None,
            count: 32,
            probes: Vec::new(),
        }
    }
}

/// A parsed, validated problem ready for computation.
#[derive(Debug, Clone)]
pub struct Problem {
    pub field: CoefficientField,
    pub region: Region,
    pub weight: Option<WeightFunction>,
    pub constants: ConstantTable,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config, ConfigError> {
        let config: Config = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Config::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let dim = self.problem.dim;
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if dim == 0 {
            return invalid("problem.dim must be positive".into());
        }
        if self.region.bounds.len() != dim {
            return invalid(format!(
                "region.box has {} axes, problem.dim is {dim}",
                self.region.bounds.len()
            ));
        }
        let o = &self.options;
        if o.resolution < 2 {
            return invalid(format!("options.resolution must be at least 2, got {}", o.resolution));
        }
        if !(o.lambda_max >= 1.0) {
            return invalid(format!("options.lambda_max must be at least 1, got {}", o.lambda_max));
        }
        if !(o.target_margin >= 0.0) {
            return invalid(format!(
                "options.target_margin must be nonnegative, got {}",
                o.target_margin
            ));
        }
        if let Some(j) = o.force_j {
            if j == 0 || j > dim {
                return invalid(format!("options.force_j must lie in 1..={dim}, got {j}"));
            }
        }
        if !(o.horizon > 0.0 && o.step > 0.0) {
            return invalid("options.horizon and options.step must be positive".into());
        }
        if let Some(c) = &o.center {
            if c.len() != dim {
                return invalid(format!("options.center has {} coordinates, expected {dim}", c.len()));
            }
        }
        for p in &o.probes {
            if p.axis == 0 || p.axis > dim {
                return invalid(format!("probe axis must lie in 1..={dim}, got {}", p.axis));
            }
        }
        Ok(())
    }

    pub fn constants(&self) -> ConstantTable {
        self.problem.constants.iter().map(|(k, v)| (k.clone(), *v)).collect()
    }

    pub fn probes(&self) -> Vec<Probe> {
        self.options
            .probes
            .iter()
            .map(|p| Probe {
                axis: p.axis - 1,
                value: p.value,
            })
            .collect()
    }

    /// Parses every expression, binding constants.
    pub fn build(&self) -> Result<Problem, ConfigError> {
        self.validate()?;
        let dim = self.problem.dim;
        let constants = self.constants();
        let parse = |location: String, text: &str| -> Result<Expression, ConfigError> {
            let e = Expression::parse(text, dim)
                .map_err(|source| ConfigError::Expression { location, source })?
                .bind(&constants);
            Ok(e)
        };
        let entries = self
            .problem
            .a
            .entries
            .iter()
            .enumerate()
            .map(|(i, t)| parse(format!("problem.A.entries[{i}]"), t))
            .collect::<Result<Vec<_>, _>>()?;
        let field = CoefficientField::build(entries, self.problem.a.diagonal)?;
        let constraints = self
            .region
            .constraints
            .iter()
            .enumerate()
            .map(|(i, t)| parse(format!("region.constraints[{i}]"), t))
            .collect::<Result<Vec<_>, _>>()?;
        let bounds = self.region.bounds.iter().map(|b| (b[0], b[1])).collect();
        let region = Region::new(bounds, constraints)?.with_margin(self.region.margin)?;
        let weight = match &self.problem.weight {
            Some(t) => Some(WeightFunction::new(parse("problem.weight".into(), t)?)),
            None => None,
        };
        Ok(Problem {
            field,
            region,
            weight,
            constants,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DISK: &str = r#"
[problem]
dim = 2
weight = "(x1^2 + x2^2)/2"

[problem.A]
diagonal = true
entries = ["1", "1"]

[region]
box = [[1.0, 3.0], [-1.0, 1.0]]
constraints = ["(x1 - 2)^2 + x2^2 - 1"]
"#;

    #[test]
    fn parses_with_defaults() {
        let c = Config::from_toml(DISK).unwrap();
        assert_eq!(c.options.resolution, 33);
        assert_eq!(c.options.lambda_max, 1_048_576.0);
        let p = c.build().unwrap();
        assert!(p.weight.is_some());
        assert!(p.region.contains(&[2.0, 0.0]).unwrap());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = DISK.replace("dim = 2", "dim = 2\ndimm = 3");
        assert!(matches!(Config::from_toml(&text), Err(ConfigError::Toml(_))));
        let text = format!("{DISK}\n[options]\nresolutoin = 9\n");
        assert!(matches!(Config::from_toml(&text), Err(ConfigError::Toml(_))));
    }

    #[test]
    fn expression_errors_carry_location() {
        let text = DISK.replace("entries = [\"1\", \"1\"]", "entries = [\"1\", \"1 +\"]");
        let err = Config::from_toml(&text).unwrap().build().unwrap_err();
        assert!(err.to_string().starts_with("problem.A.entries[1]"), "{err}");
    }

    #[test]
    fn constants_are_bound() {
        let text = DISK
            .replace("entries = [\"1\", \"1\"]", "entries = [\"exp(mu1*x1)\", \"1\"]")
            .replace("[region]", "[problem.constants]\nmu1 = 0.5\n\n[region]");
        let p = Config::from_toml(&text).unwrap().build().unwrap();
        let a = p.field.eval(&[2.0, 0.0]).unwrap();
        assert!((a[(0, 0)] - 1f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn option_validation() {
        for (key, msg) in [
            ("resolution = 1", "resolution"),
            ("force_j = 3", "force_j"),
            ("lambda_max = 0.5", "lambda_max"),
            ("center = [0.0]", "center"),
        ] {
            let text = format!("{DISK}\n[options]\n{key}\n");
            let err = Config::from_toml(&text).unwrap_err();
            assert!(err.to_string().contains(msg), "{err}");
        }
    }

    #[test]
    fn force_case_names() {
        let text = format!("{DISK}\n[options]\nforce_case = \"positive\"\n");
        assert_eq!(
            Config::from_toml(&text).unwrap().options.force_case,
            Some(SignCase::Positive)
        );
    }
}
