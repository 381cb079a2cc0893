//! Declarative configuration files: per-variable specs for `impute` and
//! scenario descriptions for `simulate`. Both accept TOML or JSON,
//! dispatched on the file extension.

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use crate::data::{ImputationStrategy, StrategyKind, VarKind, VariableSpec};
use crate::error::{Error, Result};
use crate::sim::{default_methods, ScenarioConfig, SimKind};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarFileEntry {
    pub name: String,
    /// "continuous" | "binary" | "categorical"
    pub kind: String,
    /// Categorical only: the maximum level S (values run 0..=S).
    pub levels: Option<usize>,
    /// Method name (e.g. "srmi-offset"); falls back to the command-line
    /// default when absent.
    pub strategy: Option<String>,
    pub delta: Option<f64>,
    pub variance_by_r_pattern: Option<bool>,
    pub offset_as_covariate: Option<bool>,
    pub normal_scores: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarFile {
    pub variables: Vec<VarFileEntry>,
}

pub fn parse_var_file(path: impl AsRef<Path>) -> Result<VarFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let is_json = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("json"))
        .unwrap_or(false);
    if is_json {
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Turn file entries into variable specs, applying the default strategy to
/// entries without one.
pub fn resolve_specs(
    file: &VarFile,
    default_strategy: StrategyKind,
) -> Result<HashMap<String, VariableSpec>> {
    let mut out = HashMap::new();
    for e in &file.variables {
        let kind = match e.kind.as_str() {
            "continuous" => VarKind::Continuous,
            "binary" => VarKind::Binary,
            "categorical" => {
                let max_level = e.levels.ok_or_else(|| {
                    Error::Config(format!("variable {}: categorical needs 'levels'", e.name))
                })?;
                VarKind::Categorical { max_level }
            }
            other => {
                return Err(Error::Config(format!(
                    "variable {}: unknown kind '{other}'",
                    e.name
                )))
            }
        };
        let strategy_kind = match &e.strategy {
            Some(s) => StrategyKind::parse(s)?,
            None => default_strategy,
        };
        let strategy = ImputationStrategy {
            kind: strategy_kind,
            variance_by_r_pattern: e.variance_by_r_pattern.unwrap_or(false),
            offset_as_covariate: e.offset_as_covariate.unwrap_or(false),
            normal_scores: e.normal_scores.unwrap_or(false),
        };
        let spec = VariableSpec {
            kind,
            strategy,
            sensitivity_delta: e.delta.unwrap_or(0.0),
        };
        spec.validate()?;
        if out.insert(e.name.clone(), spec).is_some() {
            return Err(Error::Config(format!("duplicate variable '{}'", e.name)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub n: Option<usize>,
    pub n_reps: Option<usize>,
    /// "normal" | "binary"
    pub kind: String,
    pub phi: Option<Vec<f64>>,
    pub rho: Option<Vec<f64>>,
    pub methods: Option<Vec<String>>,
    pub m_imputations: Option<usize>,
    pub n_iterations: Option<usize>,
    pub seed: Option<u64>,
}

pub fn parse_kind(s: &str) -> Result<SimKind> {
    match s {
        "normal" => Ok(SimKind::Normal),
        "binary" => Ok(SimKind::Binary),
        other => Err(Error::Config(format!(
            "unknown kind '{other}'; expected 'normal' or 'binary'"
        ))),
    }
}

impl ScenarioFile {
    pub fn into_config(self) -> Result<ScenarioConfig> {
        let kind = parse_kind(&self.kind)?;
        let desk = ScenarioConfig::desk(kind);
        let methods = match self.methods {
            Some(names) => names
                .iter()
                .map(|n| StrategyKind::parse(n))
                .collect::<Result<Vec<_>>>()?,
            None => default_methods(kind),
        };
        let cfg = ScenarioConfig {
            n: self.n.unwrap_or(desk.n),
            n_reps: self.n_reps.unwrap_or(desk.n_reps),
            kind,
            phi: self.phi.unwrap_or(desk.phi),
            rho: self.rho.unwrap_or(desk.rho),
            methods,
            m_imputations: self.m_imputations.unwrap_or(desk.m_imputations),
            n_iterations: self.n_iterations.unwrap_or(desk.n_iterations),
            seed: self.seed.unwrap_or(desk.seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn parse_scenario_file(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let is_json = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("json"))
        .unwrap_or(false);
    let file: ScenarioFile = if is_json {
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
    };
    file.into_config()
}

/// Named scenario presets.
///
/// - paper-normal / paper-binary: the published grid at full scale
///   (200 replicates, M = 10)
/// - desk-normal / desk-binary: the same grid at desk scale
///   (50 replicates, M = 5, 20 iterations)
/// - mar-only: phi = 0 at desk scale
/// - smoke: a tiny configuration that finishes in seconds
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let cfg = match name {
        "paper-normal" | "paper-binary" => {
            let kind = if name.ends_with("normal") {
                SimKind::Normal
            } else {
                SimKind::Binary
            };
            ScenarioConfig {
                n_reps: 200,
                m_imputations: 10,
                ..ScenarioConfig::desk(kind)
            }
        }
        "desk-normal" => ScenarioConfig::desk(SimKind::Normal),
        "desk-binary" => ScenarioConfig::desk(SimKind::Binary),
        "mar-only" => ScenarioConfig {
            phi: vec![0.0],
            ..ScenarioConfig::desk(SimKind::Normal)
        },
        "smoke" => ScenarioConfig {
            n: 300,
            n_reps: 2,
            kind: SimKind::Normal,
            phi: vec![0.0, 1.0],
            rho: vec![0.0],
            methods: vec![
                StrategyKind::Srmi,
                StrategyKind::SrmiMi,
                StrategyKind::SrmiOffset,
            ],
            m_imputations: 2,
            n_iterations: 3,
            seed: 7,
        },
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}'; available: paper-normal, paper-binary, \
                 desk-normal, desk-binary, mar-only, smoke"
            )))
        }
    };
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_var_file_roundtrip() {
        let text = r#"
            [[variables]]
            name = "x1"
            kind = "continuous"
            strategy = "srmi-offset"
            delta = 0.5

            [[variables]]
            name = "c"
            kind = "categorical"
            levels = 3
        "#;
        let file: VarFile = toml::from_str(text).unwrap();
        let specs = resolve_specs(&file, StrategyKind::Srmi).unwrap();
        assert_eq!(specs["x1"].strategy.kind, StrategyKind::SrmiOffset);
        assert_eq!(specs["x1"].sensitivity_delta, 0.5);
        assert_eq!(specs["c"].kind, VarKind::Categorical { max_level: 3 });
        assert_eq!(specs["c"].strategy.kind, StrategyKind::Srmi);
    }

    #[test]
    fn json_var_file_parses() {
        let text = r#"{"variables": [{"name": "a", "kind": "binary"}]}"#;
        let file: VarFile = serde_json::from_str(text).unwrap();
        let specs = resolve_specs(&file, StrategyKind::SrmiMi).unwrap();
        assert_eq!(specs["a"].kind, VarKind::Binary);
        assert_eq!(specs["a"].strategy.kind, StrategyKind::SrmiMi);
    }

    #[test]
    fn bad_kind_and_duplicates_are_config_errors() {
        let bad = VarFile {
            variables: vec![VarFileEntry {
                name: "a".into(),
                kind: "date".into(),
                levels: None,
                strategy: None,
                delta: None,
                variance_by_r_pattern: None,
                offset_as_covariate: None,
                normal_scores: None,
            }],
        };
        assert!(resolve_specs(&bad, StrategyKind::Srmi).is_err());

        let dup_entry = |name: &str| VarFileEntry {
            name: name.into(),
            kind: "continuous".into(),
            levels: None,
            strategy: None,
            delta: None,
            variance_by_r_pattern: None,
            offset_as_covariate: None,
            normal_scores: None,
        };
        let dups = VarFile {
            variables: vec![dup_entry("a"), dup_entry("a")],
        };
        assert!(resolve_specs(&dups, StrategyKind::Srmi).is_err());
    }

    #[test]
    fn scenario_file_defaults_fill_in() {
        let text = r#"
            kind = "binary"
            phi = [0.0, 1.0]
            n_reps = 4
        "#;
        let file: ScenarioFile = toml::from_str(text).unwrap();
        let cfg = file.into_config().unwrap();
        assert_eq!(cfg.kind, SimKind::Binary);
        assert_eq!(cfg.phi, vec![0.0, 1.0]);
        assert_eq!(cfg.rho, vec![0.0, 1.0]);
        assert_eq!(cfg.n_reps, 4);
        assert_eq!(cfg.n, 2000);
        assert!(!cfg.methods.contains(&StrategyKind::SrmiTricube));
    }

    #[test]
    fn presets_resolve() {
        assert_eq!(preset("paper-normal").unwrap().n_reps, 200);
        assert_eq!(preset("paper-normal").unwrap().phi.len(), 6);
        assert_eq!(preset("mar-only").unwrap().phi, vec![0.0]);
        assert!(preset("smoke").unwrap().n_reps <= 2);
        assert!(preset("nope").is_err());
    }

    #[test]
    fn strategy_names_roundtrip() {
        for k in StrategyKind::ALL {
            assert_eq!(StrategyKind::parse(k.name()).unwrap(), k);
        }
        assert!(StrategyKind::parse("mice").is_err());
    }
}
