//! Run configurations for every subcommand, and the loader that turns a
//! TOML file or a JSON sidecar plus `--set` overrides into one of them.

use std::path::Path;

use conformance::distributions::TransmittanceDistribution;
use conformance::photon::DetectionModel;
use conformance::reweighting::DEFAULT_T_TH;
use conformance::strategies::{ClassicalMode, QuantumSweepMode, ReferenceShape};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// Grid of values: an explicit list or `points` evenly spaced values from
/// `start` to `stop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    Range { start: f64, stop: f64, points: usize },
}

impl Grid {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        let v = match self {
            Grid::List(v) => v.clone(),
            Grid::Range { start, stop, points } => match points {
                0 => Vec::new(),
                1 => vec![*start],
                n => (0..*n)
                    .map(|i| if i + 1 == *n { *stop } else { start + (stop - start) * i as f64 / (n - 1) as f64 })
                    .collect(),
            },
        };
        if v.is_empty() {
            return Err(CliError::Usage("grid is empty".into()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(CliError::Usage("grid values must be finite".into()));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Probe {
    Classical,
    Quantum,
}

impl Probe {
    pub fn as_str(&self) -> &'static str {
        match self {
            Probe::Classical => "classical",
            Probe::Quantum => "quantum",
        }
    }
}

fn ideal() -> DetectionModel {
    DetectionModel::ideal()
}

fn both_probes() -> Vec<Probe> {
    vec![Probe::Classical, Probe::Quantum]
}

fn delta_shape() -> ReferenceShape {
    ReferenceShape::Delta
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    #[serde(default = "delta_shape")]
    pub reference: ReferenceShape,
    pub defective: TransmittanceDistribution,
    pub tau0: Grid,
    pub n_mean: f64,
    #[serde(default = "ideal")]
    pub detection: DetectionModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "delta_shape")]
    pub reference: ReferenceShape,
    pub defective: TransmittanceDistribution,
    pub tau0: Grid,
    pub n_mean: f64,
    #[serde(default = "ideal")]
    pub detection: DetectionModel,
    #[serde(default = "closed_form")]
    pub classical: ClassicalMode,
    #[serde(default)]
    pub quantum: QuantumSweepMode,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn closed_form() -> ClassicalMode {
    ClassicalMode::ClosedForm
}

fn default_mc_samples() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub reference: TransmittanceDistribution,
    pub defective: TransmittanceDistribution,
    #[serde(default = "ideal")]
    pub detection: DetectionModel,
    #[serde(default = "both_probes")]
    pub probes: Vec<Probe>,
    /// Photon numbers for the conditional-error table.
    pub n_grid: Grid,
    /// Fixed bias applied next to plain ML in the conditional-error table.
    pub bias: f64,
    /// Photon number for the cost curve and the optimal-bias table.
    pub n_mean: f64,
    /// Cost weight of the C(b) curve.
    pub s: f64,
    #[serde(default = "default_bias_points")]
    pub bias_points: usize,
    /// Cost weights for the optimal-bias table.
    pub s_grid: Grid,
}

fn default_bias_points() -> usize {
    conformance::decision::DEFAULT_BIAS_POINTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "delta_shape")]
    pub reference: ReferenceShape,
    pub defective: TransmittanceDistribution,
    pub tau0: Grid,
    pub n_mean: f64,
    #[serde(default = "ideal")]
    pub detection: DetectionModel,
    #[serde(default = "both_probes")]
    pub probes: Vec<Probe>,
    #[serde(default = "default_frames")]
    pub samples: usize,
    #[serde(default)]
    pub bias: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_frames() -> usize {
    conformance::monte_carlo::DEFAULT_FRAMES
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Evenly spaced values including both ends.
    Grid,
    /// Independent uniform draws.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// `tau,n_s,n_i` records.
    Csv { path: String },
    /// Simulated twin-beam records at `taus` transmittance values in
    /// `[lo, hi]`, `per_tau` records each.
    Synthetic {
        lo: f64,
        hi: f64,
        taus: usize,
        layout: Layout,
        per_tau: usize,
        #[serde(default = "default_pairs")]
        mean_pairs: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_pairs() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReweightConfig {
    pub dataset: DatasetSource,
    pub target: TransmittanceDistribution,
    pub target_size: usize,
    #[serde(default = "default_threshold")]
    pub t_threshold: f64,
    /// Overrides the Sturges bin count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_threshold() -> f64 {
    DEFAULT_T_TH
}

/// Read a TOML config, or the `config` member of a JSON sidecar written by
/// an earlier run of `command`. Only a `.json` extension marks a sidecar.
pub fn load_value(path: &Path, command: &str) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let mut sidecar: Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        match sidecar.get("command").and_then(Value::as_str) {
            Some(c) if c == command => {}
            Some(c) => {
                return Err(CliError::Usage(format!("sidecar was written by `{c}`, not `{command}`")));
            }
            None => return Err(CliError::Config("sidecar has no `command`".into())),
        }
        return sidecar
            .get_mut("config")
            .map(Value::take)
            .ok_or_else(|| CliError::Config("sidecar has no `config`".into()));
    }
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Apply one `dotted.key=value` override. The value is read as a TOML
/// value when it parses as one and as a bare string otherwise.
pub fn apply_override(config: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Usage(format!("override `{assignment}` has an empty key")));
    }
    let value: Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .map(|v| serde_json::to_value(v).expect("TOML values map to JSON"))
        .unwrap_or_else(|| Value::String(raw.trim().to_string()));
    let mut node = config;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !node.is_object() {
            *node = Value::Object(Default::default());
        }
        let map = node.as_object_mut().expect("object just ensured");
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}

pub fn parse<T: DeserializeOwned>(value: Value) -> Result<T, CliError> {
    serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_grid() {
        let g = Grid::Range {
            start: 0.0,
            stop: 1.0,
            points: 5,
        };
        assert_eq!(g.values().unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(Grid::List(vec![]).values().is_err());
    }

    #[test]
    fn overrides_create_nested_keys() {
        let mut v = serde_json::json!({"detection": {"eta_s": 1.0}});
        apply_override(&mut v, "detection.eta_i=0.8").unwrap();
        apply_override(&mut v, "seed=7").unwrap();
        apply_override(&mut v, "quantum=gaussian-approx").unwrap();
        apply_override(&mut v, "tau0=[0.1, 0.2]").unwrap();
        assert_eq!(
            v,
            serde_json::json!({
                "detection": {"eta_s": 1.0, "eta_i": 0.8},
                "seed": 7,
                "quantum": "gaussian-approx",
                "tau0": [0.1, 0.2]
            })
        );
        assert!(apply_override(&mut v, "novalue").is_err());
    }

    #[test]
    fn sweep_config_from_toml() {
        let v: Value = toml::from_str(
            r#"
            defective = { kind = "gaussian", params = { mean = 0.997, sigma = 0.001 } }
            tau0 = { start = 0.99, stop = 1.0, points = 11 }
            n_mean = 100000
            "#,
        )
        .unwrap();
        let c: SweepConfig = parse(v).unwrap();
        assert_eq!(c.reference, ReferenceShape::Delta);
        assert_eq!(c.n_mean, 1e5);
        assert_eq!(c.tau0.values().unwrap().len(), 11);
    }
}
