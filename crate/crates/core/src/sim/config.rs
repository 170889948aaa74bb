//! Simulation configuration, loadable from TOML or JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::bandwidth::{BandwidthConfig, Heterogeneity};
use crate::aggregation::Aggregator;
use crate::data::{GaussianMixture, PartitionScheme};
use crate::density::{DensityLadder, EsmConfig, StageConfig};
use crate::error::{Error, Result};
use crate::model::{LocalTrainConfig, ModelKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Timing {
    /// Aggregate every `delta_t` seconds regardless of who has reported.
    #[default]
    Periodic,
    /// Aggregate once every client has uploaded.
    Barrier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImsMode {
    /// Clients re-download their whole sub-model unless they were just
    /// restored, in which case only the new increments are sent.
    #[default]
    Conservative,
    /// Lower bound: clients that were not restored are charged nothing.
    /// Only the byte and time accounting changes; every client still trains
    /// on the fresh global values.
    Optimistic,
}

/// What the plateau detector watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EsmTarget {
    /// Validation accuracy of the client's latest uploaded sub-model.
    #[default]
    SubModel,
    /// Validation accuracy of the global model (same for every client).
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden: Vec<usize>,
    /// Multiplier on the He-normal initial weights; 0 starts from zeros.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Mlp,
            hidden: vec![32],
            init_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(GaussianMixture),
    Idx {
        images: PathBuf,
        labels: PathBuf,
        n_classes: usize,
    },
    Csv {
        path: PathBuf,
        n_classes: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub partition: PartitionScheme,
    /// Fraction held out (before partitioning) for validation.
    pub val_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic(GaussianMixture::default()),
            partition: PartitionScheme::Iid,
            val_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_clients: usize,
    pub heterogeneity: Heterogeneity,
    pub timing: Timing,
    /// Aggregation period in virtual seconds (periodic timing).
    pub delta_t: f64,
    /// Staleness exponent.
    pub alpha: f64,
    pub aggregator: Aggregator,
    /// Server step size for GA.
    pub server_lr: f64,
    pub gmr: bool,
    pub ims: bool,
    pub ims_mode: ImsMode,
    /// Keep each client's latest upload across ticks; when off the buffer is
    /// emptied after every aggregation.
    pub buffer: bool,
    /// Drop buffered uploads older than this many rounds.
    pub max_staleness: Option<u64>,
    pub seed: u64,
    pub total_time: f64,
    pub local: LocalTrainConfig,
    pub ladder: DensityLadder,
    pub stage: StageConfig,
    pub esm: EsmConfig,
    pub esm_target: EsmTarget,
    /// Stage-1 step size.
    pub lambda: f64,
    pub rho_min: f64,
    /// Rounds between importance-ordering refreshes.
    pub k_rest: i64,
    /// Starting densities, one per client. Overrides the heterogeneity
    /// presets and, with GMR on, the stage-1 start at full density.
    pub initial_density: Option<Vec<f64>>,
    /// Evaluate global/sub-model metrics every this many rounds.
    pub eval_every: u64,
    pub bandwidth: BandwidthConfig,
    pub model: ModelConfig,
    pub data: DataConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_clients: 10,
            heterogeneity: Heterogeneity::High,
            timing: Timing::Periodic,
            delta_t: 2.5,
            alpha: 0.5,
            aggregator: Aggregator::Ma,
            server_lr: 1.0,
            gmr: true,
            ims: true,
            ims_mode: ImsMode::Conservative,
            buffer: true,
            max_staleness: None,
            seed: 0,
            total_time: 600.0,
            local: LocalTrainConfig::default(),
            ladder: DensityLadder::standard(),
            stage: StageConfig::default(),
            esm: EsmConfig::default(),
            esm_target: EsmTarget::SubModel,
            lambda: 0.5,
            rho_min: 0.05,
            k_rest: 25,
            initial_density: None,
            eval_every: 1,
            bandwidth: BandwidthConfig::default(),
            model: ModelConfig::default(),
            data: DataConfig::default(),
        }
    }
}

fn positive(x: f64, what: &str) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} must be > 0, got {x}")))
    }
}

impl SimConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// Reads `.json` files as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Returns a copy with the dotted `key` (e.g. `local.lr`) set to `value`.
    /// `value` is read as a TOML literal, falling back to a plain string.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let mut root = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let parsed = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts
            .pop()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| Error::Config("empty key".into()))?;
        let mut table = &mut root;
        for part in parts {
            table = table
                .entry(part)
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a table")))?;
        }
        table.insert(last.to_string(), parsed);
        root.try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key} = {value}: {e}")))
    }

    /// Timing actually used: GA and FA always run behind a barrier.
    pub fn effective_timing(&self) -> Timing {
        if self.aggregator.requires_barrier() {
            Timing::Barrier
        } else {
            self.timing
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::Config("n_clients must be ≥ 1".into()));
        }
        positive(self.delta_t, "delta_t")?;
        positive(self.total_time, "total_time")?;
        positive(self.server_lr, "server_lr")?;
        positive(self.lambda, "lambda")?;
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be ≥ 0, got {}", self.alpha)));
        }
        if !(self.rho_min > 0.0 && self.rho_min <= 1.0) {
            return Err(Error::Config(format!("rho_min {} not in (0, 1]", self.rho_min)));
        }
        if self.k_rest < 1 {
            return Err(Error::Config(format!("k_rest must be ≥ 1, got {}", self.k_rest)));
        }
        if self.eval_every == 0 || self.esm.eval_interval == 0 {
            return Err(Error::Config("evaluation intervals must be ≥ 1".into()));
        }
        if self.gmr && self.ladder.max() != 1.0 {
            return Err(Error::Config("with GMR on the density ladder must contain 1.0".into()));
        }
        if let Some(init) = &self.initial_density {
            if init.len() != self.n_clients {
                return Err(Error::Config(format!(
                    "initial_density has {} entries for {} clients",
                    init.len(),
                    self.n_clients
                )));
            }
            if let Some(bad) = init.iter().find(|r| !(r.is_finite() && **r > 0.0 && **r <= 1.0)) {
                return Err(Error::Config(format!("initial density {bad} not in (0, 1]")));
            }
        }
        if !(self.data.val_fraction > 0.0 && self.data.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction {} not in (0, 1)",
                self.data.val_fraction
            )));
        }
        if self.model.kind == ModelKind::Logistic && !self.model.hidden.is_empty() {
            return Err(Error::Config("a logistic model has no hidden layers".into()));
        }
        if !(self.model.init_scale.is_finite() && self.model.init_scale >= 0.0) {
            return Err(Error::Config("init_scale must be ≥ 0".into()));
        }
        self.local.validate()?;
        self.bandwidth.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = SimConfig::default();
        let back = SimConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = SimConfig::from_toml_str(
            "n_clients = 4\nheterogeneity = \"low\"\naggregator = \"fa\"\n[data.partition]\nscheme = \"dirichlet\"\nalpha = 0.6\n",
        )
        .unwrap();
        assert_eq!(cfg.n_clients, 4);
        assert_eq!(cfg.effective_timing(), Timing::Barrier);
        assert_eq!(cfg.data.partition, PartitionScheme::Dirichlet { alpha: 0.6 });
        assert_eq!(cfg.local, LocalTrainConfig::default());
    }

    #[test]
    fn json_and_unknown_keys() {
        let cfg = SimConfig::from_json_str(r#"{"seed": 7, "gmr": false}"#).unwrap();
        assert_eq!((cfg.seed, cfg.gmr), (7, false));
        assert!(SimConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn dotted_overrides() {
        let cfg = SimConfig::default();
        let c = cfg.with_override("local.lr", "0.1").unwrap();
        assert_eq!(c.local.lr, 0.1);
        let c = c.with_override("aggregator", "ga").unwrap();
        assert_eq!(c.aggregator, Aggregator::Ga);
        let c = c.with_override("ladder", "[0.25, 1.0]").unwrap();
        assert_eq!(c.ladder.levels(), &[0.25, 1.0]);
        let c = c.with_override("initial_density", "[0.5, 1.0]").unwrap();
        assert_eq!(c.initial_density, Some(vec![0.5, 1.0]));
        assert!(cfg.with_override("local.nope", "1").is_err());
        assert!(cfg.with_override("n_clients", "\"x\"").is_err());
    }

    #[test]
    fn validation_errors() {
        let bad = |f: fn(&mut SimConfig)| {
            let mut c = SimConfig::default();
            f(&mut c);
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        };
        bad(|c| c.n_clients = 0);
        bad(|c| c.delta_t = 0.0);
        bad(|c| c.ladder = DensityLadder::new(vec![0.1, 0.5]).unwrap());
        bad(|c| c.initial_density = Some(vec![0.5; 3]));
        bad(|c| c.k_rest = 0);
        bad(|c| c.alpha = -1.0);
    }
}
