use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::features::Variable;
use super::synthetic::SyntheticSpec;
use crate::error::{Error, Result};
use crate::nnet::TrainConfig;
use crate::scores::DmVariance;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Raw,
    Emos,
    EmosEcc,
    EmosSsh,
    Polr,
    PolrEcc,
    PolrSsh,
    Mlp,
    MlpEcc,
    MlpSsh,
    GnnCrps,
    GnnEs,
    DualGnn,
    Hybrid,
}

impl ModelKind {
    pub const ALL: [ModelKind; 14] = [
        Self::Raw,
        Self::Emos,
        Self::EmosEcc,
        Self::EmosSsh,
        Self::Polr,
        Self::PolrEcc,
        Self::PolrSsh,
        Self::Mlp,
        Self::MlpEcc,
        Self::MlpSsh,
        Self::GnnCrps,
        Self::GnnEs,
        Self::DualGnn,
        Self::Hybrid,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::Raw => "Raw",
            Self::Emos => "EMOS",
            Self::EmosEcc => "EMOS-ECC",
            Self::EmosSsh => "EMOS-SSh",
            Self::Polr => "POLR",
            Self::PolrEcc => "POLR-ECC",
            Self::PolrSsh => "POLR-SSh",
            Self::Mlp => "MLP",
            Self::MlpEcc => "MLP-ECC",
            Self::MlpSsh => "MLP-SSh",
            Self::GnnCrps => "GNN-CRPS",
            Self::GnnEs => "GNN-ES",
            Self::DualGnn => "dualGNN",
            Self::Hybrid => "MLP-GNN",
        }
    }

    fn snake(self) -> &'static str {
        match self {
            Self::Raw => "raw",
            Self::Emos => "emos",
            Self::EmosEcc => "emos_ecc",
            Self::EmosSsh => "emos_ssh",
            Self::Polr => "polr",
            Self::PolrEcc => "polr_ecc",
            Self::PolrSsh => "polr_ssh",
            Self::Mlp => "mlp",
            Self::MlpEcc => "mlp_ecc",
            Self::MlpSsh => "mlp_ssh",
            Self::GnnCrps => "gnn_crps",
            Self::GnnEs => "gnn_es",
            Self::DualGnn => "dual_gnn",
            Self::Hybrid => "hybrid",
        }
    }

    pub fn uses_emos(self) -> bool {
        matches!(self, Self::Emos | Self::EmosEcc | Self::EmosSsh)
    }

    pub fn uses_polr(self) -> bool {
        matches!(self, Self::Polr | Self::PolrEcc | Self::PolrSsh)
    }

    pub fn uses_mlp(self) -> bool {
        matches!(self, Self::Mlp | Self::MlpEcc | Self::MlpSsh | Self::Hybrid)
    }

    pub fn is_gnn(self) -> bool {
        matches!(self, Self::GnnCrps | Self::GnnEs | Self::DualGnn)
    }

    /// Scores of these models are averaged over the training repetitions.
    pub fn is_repeated(self) -> bool {
        self.is_gnn() || self == Self::Hybrid
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|m| m.label().to_ascii_lowercase() == key || m.snake() == key)
            .ok_or_else(|| Error::Config(format!("unknown model {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SshPool {
    /// Historical dates from the model's training window only.
    #[default]
    Window,
    /// Every date before the verification day.
    All,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Windows {
    pub emos: Option<usize>,
    pub polr: Option<usize>,
    pub mlp: Option<usize>,
    pub gnn: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSettings {
    pub hidden: Option<Vec<usize>>,
    pub dropout: Option<f64>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub validation_fraction: Option<f64>,
}

/// Fully resolved network settings.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub forecasts: PathBuf,
    pub observations: PathBuf,
    pub stations: PathBuf,
}

fn default_repetitions() -> usize {
    10
}
fn default_threshold() -> f64 {
    50.0
}
fn default_refit() -> usize {
    1
}
fn default_clusters() -> usize {
    3
}
fn default_alpha() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variable: Variable,
    pub models: Vec<ModelKind>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_threshold")]
    pub graph_threshold_km: f64,
    /// Weight of the energy score in the composite loss.
    pub es_weight: Option<f64>,
    #[serde(default)]
    pub windows: Windows,
    #[serde(default = "default_refit")]
    pub refit_every_days: usize,
    pub verification_start: Option<NaiveDate>,
    pub verification_end: Option<NaiveDate>,
    #[serde(default = "default_clusters")]
    pub n_clusters: usize,
    #[serde(default)]
    pub gnn: NetSettings,
    #[serde(default)]
    pub mlp: NetSettings,
    #[serde(default)]
    pub ssh_pool: SshPool,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Bartlett lag for the DM variance; the plain sample SD when absent.
    pub dm_bartlett_lag: Option<usize>,
    pub data: Option<DataPaths>,
    pub synthetic: Option<SyntheticSpec>,
}

/// Sets `key` (dotted path) in a TOML table to `value`, parsed as a TOML
/// value when possible and as a string otherwise.
fn set_path(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(value.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {p} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

impl ExperimentConfig {
    /// Parses a TOML document and applies `key=value` overrides.
    pub fn from_toml(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (k, v) in overrides {
            set_path(&mut table, k, v)?;
        }
        let config: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// SHA-256 of the resolved configuration, overrides included.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).unwrap_or_default();
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Config("model list is empty".into()));
        }
        if self.repetitions == 0 || self.refit_every_days == 0 {
            return Err(Error::Config("repetitions and refit interval must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if let Some(w) = self.es_weight {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Config(format!("es_weight {w} outside [0, 1]")));
            }
        }
        for w in [self.windows.emos, self.windows.polr, self.windows.mlp, self.windows.gnn]
            .into_iter()
            .flatten()
        {
            if w == 0 {
                return Err(Error::Config("training windows must be at least one day".into()));
            }
        }
        match (&self.data, &self.synthetic) {
            (Some(_), Some(_)) => return Err(Error::Config("give either [data] or [synthetic], not both".into())),
            (None, None) => return Err(Error::Config("config needs a [data] or [synthetic] section".into())),
            _ => {}
        }
        if let Some(s) = &self.synthetic {
            s.validate()?;
        }
        for kind in &self.models {
            let ok = match self.variable {
                Variable::Solar => !kind.uses_polr(),
                Variable::Visibility => !kind.uses_emos(),
            };
            if !ok {
                return Err(Error::Config(format!("model {kind} does not apply to {:?}", self.variable)));
            }
        }
        self.gnn_params(0)?;
        self.mlp_params(0)?;
        Ok(())
    }

    pub fn es_weight(&self) -> f64 {
        self.es_weight.unwrap_or(match self.variable {
            Variable::Solar => 0.9,
            Variable::Visibility => 0.3,
        })
    }

    pub fn emos_window(&self) -> usize {
        self.windows.emos.unwrap_or(80)
    }

    pub fn polr_window(&self) -> usize {
        self.windows.polr.unwrap_or(350)
    }

    pub fn mlp_window(&self) -> usize {
        self.windows.mlp.unwrap_or(25)
    }

    pub fn gnn_window(&self) -> usize {
        self.windows.gnn.unwrap_or(match self.variable {
            Variable::Solar => 30,
            Variable::Visibility => 530,
        })
    }

    /// Longest training window among the requested models.
    pub fn max_window(&self) -> usize {
        let mut w = 1;
        for m in &self.models {
            if m.uses_emos() {
                w = w.max(self.emos_window());
            }
            if m.uses_polr() {
                w = w.max(self.polr_window());
            }
            if m.uses_mlp() {
                w = w.max(self.mlp_window());
            }
            if m.is_gnn() || *m == ModelKind::Hybrid {
                w = w.max(self.gnn_window());
            }
        }
        w
    }

    fn net_params(s: &NetSettings, hidden: Vec<usize>, dropout: f64, base: TrainConfig) -> Result<NetParams> {
        let train = TrainConfig {
            learning_rate: s.learning_rate.unwrap_or(base.learning_rate),
            batch_size: s.batch_size.unwrap_or(base.batch_size),
            max_epochs: s.max_epochs.unwrap_or(base.max_epochs),
            patience: s.patience.unwrap_or(base.patience),
            validation_fraction: s.validation_fraction.unwrap_or(base.validation_fraction),
            seed: base.seed,
        };
        train.validate()?;
        let dropout = s.dropout.unwrap_or(dropout);
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout {dropout} outside [0, 1)")));
        }
        let hidden = s.hidden.clone().unwrap_or(hidden);
        if hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(NetParams { hidden, dropout, train })
    }

    pub fn gnn_params(&self, seed: u64) -> Result<NetParams> {
        let (hidden, base) = match self.variable {
            Variable::Solar => (vec![1024], TrainConfig::solar_gnn(seed)),
            Variable::Visibility => (vec![64, 64], TrainConfig::visibility_gnn(seed)),
        };
        Self::net_params(&self.gnn, hidden, 0.2, base)
    }

    pub fn mlp_params(&self, seed: u64) -> Result<NetParams> {
        Self::net_params(&self.mlp, vec![255, 255], 0.0, TrainConfig::mlp(seed))
    }

    pub fn dm_variance(&self) -> DmVariance {
        match self.dm_bartlett_lag {
            Some(max_lag) => DmVariance::Bartlett { max_lag },
            None => DmVariance::Sample,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
variable = "solar"
models = ["raw", "emos", "dual_gnn"]

[synthetic]
days = 40
"#;

    #[test]
    fn parse_with_overrides() {
        let c = ExperimentConfig::from_toml(
            BASE,
            &[
                ("gnn.hidden".into(), "[16]".into()),
                ("windows.emos".into(), "20".into()),
                ("synthetic.seed".into(), "5".into()),
            ],
        )
        .unwrap();
        assert_eq!(c.gnn_params(0).unwrap().hidden, vec![16]);
        assert_eq!(c.emos_window(), 20);
        assert_eq!(c.synthetic.as_ref().unwrap().seed, 5);
        assert_eq!(c.es_weight(), 0.9);
        assert_eq!(c.gnn_params(0).unwrap().train.patience, 15);
        assert_eq!(c.max_window(), 30);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{BASE}\nbogus = 1\n");
        assert!(matches!(ExperimentConfig::from_toml(&text, &[]), Err(Error::Config(_))));
        assert!(ExperimentConfig::from_toml(BASE, &[("gnn.width".into(), "3".into())]).is_err());
    }

    #[test]
    fn model_names() {
        assert_eq!("dualGNN".parse::<ModelKind>().unwrap(), ModelKind::DualGnn);
        assert_eq!("emos_ssh".parse::<ModelKind>().unwrap(), ModelKind::EmosSsh);
        assert!("gcn".parse::<ModelKind>().is_err());
        for m in ModelKind::ALL {
            assert_eq!(m.label().parse::<ModelKind>().unwrap(), m);
        }
    }

    #[test]
    fn visibility_rejects_emos() {
        let text = BASE.replace("solar", "visibility");
        assert!(ExperimentConfig::from_toml(&text, &[]).is_err());
    }
}
