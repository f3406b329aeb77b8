use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmosParams, LocalPolr, PolrModel, SemiLocalEmos};
use crate::error::{Error, Result};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// JSON document holding a fitted univariate model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelDocument {
    Emos {
        schema_version: u32,
        params: EmosParams,
    },
    SemiLocalEmos {
        schema_version: u32,
        model: SemiLocalEmos,
    },
    Polr {
        schema_version: u32,
        model: PolrModel,
    },
    LocalPolr {
        schema_version: u32,
        model: LocalPolr,
    },
}

impl ModelDocument {
    pub fn schema_version(&self) -> u32 {
        match self {
            Self::Emos { schema_version, .. }
            | Self::SemiLocalEmos { schema_version, .. }
            | Self::Polr { schema_version, .. }
            | Self::LocalPolr { schema_version, .. } => *schema_version,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text)?;
        if doc.schema_version() != MODEL_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "model schema version {} is not supported (expected {MODEL_SCHEMA_VERSION})",
                doc.schema_version()
            )));
        }
        Ok(doc)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let doc = ModelDocument::Emos {
            schema_version: MODEL_SCHEMA_VERSION,
            params: EmosParams {
                gamma0: 0.1,
                gamma1: 0.9,
                gamma2: -0.3,
                delta0: 0.2,
                delta1: 0.7,
            },
        };
        let text = doc.to_json().unwrap();
        assert!(text.contains("\"kind\": \"emos\""));
        assert_eq!(ModelDocument::from_json(&text).unwrap(), doc);

        let polr = ModelDocument::Polr {
            schema_version: MODEL_SCHEMA_VERSION,
            model: PolrModel::new(vec![-1.0, 0.5, 2.0], vec![0.25]).unwrap(),
        };
        assert_eq!(ModelDocument::from_json(&polr.to_json().unwrap()).unwrap(), polr);
    }

    #[test]
    fn rejects_other_versions() {
        let text = r#"{"kind":"emos","schema_version":99,"params":{"gamma0":0,"gamma1":1,"gamma2":0,"delta0":0,"delta1":1}}"#;
        assert!(ModelDocument::from_json(text).is_err());
    }
}
