use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::network::{Network, NetworkSpec, RunningStats};
use super::Tensor;
use crate::error::{Error, Result};

const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StoredTensor {
    rows: usize,
    cols: usize,
    /// Little-endian `f64` values, base64 encoded.
    data: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StoredStats {
    mean: String,
    var: String,
}

/// Portable JSON form of a trained [`Network`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    format_version: u32,
    spec_fingerprint: String,
    spec: NetworkSpec,
    params: Vec<StoredTensor>,
    running: Vec<StoredStats>,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(text: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::invalid(format!("checkpoint array is not valid base64: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::invalid("checkpoint array length is not a multiple of 8 bytes"));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

impl Checkpoint {
    pub fn from_network(net: &Network) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            spec_fingerprint: net.spec().fingerprint(),
            spec: net.spec().clone(),
            params: net
                .params()
                .iter()
                .map(|t| StoredTensor {
                    rows: t.rows(),
                    cols: t.cols(),
                    data: encode(t.data()),
                })
                .collect(),
            running: net
                .running()
                .iter()
                .map(|r| StoredStats {
                    mean: encode(&r.mean),
                    var: encode(&r.var),
                })
                .collect(),
        }
    }

    pub fn into_network(self) -> Result<Network> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint format {} is not supported",
                self.format_version
            )));
        }
        if self.spec.fingerprint() != self.spec_fingerprint {
            return Err(Error::invalid("checkpoint fingerprint does not match its network spec"));
        }
        let params = self
            .params
            .iter()
            .map(|p| Tensor::from_vec(p.rows, p.cols, decode(&p.data)?))
            .collect::<Result<Vec<_>>>()?;
        let running = self
            .running
            .iter()
            .map(|r| {
                Ok(RunningStats {
                    mean: decode(&r.mean)?,
                    var: decode(&r.var)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Network::from_parts(self.spec, params, running)
    }

    pub fn fingerprint(&self) -> &str {
        &self.spec_fingerprint
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
