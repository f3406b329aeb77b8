use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::tape::{Groups, Tape, Var};
use crate::error::{Error, Result};
use crate::scores::{energy_score, variogram_score, VS_DEFAULT_ORDER};

/// Smoothing constant for norms and fractional powers inside the losses.
pub const SMOOTHING_EPS: f64 = 1e-8;

/// Weight of `mean(max(0, -output))` added to every loss by default.
pub const NONNEG_PENALTY: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositeLossConfig {
    pub w1: f64,
    pub w2: f64,
    pub vs_normalizer: f64,
    pub nonneg_penalty: f64,
}

impl CompositeLossConfig {
    pub fn new(w1: f64, vs_normalizer: f64, nonneg_penalty: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w1) {
            return Err(Error::Config(format!("ES weight {w1} outside [0, 1]")));
        }
        if !(vs_normalizer > 0.0 && vs_normalizer.is_finite()) {
            return Err(Error::Config(format!("VS normaliser must be positive, got {vs_normalizer}")));
        }
        if !(nonneg_penalty >= 0.0) {
            return Err(Error::Config(format!("penalty weight must be non-negative, got {nonneg_penalty}")));
        }
        Ok(Self {
            w1,
            w2: 1.0 - w1,
            vs_normalizer,
            nonneg_penalty,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Loss {
    Crps { nonneg_penalty: f64 },
    Energy { nonneg_penalty: f64 },
    Composite(CompositeLossConfig),
}

impl Loss {
    pub fn crps() -> Self {
        Self::Crps {
            nonneg_penalty: NONNEG_PENALTY,
        }
    }

    pub fn energy() -> Self {
        Self::Energy {
            nonneg_penalty: NONNEG_PENALTY,
        }
    }

    fn penalty(&self) -> f64 {
        match *self {
            Self::Crps { nonneg_penalty } | Self::Energy { nonneg_penalty } => nonneg_penalty,
            Self::Composite(c) => c.nonneg_penalty,
        }
    }

    /// Records the loss of `output` against `y` on the tape.
    pub fn record(&self, tape: &mut Tape, output: Var, y: &[f64], groups: &Groups) -> Result<Var> {
        let base = match *self {
            Self::Crps { .. } => tape.crps_loss(output, y)?,
            Self::Energy { .. } => tape.energy_loss(output, y, groups.clone(), SMOOTHING_EPS)?,
            Self::Composite(c) => {
                let es = tape.energy_loss(output, y, groups.clone(), SMOOTHING_EPS)?;
                let es = tape.scale(es, c.w1)?;
                if c.w2 == 0.0 {
                    es
                } else {
                    let vs = tape.variogram_loss(output, y, groups.clone(), VS_DEFAULT_ORDER, SMOOTHING_EPS)?;
                    let vs = tape.scale(vs, c.w2 * c.vs_normalizer)?;
                    tape.add(es, vs)?
                }
            }
        };
        let w = self.penalty();
        if w == 0.0 {
            return Ok(base);
        }
        let pen = tape.negative_part(output)?;
        let pen = tape.scale(pen, w)?;
        tape.add(base, pen)
    }
}

/// Ratio of mean energy score to mean variogram score over raw ensembles.
pub fn vs_normalizer<'a, I>(cases: I) -> Result<f64>
where
    I: IntoIterator<Item = (ArrayView2<'a, f64>, ArrayView1<'a, f64>)>,
{
    let mut es = 0.0;
    let mut vs = 0.0;
    let mut n = 0usize;
    for (f, y) in cases {
        es += energy_score(f, y)?;
        vs += variogram_score(f, y, None, VS_DEFAULT_ORDER)?;
        n += 1;
    }
    if n == 0 || vs <= 0.0 {
        return Err(Error::Degenerate(
            "VS normaliser needs at least one case with a positive variogram score".into(),
        ));
    }
    Ok(es / vs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::Tensor;
    use ndarray::array;
    use std::sync::Arc;

    #[test]
    fn config_checks() {
        let c = CompositeLossConfig::new(0.9, 2.0, 1.0).unwrap();
        assert!((c.w1 + c.w2 - 1.0).abs() < 1e-15);
        assert!(CompositeLossConfig::new(0.5, 0.0, 1.0).is_err());
        assert!(CompositeLossConfig::new(1.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn penalty_is_monotone() {
        let y = vec![0.5, 0.5];
        let groups: Groups = Arc::new(vec![(0, 2)]);
        let value = |w: f64| {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::filled(2, 3, -1.0));
            let l = Loss::Crps { nonneg_penalty: w }.record(&mut tape, x, &y, &groups).unwrap();
            tape.value(l).unwrap().item()
        };
        assert!(value(1.0) > value(0.0));
    }

    #[test]
    fn perfect_forecast_has_zero_crps() {
        let y = vec![0.3, 1.2];
        let groups: Groups = Arc::new(vec![(0, 2)]);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(2, 4, |i, _| y[i]));
        let l = Loss::crps().record(&mut tape, x, &y, &groups).unwrap();
        assert_eq!(tape.value(l).unwrap().item(), 0.0);
    }

    #[test]
    fn normaliser_ratio() {
        let f = array![[0.0, 2.0], [1.0, 0.0]];
        let y = array![1.0, 3.0];
        let c = vs_normalizer([(f.view(), y.view())]).unwrap();
        let es = energy_score(f.view(), y.view()).unwrap();
        let vs = variogram_score(f.view(), y.view(), None, 0.5).unwrap();
        assert!((c - es / vs).abs() < 1e-15);
        assert!(vs_normalizer(std::iter::empty()).is_err());
    }
}
