use std::f64::consts::PI;

use chrono::Datelike;
use log::info;
use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::domain::{ensemble_stats, MultivariateCase, Station};
use crate::error::{Error, Result};
use crate::nnet::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Solar,
    Visibility,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    EnsembleStat,
    Coordinate,
    Elevation,
    LeadTime,
    Seasonal,
    CategoryFraction,
    Control,
    ExtraCovariate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSchema {
    pub features: Vec<(&'static str, FeatureKind)>,
}

impl FeatureSchema {
    pub fn for_variable(variable: Variable, with_extra: bool) -> Self {
        use FeatureKind::*;
        let mut features = match variable {
            Variable::Solar => vec![
                ("ens_mean", EnsembleStat),
                ("zero_fraction", EnsembleStat),
                ("ens_variance", EnsembleStat),
            ],
            Variable::Visibility => vec![
                ("control", Control),
                ("exch_mean", EnsembleStat),
                ("exch_sd", EnsembleStat),
                ("frac_below_5000", CategoryFraction),
                ("frac_5000_30000", CategoryFraction),
                ("frac_30000_70000", CategoryFraction),
            ],
        };
        if variable == Variable::Visibility {
            if with_extra {
                features.push(("extra", ExtraCovariate));
            }
            features.push(("season_sin", Seasonal));
            features.push(("season_cos", Seasonal));
        }
        features.extend([
            ("lat", Coordinate),
            ("lon", Coordinate),
            ("elevation", Elevation),
            ("lead_time", LeadTime),
        ]);
        Self { features }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.features.iter().map(|f| f.0).collect()
    }
}

/// `(sin, cos)` of the annual phase for a 0-based day of year.
pub fn seasonal_terms(day_of_year: u32) -> (f64, f64) {
    let phase = 2.0 * PI * f64::from(day_of_year) / 365.0;
    (phase.sin(), phase.cos())
}

/// Fractions of members below 5000 m, in [5000, 30000) m and in
/// [30000, 70000] m.
pub fn band_fractions(members: &[f64]) -> [f64; 3] {
    let k = members.len() as f64;
    let mut c = [0.0; 3];
    for &m in members {
        if m < 5000.0 {
            c[0] += 1.0;
        } else if m < 30000.0 {
            c[1] += 1.0;
        } else if m <= 70000.0 {
            c[2] += 1.0;
        }
    }
    c.map(|v| v / k)
}

/// Unscaled D x F feature matrix for one case.
pub fn build_features(
    case: &MultivariateCase,
    stations: &[Station],
    variable: Variable,
    extra: Option<ArrayView1<f64>>,
) -> Result<Tensor> {
    if stations.len() != case.dim() {
        return Err(Error::mismatch(format!(
            "{} stations for a case with {} rows",
            stations.len(),
            case.dim()
        )));
    }
    if let Some(e) = extra {
        if e.len() != case.dim() {
            return Err(Error::mismatch("extra covariate length differs from station count"));
        }
    }
    let schema = FeatureSchema::for_variable(variable, extra.is_some());
    let lead = f64::from(case.lead_time);
    let mut data = Vec::with_capacity(case.dim() * schema.len());
    for (d, st) in stations.iter().enumerate() {
        let members = case.forecasts.row(d).to_vec();
        match variable {
            Variable::Solar => {
                let s = ensemble_stats(&members)?;
                data.extend([s.mean, s.zero_fraction, s.variance]);
            }
            Variable::Visibility => {
                let control = members[0];
                let exch = if members.len() > 1 { &members[1..] } else { &members[..] };
                let s = ensemble_stats(exch)?;
                data.push(control);
                data.extend([s.mean, s.sd()]);
                data.extend(band_fractions(&members));
                if let Some(e) = extra {
                    data.push(e[d]);
                }
                let (sin, cos) = seasonal_terms(case.init_time.ordinal0());
                data.extend([sin, cos]);
            }
        }
        data.extend([st.latitude, st.longitude, st.elevation, lead]);
    }
    Tensor::from_vec(case.dim(), schema.len(), data)
}

/// Column means and standard deviations from training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// Columns with zero spread keep their raw values.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a Tensor>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        for t in rows {
            if sum.is_empty() {
                sum = vec![0.0; t.cols()];
                sq = vec![0.0; t.cols()];
            } else if t.cols() != sum.len() {
                return Err(Error::mismatch("feature matrices differ in width"));
            }
            for i in 0..t.rows() {
                for (j, v) in t.row(i).iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
            }
            n += t.rows();
        }
        if n == 0 {
            return Err(Error::invalid("standardisation needs at least one feature row"));
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let sd: Vec<f64> = sq
            .iter()
            .zip(&mean)
            .enumerate()
            .map(|(j, (s, m))| {
                let var = (s / nf - m * m).max(0.0);
                let sd = var.sqrt();
                if sd <= 1e-12 * m.abs().max(1.0) {
                    info!("feature column {j} is constant over the training window; passing it unscaled");
                    0.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, sd })
    }

    pub fn apply(&self, t: &Tensor) -> Result<Tensor> {
        if t.cols() != self.mean.len() {
            return Err(Error::mismatch("feature width differs from the fitted standardiser"));
        }
        Ok(Tensor::from_fn(t.rows(), t.cols(), |i, j| {
            if self.sd[j] == 0.0 {
                t.get(i, j)
            } else {
                (t.get(i, j) - self.mean[j]) / self.sd[j]
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn seasonal_origin() {
        let (s, c) = seasonal_terms(0);
        assert_eq!((s, c), (0.0, 1.0));
    }

    fn station(i: usize) -> Station {
        Station::new(format!("s{i}"), 45.0 + i as f64, 7.0, 100.0 * i as f64).unwrap()
    }

    #[test]
    fn solar_features_of_zero_ensemble() {
        let t = Utc.with_ymd_and_hms(2020, 6, 1, 0, 0, 0).unwrap();
        let case = MultivariateCase::new(
            t,
            12,
            vec!["s0".into(), "s1".into()],
            Array2::zeros((2, 8)),
            array![0.0, 1.0],
        )
        .unwrap();
        let f = build_features(&case, &[station(0), station(1)], Variable::Solar, None).unwrap();
        assert_eq!(f.shape(), (2, 7));
        assert_eq!(&f.row(0)[..3], &[0.0, 1.0, 0.0]);
        assert_eq!(f.get(1, 3), 46.0);
        assert_eq!(f.get(1, 6), 12.0);
    }

    #[test]
    fn visibility_schema_width() {
        let t = Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap();
        let case = MultivariateCase::new(
            t,
            6,
            vec!["s0".into()],
            Array2::from_elem((1, 51), 4000.0),
            array![3000.0],
        )
        .unwrap();
        let f = build_features(&case, &[station(0)], Variable::Visibility, Some(array![2.5].view())).unwrap();
        assert_eq!(f.cols(), FeatureSchema::for_variable(Variable::Visibility, true).len());
        assert_eq!(f.get(0, 3), 1.0);
        assert_eq!(f.get(0, 6), 2.5);
        assert_eq!(f.get(0, 7), 0.0);
        assert_eq!(f.get(0, 8), 1.0);
    }

    #[test]
    fn standardizer_passes_constant_columns() {
        let a = Tensor::from_vec(2, 2, vec![1.0, 5.0, 3.0, 5.0]).unwrap();
        let s = Standardizer::fit([&a]).unwrap();
        let z = s.apply(&a).unwrap();
        assert_eq!(z.data(), &[-1.0, 5.0, 1.0, 5.0]);
    }

    proptest! {
        #[test]
        fn band_fractions_partition(members in prop::collection::vec(0.0f64..70000.0, 1..60)) {
            let f = band_fractions(&members);
            prop_assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(f.iter().sum::<f64>() <= 1.0 + 1e-12);
        }
    }
}
