//! Univariate calibration: censored-normal EMOS (global or semi-local) and
//! proportional-odds logistic regression, plus equidistant-quantile
//! sampling of the fitted predictive distributions.

mod censored;
mod cluster;
mod emos;
mod optim;
mod persist;
mod polr;
mod sampling;

pub use censored::CensoredNormal;
pub use cluster::{climatology_features, cluster_stations, StationClustering};
pub use emos::{emos_link, fit_emos, fit_semi_local, EmosFitConfig, EmosParams, SemiLocalEmos, SCALE_FLOOR};
pub use optim::{nelder_mead, NelderMeadConfig, NelderMeadResult};
pub use persist::{ModelDocument, MODEL_SCHEMA_VERSION};
pub use polr::{fit_polr, LocalPolr, PolrFitConfig, PolrModel, PolrPredictive};
pub use sampling::{quantile_levels, sample_quantiles, Predictive};
