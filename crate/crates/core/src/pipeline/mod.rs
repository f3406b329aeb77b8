//! Data ingestion, features, synthetic data and rolling-window experiments.

mod config;
mod experiment;
mod features;
mod io;
mod report;
mod synthetic;

pub use config::{DataPaths, ExperimentConfig, ModelKind, NetParams, NetSettings, SshPool, Windows};
pub use experiment::{
    fit_models, rolling_experiment, score_sample, training_window, CaseScore, ExperimentData, ExperimentResult,
    FittedModels, TrainingRecord,
};
pub use features::{band_fractions, build_features, seasonal_terms, FeatureKind, FeatureSchema, Standardizer, Variable};
pub use io::{
    assemble_cases, format_time, parse_time, read_dataset, read_forecasts, read_observations, read_stations,
    write_forecasts, write_observations, write_stations, Assembled, Dataset,
};
pub use report::{
    case_scores_csv, compare_csv, compare_models, histogram_csv, histograms, summarize, summary_csv, CompareRow,
    HistogramRow, SummaryRow,
};
pub use synthetic::{correlation_factor, generate_synthetic, SyntheticSpec};
