use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use log::{info, warn};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, ModelKind, NetParams, SshPool};
use super::features::{build_features, Standardizer, Variable};
use super::io::{assemble_cases, read_dataset, Dataset};
use super::synthetic::generate_synthetic;
use crate::copula::{case_seed, ecc, hybrid_from_gnn, schaake_shuffle, sort_rows};
use crate::domain::{
    build_graph, discretize_visibility, ensemble_stats, MultivariateCase, Station, VisibilityCategories,
};
use crate::error::{Error, Result};
use crate::marginal::{
    climatology_features, cluster_stations, fit_polr, fit_semi_local, sample_quantiles, EmosFitConfig, EmosParams,
    LocalPolr, PolrFitConfig, PolrPredictive, SemiLocalEmos,
};
use crate::nnet::{
    train, vs_normalizer, CompositeLossConfig, Instance, Loss, Neighbors, Network, NetworkSpec, Tensor, TrainingLog,
    NONNEG_PENALTY,
};
use crate::scores::{central_interval, crps_sample, energy_score, full_range_level, variogram_score, VS_DEFAULT_ORDER};

/// Stations and complete multivariate cases, sorted by init and lead time.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentData {
    pub stations: Vec<Station>,
    pub cases: Vec<MultivariateCase>,
    pub extra: Option<Vec<Array1<f64>>>,
    /// Incomplete cases left out during assembly.
    pub dropped: usize,
}

impl ExperimentData {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let assembled = assemble_cases(ds)?;
        if assembled.cases.is_empty() {
            return Err(Error::invalid("no complete multivariate cases in the data"));
        }
        Ok(Self {
            stations: ds.stations.clone(),
            cases: assembled.cases,
            extra: assembled.extra,
            dropped: assembled.dropped,
        })
    }

    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let ds = match (&config.data, &config.synthetic) {
            (Some(p), _) => read_dataset(&p.forecasts, &p.observations, &p.stations)?,
            (None, Some(s)) => generate_synthetic(s)?,
            (None, None) => return Err(Error::Config("no data source configured".into())),
        };
        Self::from_dataset(&ds)
    }

    pub fn members(&self) -> usize {
        self.cases.first().map_or(0, MultivariateCase::members)
    }

    /// Unscaled feature matrix of every case.
    pub fn features(&self, variable: Variable) -> Result<Vec<Tensor>> {
        self.cases
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let extra = self.extra.as_ref().map(|e| e[i].view());
                build_features(c, &self.stations, variable, extra)
            })
            .collect()
    }
}

/// Scores of one model on one verification case.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseScore {
    pub model: ModelKind,
    pub init_time: DateTime<Utc>,
    pub lead_time: u32,
    pub crps: f64,
    pub es: f64,
    pub vs: f64,
    pub coverage: f64,
    pub width: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingRecord {
    pub model: ModelKind,
    pub cutoff: DateTime<Utc>,
    pub repetition: usize,
    pub log: TrainingLog,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentResult {
    pub models: Vec<ModelKind>,
    /// Sorted by model (config order), init time and lead time.
    pub scores: Vec<CaseScore>,
    /// Verified samples per model (first repetition for repeated models).
    pub samples: BTreeMap<ModelKind, Vec<MultivariateCase>>,
    pub skipped_days: Vec<NaiveDate>,
    pub logs: Vec<TrainingRecord>,
}

/// Models fitted on one training cutoff.
#[derive(Clone, Debug)]
pub struct FittedModels {
    pub cutoff: DateTime<Utc>,
    pub emos: BTreeMap<u32, SemiLocalEmos>,
    pub polr: Option<(LocalPolr, Standardizer)>,
    pub mlp: Option<(Network, Standardizer)>,
    pub gnn: BTreeMap<ModelKind, Vec<Network>>,
    pub gnn_standardizer: Option<Standardizer>,
    pub logs: Vec<TrainingRecord>,
}

fn mix(a: u64, b: u64) -> u64 {
    let mut x = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn midnight(day: NaiveDate) -> DateTime<Utc> {
    day.and_hms_opt(0, 0, 0).expect("midnight").and_utc()
}

/// Indices of cases initialised within `days` days before `cutoff` whose
/// valid time is strictly before `cutoff`.
pub fn training_window(cases: &[MultivariateCase], cutoff: DateTime<Utc>, days: usize) -> Vec<usize> {
    let start = cutoff - Duration::days(days as i64);
    cases
        .iter()
        .enumerate()
        .filter(|(_, c)| c.init_time >= start && c.valid_time() < cutoff)
        .map(|(i, _)| i)
        .collect()
}

fn fit_emos_models(
    data: &ExperimentData,
    window: &[usize],
    n_clusters: usize,
    seed: u64,
) -> Result<BTreeMap<u32, SemiLocalEmos>> {
    let d = data.stations.len();
    let ids: Vec<String> = data.stations.iter().map(|s| s.id.clone()).collect();
    let mut obs = vec![Vec::new(); d];
    let mut means = vec![Vec::new(); d];
    let mut by_lead: BTreeMap<u32, Vec<(String, crate::domain::EnsembleStats, f64)>> = BTreeMap::new();
    for &i in window {
        let c = &data.cases[i];
        for s in 0..d {
            let stats = ensemble_stats(c.forecasts.row(s).as_slice().expect("standard layout"))?;
            obs[s].push(c.observations[s]);
            means[s].push(stats.mean);
            by_lead
                .entry(c.lead_time)
                .or_default()
                .push((ids[s].clone(), stats, c.observations[s]));
        }
    }
    if by_lead.is_empty() {
        return Err(Error::invalid("EMOS training window is empty"));
    }
    let descriptors = ids
        .iter()
        .enumerate()
        .map(|(s, id)| Ok((id.clone(), climatology_features(&obs[s], &means[s])?)))
        .collect::<Result<Vec<_>>>()?;
    let n = n_clusters.min(d / 2).max(1);
    let clustering = cluster_stations(&descriptors, n, seed)?;
    by_lead
        .into_par_iter()
        .map(|(lead, cases)| {
            let cfg = EmosFitConfig {
                seed: mix(seed, u64::from(lead)),
                ..EmosFitConfig::default()
            };
            Ok((lead, fit_semi_local(&cases, &clustering, EmosParams::default(), &cfg)?))
        })
        .collect()
}

fn fit_polr_models(
    data: &ExperimentData,
    features: &[Tensor],
    window: &[usize],
) -> Result<(LocalPolr, Standardizer)> {
    let cats = VisibilityCategories::new();
    let std = Standardizer::fit(window.iter().map(|&i| &features[i]))?;
    let scaled: Vec<Tensor> = window.iter().map(|&i| std.apply(&features[i])).collect::<Result<_>>()?;
    let models = data
        .stations
        .par_iter()
        .enumerate()
        .map(|(s, st)| {
            let rows: Vec<(Vec<f64>, usize)> = window
                .iter()
                .zip(&scaled)
                .map(|(&i, x)| {
                    let y = discretize_visibility(data.cases[i].observations[s])?;
                    Ok((x.row(s).to_vec(), cats.index_of(y)?))
                })
                .collect::<Result<_>>()?;
            Ok((st.id.clone(), fit_polr(&rows, cats.len(), &PolrFitConfig::default())?))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok((LocalPolr { models }, std))
}

fn empty_neighbors(n: usize) -> Neighbors {
    Arc::new(vec![Vec::new(); n])
}

fn fit_mlp(
    data: &ExperimentData,
    features: &[Tensor],
    window: &[usize],
    params: &NetParams,
) -> Result<(Network, Standardizer, TrainingLog)> {
    let std = Standardizer::fit(window.iter().map(|&i| &features[i]))?;
    let none = empty_neighbors(1);
    let mut instances = Vec::new();
    for &i in window {
        let x = std.apply(&features[i])?;
        for s in 0..x.rows() {
            let row = Tensor::from_vec(1, x.cols(), x.row(s).to_vec())?;
            instances.push(Instance::new(row, none.clone(), vec![data.cases[i].observations[s]])?);
        }
    }
    let spec = NetworkSpec::mlp(features[0].cols(), &params.hidden, data.members());
    let (net, log) = train(&spec, &instances, &params.train, &Loss::crps())?;
    Ok((net, std, log))
}

/// Fits every model family needed by `config` on data before `cutoff`.
pub fn fit_models(
    config: &ExperimentConfig,
    data: &ExperimentData,
    features: &[Tensor],
    cutoff: DateTime<Utc>,
    seed: u64,
) -> Result<FittedModels> {
    let wants = |f: fn(ModelKind) -> bool| config.models.iter().any(|m| f(*m));
    let mut fitted = FittedModels {
        cutoff,
        emos: BTreeMap::new(),
        polr: None,
        mlp: None,
        gnn: BTreeMap::new(),
        gnn_standardizer: None,
        logs: Vec::new(),
    };
    if wants(ModelKind::uses_emos) {
        let w = training_window(&data.cases, cutoff, config.emos_window());
        fitted.emos = fit_emos_models(data, &w, config.n_clusters, mix(seed, 1))?;
    }
    if wants(ModelKind::uses_polr) {
        let w = training_window(&data.cases, cutoff, config.polr_window());
        if w.is_empty() {
            return Err(Error::invalid("POLR training window is empty"));
        }
        fitted.polr = Some(fit_polr_models(data, features, &w)?);
    }
    if wants(ModelKind::uses_mlp) {
        let w = training_window(&data.cases, cutoff, config.mlp_window());
        if w.is_empty() {
            return Err(Error::invalid("MLP training window is empty"));
        }
        let params = config.mlp_params(mix(seed, 2))?;
        let (net, std, log) = fit_mlp(data, features, &w, &params)?;
        fitted.logs.push(TrainingRecord {
            model: ModelKind::Mlp,
            cutoff,
            repetition: 0,
            log,
        });
        fitted.mlp = Some((net, std));
    }

    let mut gnn_kinds: BTreeSet<ModelKind> = config.models.iter().copied().filter(|m| m.is_gnn()).collect();
    if config.models.contains(&ModelKind::Hybrid) {
        gnn_kinds.insert(ModelKind::DualGnn);
    }
    if !gnn_kinds.is_empty() {
        let w = training_window(&data.cases, cutoff, config.gnn_window());
        if w.len() < 2 {
            return Err(Error::invalid("GNN training window holds fewer than two cases"));
        }
        let std = Standardizer::fit(w.iter().map(|&i| &features[i]))?;
        let graph = build_graph(&data.stations, config.graph_threshold_km)?;
        let neighbors: Neighbors = Arc::new(graph.neighbors());
        let instances: Vec<Instance> = w
            .iter()
            .map(|&i| Instance::new(std.apply(&features[i])?, neighbors.clone(), data.cases[i].observations.to_vec()))
            .collect::<Result<_>>()?;
        let composite = if gnn_kinds.contains(&ModelKind::DualGnn) {
            let c = vs_normalizer(w.iter().map(|&i| (data.cases[i].forecasts.view(), data.cases[i].observations.view())))?;
            Some(CompositeLossConfig::new(config.es_weight(), c, NONNEG_PENALTY)?)
        } else {
            None
        };
        let jobs: Vec<(ModelKind, usize)> = gnn_kinds
            .iter()
            .flat_map(|k| (0..config.repetitions).map(move |r| (*k, r)))
            .collect();
        let trained = jobs
            .par_iter()
            .map(|&(kind, r)| {
                let loss = match kind {
                    ModelKind::GnnCrps => Loss::crps(),
                    ModelKind::GnnEs => Loss::energy(),
                    _ => Loss::Composite(composite.expect("composite config")),
                };
                let params = config.gnn_params(mix(seed, 100 + r as u64))?;
                let spec = NetworkSpec::graphsage(features[0].cols(), &params.hidden, data.members(), params.dropout);
                let (net, log) = train(&spec, &instances, &params.train, &loss)?;
                Ok((kind, r, net, log))
            })
            .collect::<Result<Vec<_>>>()?;
        for (kind, r, net, log) in trained {
            fitted.gnn.entry(kind).or_default().push(net);
            fitted.logs.push(TrainingRecord {
                model: kind,
                cutoff,
                repetition: r,
                log,
            });
        }
        fitted.gnn_standardizer = Some(std);
    }
    Ok(fitted)
}

/// Per-case scores of a D x K sample.
pub fn score_sample(sample: &Array2<f64>, obs: &Array1<f64>) -> Result<[f64; 5]> {
    let (d, k) = sample.dim();
    let level = full_range_level(k);
    let mut crps = 0.0;
    let mut covered = 0.0;
    let mut width = 0.0;
    for s in 0..d {
        let row = sample.row(s).to_vec();
        crps += crps_sample(&row, obs[s])?;
        let (lo, hi) = central_interval(&row, level)?;
        if lo <= obs[s] && obs[s] <= hi {
            covered += 1.0;
        }
        width += hi - lo;
    }
    let es = energy_score(sample.view(), obs.view())?;
    let vs = variogram_score(sample.view(), obs.view(), None, VS_DEFAULT_ORDER)?;
    let df = d as f64;
    Ok([crps / df, es, vs, covered / df, width / df])
}

fn shuffle_rows(m: &Array2<f64>, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let mut v = row.to_vec();
        v.shuffle(&mut rng);
        row.assign(&Array1::from(v));
    }
    out
}

fn clamp_nonneg(mut m: Tensor) -> Array2<f64> {
    m.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    let (r, c) = m.shape();
    Array2::from_shape_vec((r, c), m.into_vec()).expect("matching shape")
}

fn ssh_pool(
    config: &ExperimentConfig,
    data: &ExperimentData,
    cutoff: DateTime<Utc>,
    window_days: usize,
    lead: u32,
) -> Vec<Vec<f64>> {
    let idx = match config.ssh_pool {
        SshPool::Window => training_window(&data.cases, cutoff, window_days),
        SshPool::All => training_window(&data.cases, cutoff, usize::MAX / 1_000_000),
    };
    idx.into_iter()
        .filter(|&i| data.cases[i].lead_time == lead)
        .map(|i| data.cases[i].observations.to_vec())
        .collect()
}

/// Samples of every requested model for one test case; repeated models
/// carry one sample per repetition.
fn predict_case(
    config: &ExperimentConfig,
    data: &ExperimentData,
    features: &[Tensor],
    fitted: &FittedModels,
    i: usize,
    global_seed: u64,
) -> Result<Vec<(ModelKind, Vec<Array2<f64>>)>> {
    let case = &data.cases[i];
    let (d, k) = (case.dim(), case.members());
    let seed = case_seed(global_seed, case.init_time, case.lead_time);
    let cutoff = fitted.cutoff;

    let emos_sample = if config.models.iter().any(|m| m.uses_emos()) {
        let model = fitted
            .emos
            .get(&case.lead_time)
            .ok_or_else(|| Error::invalid(format!("no EMOS fit for lead time {}", case.lead_time)))?;
        let mut cal = Array2::zeros((d, k));
        for s in 0..d {
            let stats = ensemble_stats(case.forecasts.row(s).as_slice().expect("standard layout"))?;
            let dist = model.predictive(&case.stations[s], &stats)?;
            cal.row_mut(s).assign(&Array1::from(sample_quantiles(&dist, k)));
        }
        Some(cal)
    } else {
        None
    };

    let polr_sample = match &fitted.polr {
        Some((models, std)) => {
            let x = std.apply(&features[i])?;
            let cats = VisibilityCategories::new();
            let mut cal = Array2::zeros((d, k));
            for s in 0..d {
                let pred = PolrPredictive::new(models.model_for(&case.stations[s])?, x.row(s), cats.values())?;
                cal.row_mut(s).assign(&Array1::from(sample_quantiles(&pred, k)));
            }
            Some(cal)
        }
        None => None,
    };

    let mlp_sample = match &fitted.mlp {
        Some((net, std)) => {
            let x = std.apply(&features[i])?;
            let out = clamp_nonneg(net.predict(&x, &empty_neighbors(d))?);
            Some(sort_rows(out.view()))
        }
        None => None,
    };

    let gnn_outputs: BTreeMap<ModelKind, Vec<Array2<f64>>> = match &fitted.gnn_standardizer {
        Some(std) => {
            let x = std.apply(&features[i])?;
            let graph = build_graph(&data.stations, config.graph_threshold_km)?;
            let neighbors: Neighbors = Arc::new(graph.neighbors());
            fitted
                .gnn
                .iter()
                .map(|(kind, nets)| {
                    let outs = nets
                        .iter()
                        .map(|n| Ok(clamp_nonneg(n.predict(&x, &neighbors)?)))
                        .collect::<Result<Vec<_>>>()?;
                    Ok((*kind, outs))
                })
                .collect::<Result<_>>()?
        }
        None => BTreeMap::new(),
    };

    let need = |s: &Option<Array2<f64>>, name: &str| -> Result<Array2<f64>> {
        s.clone().ok_or_else(|| Error::invalid(format!("{name} sample unavailable")))
    };
    let reorder_ssh = |cal: &Array2<f64>, window: usize| -> Result<Array2<f64>> {
        let pool = ssh_pool(config, data, cutoff, window, case.lead_time);
        schaake_shuffle(&pool, cal.view(), seed)
    };

    let mut out = Vec::with_capacity(config.models.len());
    for &model in &config.models {
        let samples = match model {
            ModelKind::Raw => vec![case.forecasts.clone()],
            ModelKind::Emos => vec![shuffle_rows(&need(&emos_sample, "EMOS")?, seed)],
            ModelKind::EmosEcc => vec![ecc(case.forecasts.view(), need(&emos_sample, "EMOS")?.view(), seed)?],
            ModelKind::EmosSsh => vec![reorder_ssh(&need(&emos_sample, "EMOS")?, config.emos_window())?],
            ModelKind::Polr => vec![shuffle_rows(&need(&polr_sample, "POLR")?, seed)],
            ModelKind::PolrEcc => vec![ecc(case.forecasts.view(), need(&polr_sample, "POLR")?.view(), seed)?],
            ModelKind::PolrSsh => vec![reorder_ssh(&need(&polr_sample, "POLR")?, config.polr_window())?],
            ModelKind::Mlp => vec![shuffle_rows(&need(&mlp_sample, "MLP")?, seed)],
            ModelKind::MlpEcc => vec![ecc(case.forecasts.view(), need(&mlp_sample, "MLP")?.view(), seed)?],
            ModelKind::MlpSsh => vec![reorder_ssh(&need(&mlp_sample, "MLP")?, config.mlp_window())?],
            ModelKind::GnnCrps | ModelKind::GnnEs | ModelKind::DualGnn => gnn_outputs
                .get(&model)
                .cloned()
                .ok_or_else(|| Error::invalid(format!("{model} networks unavailable")))?,
            ModelKind::Hybrid => {
                let cal = need(&mlp_sample, "MLP")?;
                gnn_outputs
                    .get(&ModelKind::DualGnn)
                    .ok_or_else(|| Error::invalid("dualGNN networks unavailable"))?
                    .iter()
                    .map(|g| hybrid_from_gnn(g.view(), cal.view(), seed))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        out.push((model, samples));
    }
    Ok(out)
}

/// Verification days with enough history, grouped into refit blocks.
fn plan_blocks(config: &ExperimentConfig, data: &ExperimentData) -> (Vec<Vec<NaiveDate>>, Vec<NaiveDate>) {
    let days: BTreeSet<NaiveDate> = data.cases.iter().map(|c| c.init_time.date_naive()).collect();
    let Some(&earliest) = days.iter().next() else {
        return (Vec::new(), Vec::new());
    };
    let window = config.max_window() as i64;
    let mut skipped = Vec::new();
    let mut verify = Vec::new();
    for &day in &days {
        if config.verification_start.is_some_and(|s| day < s) || config.verification_end.is_some_and(|e| day > e) {
            continue;
        }
        if earliest > day - Duration::days(window) {
            skipped.push(day);
        } else {
            verify.push(day);
        }
    }
    if !skipped.is_empty() {
        info!("skipped {} verification days with less than {window} days of history", skipped.len());
    }
    let mut blocks: Vec<Vec<NaiveDate>> = Vec::new();
    for day in verify {
        match blocks.last_mut() {
            Some(b) if day < b[0] + Duration::days(config.refit_every_days as i64) => b.push(day),
            _ => blocks.push(vec![day]),
        }
    }
    (blocks, skipped)
}

type BlockOutput = (Vec<CaseScore>, Vec<(ModelKind, MultivariateCase)>, Vec<TrainingRecord>);

fn run_block(
    config: &ExperimentConfig,
    data: &ExperimentData,
    features: &[Tensor],
    block: &[NaiveDate],
    seed: u64,
) -> Result<BlockOutput> {
    let cutoff = midnight(block[0]);
    let fitted = fit_models(config, data, features, cutoff, mix(seed, block[0].to_epoch_days() as u64))?;
    let days: BTreeSet<NaiveDate> = block.iter().copied().collect();
    let mut scores = Vec::new();
    let mut samples = Vec::new();
    for (i, case) in data.cases.iter().enumerate() {
        if !days.contains(&case.init_time.date_naive()) {
            continue;
        }
        for (model, reps) in predict_case(config, data, features, &fitted, i, seed)? {
            let mut acc = [0.0; 5];
            for s in &reps {
                let v = score_sample(s, &case.observations)?;
                for (a, b) in acc.iter_mut().zip(v) {
                    *a += b;
                }
            }
            let n = reps.len() as f64;
            scores.push(CaseScore {
                model,
                init_time: case.init_time,
                lead_time: case.lead_time,
                crps: acc[0] / n,
                es: acc[1] / n,
                vs: acc[2] / n,
                coverage: acc[3] / n,
                width: acc[4] / n,
            });
            let mut verified = case.clone();
            verified.forecasts = reps.into_iter().next().expect("at least one repetition");
            samples.push((model, verified));
        }
    }
    Ok((scores, samples, fitted.logs))
}

/// Rolling-window verification of every configured model.
pub fn rolling_experiment(config: &ExperimentConfig, data: &ExperimentData, seed: u64) -> Result<ExperimentResult> {
    config.validate()?;
    if data.members() < 2 {
        return Err(Error::invalid("verification needs ensembles of at least two members"));
    }
    let features = data.features(config.variable)?;
    let (blocks, skipped) = plan_blocks(config, data);
    if blocks.is_empty() {
        warn!("no verification day has enough training history");
    }
    let outputs = blocks
        .par_iter()
        .map(|b| run_block(config, data, &features, b, seed))
        .collect::<Result<Vec<_>>>()?;

    let order: BTreeMap<ModelKind, usize> = config.models.iter().enumerate().map(|(i, m)| (*m, i)).collect();
    let mut result = ExperimentResult {
        models: config.models.clone(),
        skipped_days: skipped,
        ..Default::default()
    };
    for (scores, samples, logs) in outputs {
        result.scores.extend(scores);
        for (m, c) in samples {
            result.samples.entry(m).or_default().push(c);
        }
        result.logs.extend(logs);
    }
    result
        .scores
        .sort_by(|a, b| (order[&a.model], a.init_time, a.lead_time).cmp(&(order[&b.model], b.init_time, b.lead_time)));
    for v in result.samples.values_mut() {
        v.sort_by_key(|c| (c.init_time, c.lead_time));
    }
    Ok(result)
}
