use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use super::sampling::Predictive;
use crate::error::{Error, Result};
use crate::special::logistic;

/// Proportional-odds logistic regression:
/// `P(Y <= c | x) = logistic(alpha_c + x^T beta)`.
///
/// The top category absorbs the remaining upper-tail mass, so the
/// category probabilities always sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolrModel {
    cutpoints: Vec<f64>,
    coefficients: Vec<f64>,
}

impl PolrModel {
    pub fn new(cutpoints: Vec<f64>, coefficients: Vec<f64>) -> Result<Self> {
        if cutpoints.len() < 2 {
            return Err(Error::invalid("POLR needs at least two categories"));
        }
        if cutpoints.iter().chain(&coefficients).any(|v| !v.is_finite()) {
            return Err(Error::invalid("POLR parameters must be finite"));
        }
        if cutpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("POLR cutpoints must be strictly ascending"));
        }
        Ok(Self {
            cutpoints,
            coefficients,
        })
    }

    pub fn cutpoints(&self) -> &[f64] {
        &self.cutpoints
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn n_categories(&self) -> usize {
        self.cutpoints.len()
    }

    pub fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    fn linear(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.coefficients.len() {
            return Err(Error::mismatch(format!(
                "POLR expects {} features, got {}",
                self.coefficients.len(),
                x.len()
            )));
        }
        Ok(x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum())
    }

    /// `logistic(alpha_category + x^T beta)` for a 0-based category index.
    pub fn cdf(&self, x: &[f64], category: usize) -> Result<f64> {
        if category >= self.cutpoints.len() {
            return Err(Error::invalid(format!(
                "category index {category} out of range 0..{}",
                self.cutpoints.len()
            )));
        }
        Ok(logistic(self.cutpoints[category] + self.linear(x)?))
    }

    /// Category probabilities from consecutive CDF differences.
    pub fn pmf(&self, x: &[f64]) -> Result<Vec<f64>> {
        let eta = self.linear(x)?;
        let c = self.cutpoints.len();
        let mut out = Vec::with_capacity(c);
        let mut prev = 0.0;
        for i in 0..c - 1 {
            let f = logistic(self.cutpoints[i] + eta);
            out.push((f - prev).max(0.0));
            prev = f;
        }
        out.push(1.0 - prev);
        Ok(out)
    }
}

/// A fitted POLR model evaluated at one feature vector, with the physical
/// value of each category.
pub struct PolrPredictive<'a> {
    cumulative: Vec<f64>,
    values: &'a [f64],
}

impl<'a> PolrPredictive<'a> {
    pub fn new(model: &PolrModel, x: &[f64], values: &'a [f64]) -> Result<Self> {
        if values.len() != model.n_categories() {
            return Err(Error::mismatch(format!(
                "{} category values for a {}-category model",
                values.len(),
                model.n_categories()
            )));
        }
        let pmf = model.pmf(x)?;
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Ok(Self { cumulative, values })
    }
}

impl Predictive for PolrPredictive<'_> {
    fn quantile(&self, level: f64) -> f64 {
        let idx = self.cumulative.partition_point(|&c| c < level);
        self.values[idx.min(self.values.len() - 1)]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PolrFitConfig {
    pub max_iter: usize,
    /// L2 penalty on the coefficients, relative to the mean log-likelihood.
    pub l2: f64,
    /// Stop when the mean log-likelihood improves by less than this.
    pub tol: f64,
}

impl Default for PolrFitConfig {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            l2: 1e-6,
            tol: 1e-12,
        }
    }
}

/// log P(Y = c) and its derivatives with respect to the linear predictors
/// at cutpoints c and c - 1.
fn case_terms(cut: &[f64], eta: f64, c: usize) -> (f64, f64, f64) {
    let top = cut.len() - 1;
    if c == 0 {
        let l = cut[0] + eta;
        // log logistic(l) and d/dl = 1 - F
        let logp = -softplus(-l);
        (logp, logistic(-l), 0.0)
    } else if c == top {
        let l = cut[top - 1] + eta;
        let logp = -softplus(l);
        (logp, 0.0, -logistic(l))
    } else {
        let (hi, lo) = (cut[c] + eta, cut[c - 1] + eta);
        let p = if hi + lo > 0.0 {
            logistic(-lo) - logistic(-hi)
        } else {
            logistic(hi) - logistic(lo)
        };
        let p = p.max(1e-300);
        let (fh, fl) = (logistic(hi), logistic(lo));
        (p.ln(), fh * (1.0 - fh) / p, -fl * (1.0 - fl) / p)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

struct Param {
    first: f64,
    log_gaps: Vec<f64>,
    beta: Vec<f64>,
}

impl Param {
    fn cutpoints(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.log_gaps.len() + 1);
        let mut a = self.first;
        out.push(a);
        for g in &self.log_gaps {
            a += g.exp();
            out.push(a);
        }
        out
    }

    fn flat(&self) -> Vec<f64> {
        let mut v = vec![self.first];
        v.extend(&self.log_gaps);
        v.extend(&self.beta);
        v
    }

    fn from_flat(v: &[f64], n_gaps: usize) -> Self {
        Self {
            first: v[0],
            log_gaps: v[1..=n_gaps].to_vec(),
            beta: v[n_gaps + 1..].to_vec(),
        }
    }
}

/// Penalized mean log-likelihood and its gradient in flat parameter order.
fn objective(p: &Param, data: &[(Vec<f64>, usize)], l2: f64) -> (f64, Vec<f64>) {
    let cut = p.cutpoints();
    let m = p.beta.len();
    let n = data.len() as f64;
    let mut ll = 0.0;
    let mut g_cut = vec![0.0; cut.len()];
    let mut g_beta = vec![0.0; m];
    for (x, c) in data {
        let eta: f64 = x.iter().zip(&p.beta).map(|(a, b)| a * b).sum();
        let (logp, d_hi, d_lo) = case_terms(&cut, eta, *c);
        ll += logp;
        if *c < cut.len() - 1 {
            g_cut[*c] += d_hi;
        }
        if *c > 0 {
            g_cut[*c - 1] += d_lo;
        }
        let d_eta = d_hi + d_lo;
        for (g, xi) in g_beta.iter_mut().zip(x) {
            *g += d_eta * xi;
        }
    }
    let penalty: f64 = p.beta.iter().map(|b| b * b).sum::<f64>() * l2;
    let value = ll / n - penalty;

    // alpha_i = first + sum_{j < i} exp(log_gap_j)
    let mut grad = Vec::with_capacity(1 + p.log_gaps.len() + m);
    grad.push(g_cut.iter().sum::<f64>() / n);
    let mut suffix = 0.0;
    let mut gaps = vec![0.0; p.log_gaps.len()];
    for j in (0..p.log_gaps.len()).rev() {
        suffix += g_cut[j + 1];
        gaps[j] = suffix / n * p.log_gaps[j].exp();
    }
    grad.extend(gaps);
    grad.extend(g_beta.iter().zip(&p.beta).map(|(g, b)| g / n - 2.0 * l2 * b));
    (value, grad)
}

fn initial_params(data: &[(Vec<f64>, usize)], n_categories: usize, m: usize) -> Param {
    let mut counts = vec![0.5; n_categories];
    for (_, c) in data {
        counts[*c] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    let mut acc = 0.0;
    let mut cut: Vec<f64> = counts
        .iter()
        .map(|c| {
            acc += c;
            let p = (acc / total).clamp(1e-6, 1.0 - 1e-6);
            (p / (1.0 - p)).ln()
        })
        .collect();
    // The top cutpoint does not enter the likelihood; keep it one unit up.
    let top = n_categories - 1;
    cut[top] = cut[top - 1] + 1.0;
    for i in 1..n_categories {
        if cut[i] <= cut[i - 1] + 1e-6 {
            cut[i] = cut[i - 1] + 1e-6;
        }
    }
    Param {
        first: cut[0],
        log_gaps: cut.windows(2).map(|w| (w[1] - w[0]).ln()).collect(),
        beta: vec![0.0; m],
    }
}

/// Maximum-likelihood POLR fit by full-batch gradient ascent with step
/// halving. Categories are 0-based indices into `n_categories`.
pub fn fit_polr(data: &[(Vec<f64>, usize)], n_categories: usize, config: &PolrFitConfig) -> Result<PolrModel> {
    if n_categories < 2 {
        return Err(Error::invalid("POLR needs at least two categories"));
    }
    let m = data.first().map_or(0, |(x, _)| x.len());
    if data.len() < n_categories + m {
        return Err(Error::invalid(format!(
            "POLR with {n_categories} categories and {m} features needs at least {} cases, got {}",
            n_categories + m,
            data.len()
        )));
    }
    for (x, c) in data {
        if x.len() != m || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("POLR features must be finite and of equal dimension"));
        }
        if *c >= n_categories {
            return Err(Error::invalid(format!("category {c} out of range 0..{n_categories}")));
        }
    }

    let n_gaps = n_categories - 1;
    let mut param = initial_params(data, n_categories, m);
    let (mut value, mut grad) = objective(&param, data, config.l2);
    let mut step = 1.0;
    let mut converged = false;
    for _ in 0..config.max_iter {
        let x = param.flat();
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&grad).map(|(p, g)| p + step * g).collect();
            let cand = Param::from_flat(&trial, n_gaps);
            let (v, g) = objective(&cand, data, config.l2);
            if v.is_finite() && v > value {
                accepted = Some((cand, v, g));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, v, g)) = accepted else {
            converged = true;
            break;
        };
        let gain = v - value;
        param = cand;
        value = v;
        grad = g;
        step *= 1.5;
        if gain < config.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("POLR fit hit the iteration cap; the likelihood may be unbounded (separation)");
    }
    PolrModel::new(param.cutpoints(), param.beta)
}

/// One POLR model per station.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalPolr {
    pub models: BTreeMap<String, PolrModel>,
}

impl LocalPolr {
    pub fn model_for(&self, station: &str) -> Result<&PolrModel> {
        self.models
            .get(station)
            .ok_or_else(|| Error::invalid(format!("no POLR model for station {station}")))
    }
}
