use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::config::ModelKind;
use super::experiment::{CaseScore, ExperimentResult};
use super::io::format_time;
use crate::error::{Error, Result};
use crate::scores::{
    benjamini_hochberg, dm_test, rank_histogram_cases, skill_score, CaseKey, DmVariance, PreRankKind, ScoreSeries,
};

const SCORES: [&str; 3] = ["crps", "es", "vs"];

fn score_of(s: &CaseScore, name: &str) -> f64 {
    match name {
        "crps" => s.crps,
        "es" => s.es,
        _ => s.vs,
    }
}

/// Mean scores of one model at one lead time.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub model: ModelKind,
    pub lead_time: u32,
    pub cases: usize,
    pub crps: f64,
    pub es: f64,
    pub vs: f64,
    pub coverage: f64,
    pub width: f64,
    /// Skill scores against the reference; `None` without a reference.
    pub skill: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub model: ModelKind,
    pub lead_time: u32,
    pub score: &'static str,
    pub t_statistic: f64,
    pub p_value: f64,
    pub cases: usize,
    pub mean_diff: f64,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramRow {
    pub model: ModelKind,
    pub kind: PreRankKind,
    pub bins: Vec<u64>,
    pub reliability_index: f64,
}

fn grouped(result: &ExperimentResult) -> BTreeMap<(usize, u32), Vec<&CaseScore>> {
    let order: BTreeMap<ModelKind, usize> = result.models.iter().enumerate().map(|(i, m)| (*m, i)).collect();
    let mut g: BTreeMap<(usize, u32), Vec<&CaseScore>> = BTreeMap::new();
    for s in &result.scores {
        g.entry((order[&s.model], s.lead_time)).or_default().push(s);
    }
    g
}

fn require_model(result: &ExperimentResult, m: ModelKind) -> Result<()> {
    if result.models.contains(&m) {
        Ok(())
    } else {
        Err(Error::Config(format!("reference model {m} was not evaluated")))
    }
}

pub fn summarize(result: &ExperimentResult, reference: Option<ModelKind>) -> Result<Vec<SummaryRow>> {
    if let Some(r) = reference {
        require_model(result, r)?;
    }
    let groups = grouped(result);
    let mut rows: Vec<SummaryRow> = groups
        .iter()
        .map(|(&(mi, lead), v)| {
            let n = v.len() as f64;
            let mean = |f: fn(&CaseScore) -> f64| v.iter().map(|s| f(s)).sum::<f64>() / n;
            SummaryRow {
                model: result.models[mi],
                lead_time: lead,
                cases: v.len(),
                crps: mean(|s| s.crps),
                es: mean(|s| s.es),
                vs: mean(|s| s.vs),
                coverage: mean(|s| s.coverage),
                width: mean(|s| s.width),
                skill: None,
            }
        })
        .collect();
    if let Some(r) = reference {
        let refs: BTreeMap<u32, [f64; 3]> = rows
            .iter()
            .filter(|row| row.model == r)
            .map(|row| (row.lead_time, [row.crps, row.es, row.vs]))
            .collect();
        for row in &mut rows {
            if let Some(base) = refs.get(&row.lead_time) {
                row.skill = Some([
                    skill_score(row.crps, base[0])?,
                    skill_score(row.es, base[1])?,
                    skill_score(row.vs, base[2])?,
                ]);
            }
        }
    }
    Ok(rows)
}

fn series(scores: &[&CaseScore], name: &str) -> Result<ScoreSeries> {
    let keys = scores
        .iter()
        .map(|s| CaseKey {
            init_time: s.init_time,
            lead_time: s.lead_time,
            station: None,
        })
        .collect();
    ScoreSeries::new(keys, scores.iter().map(|s| score_of(s, name)).collect())
}

/// DM tests of every model against `reference` per lead time and score,
/// with Benjamini-Hochberg decisions within each score type.
pub fn compare_models(
    result: &ExperimentResult,
    reference: ModelKind,
    variance: DmVariance,
    alpha: f64,
) -> Result<Vec<CompareRow>> {
    require_model(result, reference)?;
    let groups = grouped(result);
    let ref_index = result.models.iter().position(|m| *m == reference).expect("checked");
    let mut rows = Vec::new();
    for score in SCORES {
        let start = rows.len();
        for (&(mi, lead), v) in &groups {
            if mi == ref_index {
                continue;
            }
            let Some(r) = groups.get(&(ref_index, lead)) else {
                continue;
            };
            let dm = dm_test(&series(v, score)?, &series(r, score)?, variance)?;
            rows.push(CompareRow {
                model: result.models[mi],
                lead_time: lead,
                score,
                t_statistic: dm.t_statistic,
                p_value: dm.p_value,
                cases: dm.n,
                mean_diff: dm.mean_diff,
                significant: false,
            });
        }
        let p: Vec<f64> = rows[start..].iter().map(|r| r.p_value).collect();
        if !p.is_empty() {
            for (row, d) in rows[start..].iter_mut().zip(benjamini_hochberg(&p, alpha)?) {
                row.significant = d;
            }
        }
    }
    Ok(rows)
}

pub fn histograms(result: &ExperimentResult, seed: u64) -> Result<Vec<HistogramRow>> {
    let mut rows = Vec::new();
    for &model in &result.models {
        let Some(cases) = result.samples.get(&model) else {
            continue;
        };
        for kind in PreRankKind::ALL {
            let h = rank_histogram_cases(cases, kind, seed)?;
            rows.push(HistogramRow {
                model,
                kind,
                bins: h.bins,
                reliability_index: h.reliability_index,
            });
        }
    }
    Ok(rows)
}

pub fn case_scores_csv(result: &ExperimentResult) -> String {
    let mut out = String::from("model,init_time,lead_time,crps,es,vs,coverage,width\n");
    for s in &result.scores {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            s.model,
            format_time(s.init_time),
            s.lead_time,
            s.crps,
            s.es,
            s.vs,
            s.coverage,
            s.width
        );
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("model,lead_time,cases,crps,es,vs,coverage,width,crpss,ess,vss\n");
    for r in rows {
        let skill = match r.skill {
            Some([a, b, c]) => format!("{a},{b},{c}"),
            None => ",,".into(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{skill}",
            r.model, r.lead_time, r.cases, r.crps, r.es, r.vs, r.coverage, r.width
        );
    }
    out
}

pub fn compare_csv(rows: &[CompareRow], reference: ModelKind) -> String {
    let mut out = String::from("model,reference,lead_time,score,t_statistic,p_value,cases,mean_diff,bh_significant\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{reference},{},{},{},{},{},{},{}",
            r.model, r.lead_time, r.score, r.t_statistic, r.p_value, r.cases, r.mean_diff, r.significant
        );
    }
    out
}

pub fn histogram_csv(rows: &[HistogramRow]) -> String {
    let mut out = String::from("model,kind,bin,count,reliability_index\n");
    for r in rows {
        for (i, c) in r.bins.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{c},{}", r.model, r.kind.as_str(), i + 1, r.reliability_index);
        }
    }
    out
}
