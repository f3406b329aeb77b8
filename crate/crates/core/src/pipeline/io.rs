use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Utc};
use log::info;
use ndarray::{Array1, Array2};

use crate::domain::{EnsembleForecast, MultivariateCase, Observation, Station};
use crate::error::{Error, Result};

/// Stations, forecasts and observations as read from disk.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub stations: Vec<Station>,
    pub forecasts: Vec<EnsembleForecast>,
    pub observations: Vec<Observation>,
    /// Optional extra covariate per `(station, init_time, lead_time)`.
    pub extra: BTreeMap<(String, DateTime<Utc>, u32), f64>,
}

/// Cases assembled from a [`Dataset`], plus the matching extra covariate
/// rows when present.
#[derive(Clone, Debug, PartialEq)]
pub struct Assembled {
    pub cases: Vec<MultivariateCase>,
    pub extra: Option<Vec<Array1<f64>>>,
    pub dropped: usize,
}

pub fn format_time(t: DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

pub fn parse_time(text: &str) -> std::result::Result<DateTime<Utc>, String> {
    let text = text.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(text) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(text, fmt) {
            return Ok(t.and_utc());
        }
    }
    Err(format!("unparseable timestamp {text:?}"))
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn header(path: &Path, reader: &mut csv::Reader<std::fs::File>) -> Result<Vec<String>> {
    Ok(reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect())
}

fn expect_columns(path: &Path, found: &[String], expected: &[&str]) -> Result<()> {
    if found.len() < expected.len() || found.iter().zip(expected).any(|(f, e)| f != e) {
        return Err(parse_err(
            path,
            1,
            format!("expected columns {expected:?}, found {found:?}"),
        ));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, name: &str, text: &str) -> Result<T> {
    text.parse()
        .map_err(|_| parse_err(path, line, format!("column {name}: cannot parse {text:?}")))
}

pub fn read_stations(path: &Path) -> Result<Vec<Station>> {
    let mut reader = open(path)?;
    let cols = header(path, &mut reader)?;
    expect_columns(path, &cols, &["station_id", "lat", "lon", "elev_m"])?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 4 {
            return Err(parse_err(path, line, format!("expected 4 fields, found {}", rec.len())));
        }
        let id = rec[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(parse_err(path, line, format!("duplicate station id {id}")));
        }
        let station = Station::new(
            id,
            field(path, line, "lat", &rec[1])?,
            field(path, line, "lon", &rec[2])?,
            field(path, line, "elev_m", &rec[3])?,
        )
        .map_err(|e| parse_err(path, line, e.to_string()))?;
        out.push(station);
    }
    if out.is_empty() {
        return Err(parse_err(path, 1, "no stations"));
    }
    Ok(out)
}

/// Reads forecasts; an optional `extra` column may precede the members.
pub fn read_forecasts(
    path: &Path,
    known: &HashSet<String>,
) -> Result<(Vec<EnsembleForecast>, BTreeMap<(String, DateTime<Utc>, u32), f64>)> {
    let mut reader = open(path)?;
    let cols = header(path, &mut reader)?;
    expect_columns(path, &cols, &["station_id", "init_time", "lead_time_h"])?;
    let has_extra = cols.get(3).is_some_and(|c| c == "extra");
    let first_member = if has_extra { 4 } else { 3 };
    let k = cols.len() - first_member;
    if k == 0 {
        return Err(parse_err(path, 1, "no member columns"));
    }
    for (i, c) in cols[first_member..].iter().enumerate() {
        if *c != format!("member_{}", i + 1) {
            return Err(parse_err(path, 1, format!("expected column member_{}, found {c}", i + 1)));
        }
    }
    let mut out = Vec::new();
    let mut extra = BTreeMap::new();
    let mut seen = HashSet::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != cols.len() {
            return Err(parse_err(path, line, format!("expected {} fields, found {}", cols.len(), rec.len())));
        }
        let id = rec[0].to_string();
        if !known.contains(&id) {
            return Err(parse_err(path, line, format!("unknown station id {id}")));
        }
        let init = parse_time(&rec[1]).map_err(|m| parse_err(path, line, m))?;
        let lead: u32 = field(path, line, "lead_time_h", &rec[2])?;
        if !seen.insert((id.clone(), init, lead)) {
            return Err(parse_err(path, line, "duplicate forecast"));
        }
        let members = (first_member..rec.len())
            .map(|i| field::<f64>(path, line, &cols[i], &rec[i]))
            .collect::<Result<Vec<_>>>()?;
        if has_extra && !rec[3].is_empty() {
            let v: f64 = field(path, line, "extra", &rec[3])?;
            extra.insert((id.clone(), init, lead), v);
        }
        let fc = EnsembleForecast::new(id, init, lead, members).map_err(|e| parse_err(path, line, e.to_string()))?;
        out.push(fc);
    }
    Ok((out, extra))
}

pub fn read_observations(path: &Path, known: &HashSet<String>) -> Result<Vec<Observation>> {
    let mut reader = open(path)?;
    let cols = header(path, &mut reader)?;
    expect_columns(path, &cols, &["station_id", "valid_time", "value"])?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 3 {
            return Err(parse_err(path, line, format!("expected 3 fields, found {}", rec.len())));
        }
        let id = rec[0].to_string();
        if !known.contains(&id) {
            return Err(parse_err(path, line, format!("unknown station id {id}")));
        }
        let t = parse_time(&rec[1]).map_err(|m| parse_err(path, line, m))?;
        if !seen.insert((id.clone(), t)) {
            return Err(parse_err(path, line, "duplicate observation"));
        }
        let v: f64 = field(path, line, "value", &rec[2])?;
        out.push(Observation::new(id, t, v).map_err(|e| parse_err(path, line, e.to_string()))?);
    }
    Ok(out)
}

/// Reads the three CSV files of a dataset.
pub fn read_dataset(forecasts: &Path, observations: &Path, stations: &Path) -> Result<Dataset> {
    let stations = read_stations(stations)?;
    let known: HashSet<String> = stations.iter().map(|s| s.id.clone()).collect();
    let (forecasts, extra) = read_forecasts(forecasts, &known)?;
    let observations = read_observations(observations, &known)?;
    Ok(Dataset {
        stations,
        forecasts,
        observations,
        extra,
    })
}

/// Joins forecasts and observations into complete multivariate cases in
/// station-file order. Cases missing any station are dropped.
pub fn assemble_cases(data: &Dataset) -> Result<Assembled> {
    let index: HashMap<&str, usize> = data
        .stations
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    let obs: HashMap<(&str, DateTime<Utc>), f64> = data
        .observations
        .iter()
        .map(|o| ((o.station_id.as_str(), o.valid_time), o.value))
        .collect();
    let k = data.forecasts.first().map_or(0, |f| f.members.len());
    if let Some(f) = data.forecasts.iter().find(|f| f.members.len() != k) {
        return Err(Error::invalid(format!(
            "mixed ensemble sizes: {} and {k} members ({} at {})",
            f.members.len(),
            f.station_id,
            format_time(f.init_time)
        )));
    }
    let d = data.stations.len();
    let mut groups: BTreeMap<(DateTime<Utc>, u32), Vec<Option<&EnsembleForecast>>> = BTreeMap::new();
    for f in &data.forecasts {
        let slot = groups.entry((f.init_time, f.lead_time)).or_insert_with(|| vec![None; d]);
        let i = *index
            .get(f.station_id.as_str())
            .ok_or_else(|| Error::invalid(format!("unknown station id {}", f.station_id)))?;
        slot[i] = Some(f);
    }
    let use_extra = !data.extra.is_empty();
    let ids: Vec<String> = data.stations.iter().map(|s| s.id.clone()).collect();
    let mut cases = Vec::new();
    let mut extras = Vec::new();
    let mut dropped = 0;
    'group: for ((init, lead), rows) in groups {
        let mut fc = Array2::zeros((d, k));
        let mut y = Array1::zeros(d);
        let mut ex = Array1::zeros(d);
        for (i, row) in rows.iter().enumerate() {
            let Some(f) = row else {
                dropped += 1;
                continue 'group;
            };
            let Some(&v) = obs.get(&(f.station_id.as_str(), f.valid_time())) else {
                dropped += 1;
                continue 'group;
            };
            if use_extra {
                match data.extra.get(&(f.station_id.clone(), init, lead)) {
                    Some(&e) => ex[i] = e,
                    None => {
                        dropped += 1;
                        continue 'group;
                    }
                }
            }
            fc.row_mut(i).assign(&Array1::from(f.members.clone()));
            y[i] = v;
        }
        cases.push(MultivariateCase::new(init, lead, ids.clone(), fc, y)?);
        if use_extra {
            extras.push(ex);
        }
    }
    if dropped > 0 {
        info!("dropped {dropped} incomplete cases");
    }
    Ok(Assembled {
        cases,
        extra: use_extra.then_some(extras),
        dropped,
    })
}

fn write_err(e: impl std::fmt::Display) -> Error {
    Error::invalid(format!("CSV output: {e}"))
}

pub fn write_stations<W: Write>(stations: &[Station], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["station_id", "lat", "lon", "elev_m"]).map_err(write_err)?;
    for s in stations {
        w.write_record([
            s.id.clone(),
            s.latitude.to_string(),
            s.longitude.to_string(),
            s.elevation.to_string(),
        ])
        .map_err(write_err)?;
    }
    w.flush().map_err(write_err)
}

pub fn write_forecasts<W: Write>(data: &Dataset, out: W) -> Result<()> {
    let k = data.forecasts.first().map_or(0, |f| f.members.len());
    let has_extra = !data.extra.is_empty();
    let mut w = csv::Writer::from_writer(out);
    let mut head: Vec<String> = vec!["station_id".into(), "init_time".into(), "lead_time_h".into()];
    if has_extra {
        head.push("extra".into());
    }
    head.extend((1..=k).map(|i| format!("member_{i}")));
    w.write_record(&head).map_err(write_err)?;
    for f in &data.forecasts {
        let mut rec = vec![f.station_id.clone(), format_time(f.init_time), f.lead_time.to_string()];
        if has_extra {
            rec.push(
                data.extra
                    .get(&(f.station_id.clone(), f.init_time, f.lead_time))
                    .map_or(String::new(), f64::to_string),
            );
        }
        rec.extend(f.members.iter().map(f64::to_string));
        w.write_record(&rec).map_err(write_err)?;
    }
    w.flush().map_err(write_err)
}

pub fn write_observations<W: Write>(observations: &[Observation], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["station_id", "valid_time", "value"]).map_err(write_err)?;
    for o in observations {
        w.write_record([o.station_id.clone(), format_time(o.valid_time), o.value.to_string()])
            .map_err(write_err)?;
    }
    w.flush().map_err(write_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamps() {
        let t = parse_time("2021-03-04T06:00:00Z").unwrap();
        assert_eq!(format_time(t), "2021-03-04T06:00:00Z");
        assert_eq!(parse_time("2021-03-04 06:00:00").unwrap(), t);
        assert!(parse_time("yesterday").is_err());
    }
}
