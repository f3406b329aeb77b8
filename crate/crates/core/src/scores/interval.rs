use crate::error::{Error, Result};

/// Nominal coverage `(K - 1)/(K + 1)` of the range of a K-member ensemble.
pub fn full_range_level(k: usize) -> f64 {
    (k as f64 - 1.0) / (k as f64 + 1.0)
}

/// Empirical quantile of an ascending sample, interpolating between order
/// statistics at position `h = (n + 1) p` (clamped to `[1, n]`).
///
/// Levels `1/(n+1)` and `n/(n+1)` map exactly onto the sample minimum and
/// maximum.
pub fn sample_quantile(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    let mut h = (n as f64 + 1.0) * level;
    if (h - h.round()).abs() < 1e-9 {
        h = h.round();
    }
    let h = h.clamp(1.0, n as f64);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 || lo == n {
        sorted[lo - 1]
    } else {
        sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1])
    }
}

/// Central prediction interval of the sample at `nominal_level`.
pub fn central_interval(members: &[f64], nominal_level: f64) -> Result<(f64, f64)> {
    if members.len() < 2 {
        return Err(Error::invalid("central interval needs at least two members"));
    }
    if !(nominal_level > 0.0 && nominal_level < 1.0) {
        return Err(Error::invalid(format!("nominal level must lie in (0, 1), got {nominal_level}")));
    }
    let mut sorted = members.to_vec();
    sorted.sort_by(f64::total_cmp);
    let alpha = 1.0 - nominal_level;
    Ok((
        sample_quantile(&sorted, alpha / 2.0),
        sample_quantile(&sorted, 1.0 - alpha / 2.0),
    ))
}

/// Coverage and mean width of central intervals over a set of cases.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalSummary {
    pub nominal_level: f64,
    pub coverage: f64,
    pub average_width: f64,
}

/// Observations on the interval boundary count as covered.
pub fn interval_summary<'a, I>(cases: I, nominal_level: f64) -> Result<IntervalSummary>
where
    I: IntoIterator<Item = (&'a [f64], f64)>,
{
    let (mut n, mut hits, mut width) = (0usize, 0usize, 0.0);
    for (members, y) in cases {
        let (lo, hi) = central_interval(members, nominal_level)?;
        n += 1;
        if lo <= y && y <= hi {
            hits += 1;
        }
        width += hi - lo;
    }
    if n == 0 {
        return Err(Error::invalid("interval summary over zero cases"));
    }
    Ok(IntervalSummary {
        nominal_level,
        coverage: hits as f64 / n as f64,
        average_width: width / n as f64,
    })
}
