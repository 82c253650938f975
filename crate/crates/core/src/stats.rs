//! Observables: Gini index, degree distributions, log-log fits, culture
//! counts and time series.

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("statistic undefined: {0}")]
    Undefined(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("time series points must have strictly increasing times ({0} after {1})")]
    Order(SimTime, SimTime),
}

/// Population Gini index, `Σ_i Σ_j |x_i − x_j| / (2 n² x̄)`.
///
/// Computed in O(n log n): with `x` sorted ascending, the pairwise sum equals
/// `2 Σ_i (2i − n + 1) x_i`.
pub fn gini(values: &[f64]) -> Result<f64, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Undefined("gini of an empty sequence".into()));
    }
    if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(StatsError::Undefined("gini needs finite non-negative values".into()));
    }
    let total: f64 = values.iter().sum();
    if total == 0.0 {
        return Err(StatsError::Undefined("gini of an all-zero sequence".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * i as f64 - n + 1.0) * x)
        .sum();
    // pairwise = 2·weighted, denominator 2 n² x̄ = 2 n total
    Ok((weighted / (n * total)).max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegreeHistogram {
    pub counts: BTreeMap<u64, usize>,
    /// `(k, P(D ≥ k))` for each observed degree, ascending in `k`.
    pub ccdf: Vec<(u64, f64)>,
}

impl DegreeHistogram {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

pub fn degree_histogram(degrees: &[u64]) -> DegreeHistogram {
    let mut counts = BTreeMap::new();
    for &d in degrees {
        *counts.entry(d).or_insert(0usize) += 1;
    }
    let n = degrees.len() as f64;
    let mut remaining = degrees.len();
    let mut ccdf = Vec::with_capacity(counts.len());
    for (&k, &c) in &counts {
        ccdf.push((k, remaining as f64 / n));
        remaining -= c;
    }
    DegreeHistogram { counts, ccdf }
}

/// Recovers per-degree counts from a CCDF over `n` samples.
pub fn counts_from_ccdf(ccdf: &[(u64, f64)], n: usize) -> BTreeMap<u64, usize> {
    let at_least: Vec<usize> = ccdf.iter().map(|(_, f)| (f * n as f64).round() as usize).collect();
    ccdf.iter()
        .enumerate()
        .map(|(i, (k, _))| (*k, at_least[i] - at_least.get(i + 1).copied().unwrap_or(0)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

pub const MIN_FIT_POINTS: usize = 5;

/// Ordinary least squares of `ln fraction` on `ln degree` over the points
/// with `lo <= degree <= hi` and positive fraction.
pub fn loglog_slope(ccdf: &[(u64, f64)], lo: u64, hi: u64) -> Result<LogLogFit, StatsError> {
    let pts: Vec<(f64, f64)> = ccdf
        .iter()
        .filter(|(k, f)| *k >= lo && *k <= hi && *k > 0 && *f > 0.0)
        .map(|(k, f)| ((*k as f64).ln(), f.ln()))
        .collect();
    if pts.len() < MIN_FIT_POINTS {
        return Err(StatsError::Fit(format!(
            "{} usable points in [{lo}, {hi}], need {MIN_FIT_POINTS}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(StatsError::Fit("all degrees identical".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(LogLogFit {
        slope,
        intercept,
        r_squared,
        points: pts.len(),
    })
}

pub fn distinct_cultures<T: AsRef<[u32]>>(cultures: &[T]) -> Result<usize, StatsError> {
    let Some(first) = cultures.first() else {
        return Ok(0);
    };
    let width = first.as_ref().len();
    let mut seen = HashSet::with_capacity(cultures.len());
    for c in cultures {
        let c = c.as_ref();
        if c.len() != width {
            return Err(StatsError::Shape(format!("culture of length {} among length {width}", c.len())));
        }
        seen.insert(c);
    }
    Ok(seen.len())
}

/// Share of `true` values; `None` for an empty input.
pub fn fraction_true(flags: impl IntoIterator<Item = bool>) -> Option<f64> {
    let (hits, total) = flags
        .into_iter()
        .fold((0usize, 0usize), |(h, t), f| (h + usize::from(f), t + 1));
    (total > 0).then(|| hits as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeSeries {
    pub label: String,
    points: Vec<(SimTime, f64)>,
}

impl TimeSeries {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            points: Vec::new(),
        }
    }

    /// Appends a point. A point at the last recorded time overwrites it.
    pub fn push(&mut self, t: SimTime, value: f64) -> Result<(), StatsError> {
        match self.points.last_mut() {
            Some(last) if last.0 == t => last.1 = value,
            Some(last) if last.0 > t => return Err(StatsError::Order(t, last.0)),
            _ => self.points.push((t, value)),
        }
        Ok(())
    }

    pub fn points(&self) -> &[(SimTime, f64)] {
        self.points.as_slice()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Value in force at `t` (last observation carried forward); `None`
    /// before the first point.
    pub fn value_at(&self, t: SimTime) -> Option<f64> {
        let idx = self.points.partition_point(|(pt, _)| *pt <= t);
        idx.checked_sub(1).map(|i| self.points[i].1)
    }

    /// Last-observation-carried-forward values on `grid`.
    pub fn resample(&self, grid: &[SimTime]) -> Vec<Option<f64>> {
        grid.iter().map(|t| self.value_at(*t)).collect()
    }
}

/// `steps + 1` evenly spaced times from 0 to `t_end` inclusive.
pub fn uniform_grid(t_end: f64, steps: usize) -> Vec<SimTime> {
    (0..=steps)
        .map(|i| SimTime::new(t_end * i as f64 / steps as f64).expect("non-negative grid time"))
        .collect()
}

/// Mean and sample standard deviation, skipping `None`s. `None` when
/// nothing is left.
pub fn mean_std(values: impl IntoIterator<Item = Option<f64>>) -> Option<(f64, f64)> {
    let xs: Vec<f64> = values.into_iter().flatten().collect();
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn t(x: f64) -> SimTime {
        SimTime::new(x).unwrap()
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[10.0; 4]).unwrap(), 0.0);
        assert!((gini(&[0.0, 0.0, 0.0, 1.0]).unwrap() - 0.75).abs() < 1e-12);
        assert!((gini(&[1.0, 2.0, 3.0, 4.0]).unwrap() - 0.25).abs() < 1e-12);
        assert!(gini(&[]).is_err());
        assert!(gini(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn histogram_examples() {
        let h = degree_histogram(&[1, 1, 2]);
        assert_eq!(h.counts, BTreeMap::from([(1, 2), (2, 1)]));
        let h = degree_histogram(&[3; 100]);
        assert_eq!(h.ccdf, vec![(3, 1.0)]);
        let h = degree_histogram(&[1, 2, 4, 8]);
        assert_eq!(h.ccdf[1], (2, 0.75));
        assert_eq!(counts_from_ccdf(&h.ccdf, 4), h.counts);
    }

    #[test]
    fn exact_power_law_fit() {
        let ccdf: Vec<(u64, f64)> = (1..=100).map(|k| (k, (k as f64).powf(-2.0))).collect();
        let fit = loglog_slope(&ccdf, 1, 100).unwrap();
        assert!((fit.slope + 2.0).abs() < 0.01);
        assert!(fit.r_squared > 0.999);
    }

    #[test]
    fn constant_ccdf_is_flat() {
        let ccdf: Vec<(u64, f64)> = (1..=10).map(|k| (k, 0.5)).collect();
        assert_eq!(loglog_slope(&ccdf, 1, 10).unwrap().slope, 0.0);
    }

    #[test]
    fn sampled_power_law_fit() {
        // Pareto-like integer samples with P(D >= k) = k^-1.5.
        let mut rng = RngStream::from_seed(5);
        let degrees: Vec<u64> = (0..200_000)
            .map(|_| (1.0 - rng.uniform()).powf(-1.0 / 1.5).floor() as u64)
            .collect();
        let h = degree_histogram(&degrees);
        let fit = loglog_slope(&h.ccdf, 1, 40).unwrap();
        assert!((fit.slope + 1.5).abs() < 0.05, "slope {}", fit.slope);
    }

    #[test]
    fn too_few_points() {
        let ccdf = vec![(1, 1.0), (2, 0.5)];
        assert!(matches!(loglog_slope(&ccdf, 1, 10), Err(StatsError::Fit(_))));
    }

    #[test]
    fn culture_counting() {
        assert_eq!(distinct_cultures(&vec![vec![1u32; 5]; 100]).unwrap(), 1);
        assert_eq!(distinct_cultures(&[vec![1u32, 2], vec![2, 1], vec![1, 2]]).unwrap(), 2);
        assert!(distinct_cultures(&[vec![1u32, 2], vec![1]]).is_err());
    }

    #[test]
    fn random_cultures_mostly_distinct() {
        let mut rng = RngStream::from_seed(11);
        let cultures: Vec<Vec<u32>> = (0..100)
            .map(|_| (0..5).map(|_| rng.index(20) as u32).collect())
            .collect();
        assert_eq!(distinct_cultures(&cultures).unwrap(), 100);
    }

    #[test]
    fn locf_resampling() {
        let mut s = TimeSeries::new("x");
        s.push(t(0.0), 1.0).unwrap();
        s.push(t(1.5), 2.0).unwrap();
        s.push(t(1.5), 3.0).unwrap();
        assert!(s.push(t(1.0), 0.0).is_err());
        let grid = uniform_grid(2.0, 4);
        assert_eq!(s.resample(&grid), vec![Some(1.0), Some(1.0), Some(1.0), Some(3.0), Some(3.0)]);
        assert_eq!(TimeSeries::new("e").value_at(t(1.0)), None);
    }

    #[test]
    fn mean_std_basic() {
        let (m, s) = mean_std([Some(1.0), Some(3.0), None]).unwrap();
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(fraction_true([true, false, false, true]), Some(0.5));
    }
}
