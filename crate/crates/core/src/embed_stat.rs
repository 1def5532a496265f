//! Training-free baseline: windowed statistical moments per feature plus the
//! encoded statics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{Embedder, EmbeddingMatrix};
use crate::preprocess::{PreparedCohort, PreparedStay};

#[derive(Debug, Error, PartialEq)]
pub enum StatError {
    #[error("stay `{0}` has an empty series")]
    EmptySeries(String),
    #[error("invalid STAT config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Moment {
    Mean,
    /// Population standard deviation.
    Std,
    Min,
    Max,
    FractionObserved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatConfig {
    pub n_windows: usize,
    pub moments: Vec<Moment>,
    pub include_statics: bool,
}

impl Default for StatConfig {
    fn default() -> Self {
        Self {
            n_windows: 4,
            moments: vec![Moment::Mean, Moment::Std, Moment::Min, Moment::Max, Moment::FractionObserved],
            include_statics: true,
        }
    }
}

impl StatConfig {
    pub fn dim(&self, n_features: usize, n_statics: usize) -> usize {
        self.n_windows * self.moments.len() * n_features + if self.include_statics { n_statics } else { 0 }
    }
}

/// Contiguous window bounds over `hours`; lengths differ by at most one and
/// earlier windows take the extra hour. Windows past the end are empty.
pub fn window_bounds(hours: usize, n_windows: usize) -> Vec<(usize, usize)> {
    let base = hours / n_windows;
    let extra = hours % n_windows;
    let mut start = 0;
    (0..n_windows)
        .map(|w| {
            let len = base + usize::from(w < extra);
            let b = (start, start + len);
            start += len;
            b
        })
        .collect()
}

/// Moments of one feature over one window. Empty windows give 0 for every
/// moment.
pub fn window_moments(values: &[f64], observed: &[bool], moments: &[Moment]) -> Vec<f64> {
    if values.is_empty() {
        return vec![0.0; moments.len()];
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    moments
        .iter()
        .map(|m| match m {
            Moment::Mean => mean,
            Moment::Std => (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt(),
            Moment::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
            Moment::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Moment::FractionObserved => observed.iter().filter(|o| **o).count() as f64 / n,
        })
        .collect()
}

/// Window-major, then feature-major, then moment-major; statics appended.
pub fn embed_stay(stay: &PreparedStay, n_features: usize, config: &StatConfig) -> Result<Vec<f64>, StatError> {
    if stay.hours == 0 || stay.values.is_empty() {
        return Err(StatError::EmptySeries(stay.stay_id.clone()));
    }
    let mut out = Vec::with_capacity(config.dim(n_features, stay.statics.len()));
    let mut col = Vec::with_capacity(stay.hours);
    let mut obs = Vec::with_capacity(stay.hours);
    for (start, end) in window_bounds(stay.hours, config.n_windows) {
        for j in 0..n_features {
            col.clear();
            obs.clear();
            for t in start..end {
                col.push(stay.values[t * n_features + j]);
                obs.push(stay.observed[t * n_features + j]);
            }
            out.extend(window_moments(&col, &obs, &config.moments));
        }
    }
    if config.include_statics {
        out.extend_from_slice(&stay.statics);
    }
    Ok(out)
}

pub fn embed_stat(cohort: &PreparedCohort, config: &StatConfig) -> Result<EmbeddingMatrix, crate::Error> {
    if config.n_windows == 0 || config.moments.is_empty() {
        return Err(StatError::InvalidConfig("need n_windows >= 1 and at least one moment".into()).into());
    }
    let f = cohort.n_features();
    let rows = cohort
        .stays
        .iter()
        .map(|s| embed_stay(s, f, config))
        .collect::<Result<Vec<_>, _>>()?;
    let ids = cohort.stays.iter().map(|s| s.stay_id.clone()).collect();
    Ok(EmbeddingMatrix::from_rows(ids, rows, Embedder::Stat)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stay(values: Vec<f64>, f: usize, statics: Vec<f64>) -> PreparedStay {
        let hours = values.len() / f;
        PreparedStay {
            stay_id: "s".into(),
            label_code: "A".into(),
            hours,
            observed: vec![true; values.len()],
            values,
            statics,
        }
    }

    #[test]
    fn single_window_moments() {
        let cfg = StatConfig { n_windows: 1, include_statics: false, ..Default::default() };
        let e = embed_stay(&stay(vec![1.0, 2.0, 3.0, 4.0], 1, vec![]), 1, &cfg).unwrap();
        assert_eq!(e[0], 2.5);
        assert!((e[1] - 1.25f64.sqrt()).abs() < 1e-12);
        assert!((e[1] - 1.1180).abs() < 1e-4);
        assert_eq!(&e[2..], &[1.0, 4.0, 1.0]);

        let e = embed_stay(&stay(vec![5.0, 5.0], 1, vec![]), 1, &cfg).unwrap();
        assert_eq!(e, vec![5.0, 0.0, 5.0, 5.0, 1.0]);
    }

    #[test]
    fn dimension_formula() {
        let cfg = StatConfig { n_windows: 2, ..Default::default() };
        assert_eq!(cfg.dim(2, 3), 23);
        let e = embed_stay(&stay(vec![0.0; 10], 2, vec![1.0, 2.0, 3.0]), 2, &cfg).unwrap();
        assert_eq!(e.len(), 23);
        assert_eq!(&e[20..], &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn windows_front_loaded() {
        assert_eq!(window_bounds(10, 4), vec![(0, 3), (3, 6), (6, 8), (8, 10)]);
        assert_eq!(window_bounds(2, 4), vec![(0, 1), (1, 2), (2, 2), (2, 2)]);
    }

    #[test]
    fn short_stays_keep_constant_dimension() {
        let cfg = StatConfig::default();
        let e = embed_stay(&stay(vec![3.0, 4.0], 1, vec![]), 1, &cfg).unwrap();
        assert_eq!(e.len(), cfg.dim(1, 0));
        // windows 3 and 4 are empty
        assert_eq!(&e[10..], &[0.0; 10]);
    }

    #[test]
    fn fraction_observed_uses_pre_imputation_mask() {
        let mut s = stay(vec![1.0, 1.0, 1.0, 1.0], 1, vec![]);
        s.observed = vec![true, false, false, true];
        let cfg = StatConfig { n_windows: 1, moments: vec![Moment::FractionObserved], include_statics: false };
        assert_eq!(embed_stay(&s, 1, &cfg).unwrap(), vec![0.5]);
    }

    #[test]
    fn empty_series_rejected() {
        let s = PreparedStay {
            stay_id: "e".into(),
            label_code: "A".into(),
            hours: 0,
            values: vec![],
            observed: vec![],
            statics: vec![],
        };
        assert_eq!(embed_stay(&s, 1, &StatConfig::default()), Err(StatError::EmptySeries("e".into())));
    }
}
