//! Robust scaling, imputation and static encoding, fitted on training stays.
//!
//! Order is fixed: scale observed cells with the training median/IQR, fill
//! gaps (forward fill, head cells from the training population median in
//! scaled units), then encode statics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Cohort, Split, SplitAssignment, StaticValue};

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("feature `{0}` has no observed value in the training split")]
    NoObservedValues(String),
    #[error("training split is empty")]
    EmptyTrainSplit,
    #[error("feature mismatch: scaler fitted on {expected:?}, cohort has {found:?}")]
    FeatureMismatch { expected: Vec<String>, found: Vec<String> },
}

/// Median and interquartile range of one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub name: String,
    pub median: f64,
    pub iqr: f64,
}

impl ColumnScale {
    pub fn apply(&self, x: f64) -> f64 {
        if self.iqr == 0.0 {
            0.0
        } else {
            (x - self.median) / self.iqr
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub features: Vec<ColumnScale>,
    /// Numeric static columns only, keyed by column name.
    pub statics: BTreeMap<String, ColumnScale>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "categories", rename_all = "lowercase")]
pub enum CategoryEncoding {
    Onehot(Vec<String>),
    Ordinal(Vec<String>),
}

impl CategoryEncoding {
    pub fn width(&self) -> usize {
        match self {
            CategoryEncoding::Onehot(c) => c.len(),
            CategoryEncoding::Ordinal(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EncodingSpec {
    pub columns: BTreeMap<String, CategoryEncoding>,
}

/// Which categorical statics are ordinal, and optionally their order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodingOptions {
    /// Column → explicit category order. Columns listed with an empty order
    /// use the sorted training values.
    pub ordinal: BTreeMap<String, Vec<String>>,
}

/// Linear-interpolation quantile of sorted data (`q` in [0, 1]).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn column_scale(name: &str, mut values: Vec<f64>) -> Result<ColumnScale, PreprocessError> {
    if values.is_empty() {
        return Err(PreprocessError::NoObservedValues(name.to_string()));
    }
    values.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&values, 0.25);
    let q3 = quantile_sorted(&values, 0.75);
    Ok(ColumnScale { name: name.to_string(), median: quantile_sorted(&values, 0.5), iqr: q3 - q1 })
}

fn train_stays<'a>(
    cohort: &'a Cohort,
    split: &'a SplitAssignment,
) -> impl Iterator<Item = &'a crate::cohort::StayRecord> + 'a {
    cohort.stays.iter().filter(move |s| split.get(&s.stay_id) == Some(Split::Train))
}

/// Median/IQR per time-series feature (pooling every observed train cell)
/// and per numeric static column.
pub fn fit_scaler(cohort: &Cohort, split: &SplitAssignment) -> Result<ScalerParams, PreprocessError> {
    if train_stays(cohort, split).next().is_none() {
        return Err(PreprocessError::EmptyTrainSplit);
    }
    let f = cohort.n_features();
    let mut pooled = vec![Vec::new(); f];
    for s in train_stays(cohort, split) {
        for (i, v) in s.cells.iter().enumerate() {
            if let Some(v) = v {
                pooled[i % f].push(*v);
            }
        }
    }
    let features = pooled
        .into_iter()
        .zip(&cohort.feature_names)
        .map(|(vals, name)| column_scale(name, vals))
        .collect::<Result<_, _>>()?;

    let mut statics = BTreeMap::new();
    for (j, name) in cohort.static_names.iter().enumerate() {
        let mut numeric = false;
        let mut vals = Vec::new();
        for s in cohort.stays.iter() {
            if let StaticValue::Number(x) = s.statics[j] {
                numeric = true;
                if split.get(&s.stay_id) == Some(Split::Train) {
                    vals.push(x);
                }
            } else if matches!(s.statics[j], StaticValue::Category(_)) {
                numeric = false;
                break;
            }
        }
        if numeric {
            statics.insert(name.clone(), column_scale(name, vals)?);
        }
    }
    Ok(ScalerParams { features, statics })
}

/// Scales observed cells and numeric statics; masks are untouched.
pub fn transform(cohort: &Cohort, scaler: &ScalerParams) -> Result<Cohort, PreprocessError> {
    let expected: Vec<String> = scaler.features.iter().map(|c| c.name.clone()).collect();
    if expected != cohort.feature_names {
        return Err(PreprocessError::FeatureMismatch { expected, found: cohort.feature_names.clone() });
    }
    let f = cohort.n_features();
    let mut out = cohort.clone();
    for s in &mut out.stays {
        for (i, cell) in s.cells.iter_mut().enumerate() {
            if let Some(v) = cell {
                *v = scaler.features[i % f].apply(*v);
            }
        }
        for (j, v) in s.statics.iter_mut().enumerate() {
            if let (StaticValue::Number(x), Some(scale)) = (&v, scaler.statics.get(&cohort.static_names[j])) {
                *v = StaticValue::Number(scale.apply(*x));
            }
        }
    }
    Ok(out)
}

/// Training-population medians used to fill cells that precede any
/// observation, in the units of the cohort passed in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationMedians {
    pub features: Vec<f64>,
    /// `None` for categorical columns.
    pub statics: Vec<Option<f64>>,
}

pub fn population_medians(
    cohort: &Cohort,
    split: &SplitAssignment,
) -> Result<PopulationMedians, PreprocessError> {
    // same pooling as the scaler fit, on (typically) already-scaled values
    let fitted = fit_scaler(cohort, split)?;
    Ok(PopulationMedians {
        features: fitted.features.iter().map(|c| c.median).collect(),
        statics: cohort.static_names.iter().map(|n| fitted.statics.get(n).map(|c| c.median)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedStay {
    pub stay_id: String,
    pub label_code: String,
    pub hours: usize,
    /// Row-major `hours × features`, fully populated.
    pub values: Vec<f64>,
    /// True where the value came from imputation rather than observation.
    pub was_imputed: Vec<bool>,
    pub statics: Vec<StaticValue>,
}

/// Forward-fills each feature from its last observation; cells before the
/// first observation take the population median. Missing numeric statics
/// take their population median too.
pub fn impute(cohort: &Cohort, medians: &PopulationMedians) -> Vec<ImputedStay> {
    let f = cohort.n_features();
    cohort
        .stays
        .iter()
        .map(|s| {
            let mut values = vec![0.0; s.cells.len()];
            let mut was_imputed = vec![false; s.cells.len()];
            for j in 0..f {
                let mut last = medians.features[j];
                for t in 0..s.hours {
                    let i = t * f + j;
                    match s.cells[i] {
                        Some(v) => {
                            last = v;
                            values[i] = v;
                        }
                        None => {
                            values[i] = last;
                            was_imputed[i] = true;
                        }
                    }
                }
            }
            let statics = s
                .statics
                .iter()
                .zip(&medians.statics)
                .map(|(v, m)| match (v, m) {
                    (StaticValue::Missing, Some(m)) => StaticValue::Number(*m),
                    _ => v.clone(),
                })
                .collect();
            ImputedStay {
                stay_id: s.stay_id.clone(),
                label_code: s.label_code.clone(),
                hours: s.hours,
                values,
                was_imputed,
                statics,
            }
        })
        .collect()
}

/// Category lists are the sorted distinct training values unless an explicit
/// ordinal order is configured.
pub fn fit_encoding(cohort: &Cohort, split: &SplitAssignment, options: &EncodingOptions) -> EncodingSpec {
    let mut columns = BTreeMap::new();
    for (j, name) in cohort.static_names.iter().enumerate() {
        let mut seen = false;
        let mut cats: Vec<String> = Vec::new();
        for s in &cohort.stays {
            if let StaticValue::Category(c) = &s.statics[j] {
                seen = true;
                if split.get(&s.stay_id) == Some(Split::Train) {
                    cats.push(c.clone());
                }
            }
        }
        if !seen && !options.ordinal.contains_key(name) {
            continue;
        }
        cats.sort();
        cats.dedup();
        let enc = match options.ordinal.get(name) {
            Some(order) if !order.is_empty() => CategoryEncoding::Ordinal(order.clone()),
            Some(_) => CategoryEncoding::Ordinal(cats),
            None => CategoryEncoding::Onehot(cats),
        };
        columns.insert(name.clone(), enc);
    }
    EncodingSpec { columns }
}

/// Numeric statics pass through; one-hot columns expand to one slot per
/// category (unseen → all zeros); ordinal columns map to their rank index
/// (unseen → -1).
pub fn encode_statics(values: &[StaticValue], names: &[String], spec: &EncodingSpec) -> Vec<f64> {
    let mut out = Vec::new();
    for (v, name) in values.iter().zip(names) {
        match spec.columns.get(name) {
            Some(CategoryEncoding::Onehot(cats)) => {
                let hit = match v {
                    StaticValue::Category(c) => cats.iter().position(|x| x == c),
                    _ => None,
                };
                out.extend((0..cats.len()).map(|k| if Some(k) == hit { 1.0 } else { 0.0 }));
            }
            Some(CategoryEncoding::Ordinal(cats)) => {
                let rank = match v {
                    StaticValue::Category(c) => cats.iter().position(|x| x == c),
                    _ => None,
                };
                out.push(rank.map_or(-1.0, |r| r as f64));
            }
            None => out.push(match v {
                StaticValue::Number(x) => *x,
                _ => 0.0,
            }),
        }
    }
    out
}

/// Names of the encoded static slots.
pub fn encoded_static_names(names: &[String], spec: &EncodingSpec) -> Vec<String> {
    let mut out = Vec::new();
    for name in names {
        match spec.columns.get(name) {
            Some(CategoryEncoding::Onehot(cats)) => out.extend(cats.iter().map(|c| format!("{name}={c}"))),
            _ => out.push(name.clone()),
        }
    }
    out
}

/// Everything needed to replay preprocessing on new stays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessParams {
    pub scaler: ScalerParams,
    pub medians: PopulationMedians,
    pub encoding: EncodingSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedStay {
    pub stay_id: String,
    pub label_code: String,
    pub hours: usize,
    pub values: Vec<f64>,
    /// Pre-imputation observation mask.
    pub observed: Vec<bool>,
    pub statics: Vec<f64>,
}

impl PreparedStay {
    pub fn row(&self, hour: usize, n_features: usize) -> &[f64] {
        &self.values[hour * n_features..(hour + 1) * n_features]
    }
}

/// Scaled, imputed, encoded cohort; the input of every embedder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedCohort {
    pub feature_names: Vec<String>,
    pub static_names: Vec<String>,
    pub stays: Vec<PreparedStay>,
}

impl PreparedCohort {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_statics(&self) -> usize {
        self.static_names.len()
    }
}

pub fn fit(
    cohort: &Cohort,
    split: &SplitAssignment,
    options: &EncodingOptions,
) -> Result<PreprocessParams, PreprocessError> {
    let scaler = fit_scaler(cohort, split)?;
    let scaled = transform(cohort, &scaler)?;
    let medians = population_medians(&scaled, split)?;
    let encoding = fit_encoding(cohort, split, options);
    Ok(PreprocessParams { scaler, medians, encoding })
}

pub fn apply(cohort: &Cohort, params: &PreprocessParams) -> Result<PreparedCohort, PreprocessError> {
    let scaled = transform(cohort, &params.scaler)?;
    let imputed = impute(&scaled, &params.medians);
    let stays = imputed
        .into_iter()
        .map(|s| PreparedStay {
            statics: encode_statics(&s.statics, &cohort.static_names, &params.encoding),
            observed: s.was_imputed.iter().map(|m| !m).collect(),
            stay_id: s.stay_id,
            label_code: s.label_code,
            hours: s.hours,
            values: s.values,
        })
        .collect();
    Ok(PreparedCohort {
        feature_names: cohort.feature_names.clone(),
        static_names: encoded_static_names(&cohort.static_names, &params.encoding),
        stays,
    })
}

/// Fit on the train split, then apply to every stay.
pub fn prepare(
    cohort: &Cohort,
    split: &SplitAssignment,
    options: &EncodingOptions,
) -> Result<(PreparedCohort, PreprocessParams), PreprocessError> {
    let params = fit(cohort, split, options)?;
    Ok((apply(cohort, &params)?, params))
}
