//! ICU stay data model, long-format CSV ingestion and stay-level splitting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{keyed_hash, unit_interval};
use crate::taxonomy::TaxonomyTree;

#[derive(Debug, Error, PartialEq)]
pub enum CohortError {
    #[error("{file} line {line}: {reason}")]
    MalformedRow { file: String, line: u64, reason: String },
    #[error("{file} line {line}: unknown feature `{feature}`")]
    UnknownFeature { file: String, line: u64, feature: String },
    #[error("stay `{0}` has no row in labels.csv")]
    MissingLabel(String),
    #[error("stay `{0}` has no row in static.csv")]
    MissingStatic(String),
    #[error("stay `{stay}` hour {hour} feature `{feature}` appears more than once")]
    DuplicateCell { stay: String, hour: u64, feature: String },
    #[error("{file}: stay `{stay}` appears more than once")]
    DuplicateStay { file: String, stay: String },
    #[error("{file}: stay `{stay}` has no time-series rows")]
    OrphanRow { file: String, stay: String },
    #[error("stay `{stay}` has negative timestamp {minute}")]
    NegativeTimestamp { stay: String, minute: f64 },
    #[error("stay `{stay}` carries label `{code}` which is not a level-4 taxonomy code")]
    UnknownLabel { stay: String, code: String },
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("split ratios must be positive-or-zero and sum to 1, got {0:?}")]
    InvalidRatios([f64; 3]),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

/// A static covariate as read from static.csv.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StaticValue {
    Missing,
    Number(f64),
    Category(String),
}

impl fmt::Display for StaticValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StaticValue::Missing => Ok(()),
            StaticValue::Number(x) => write!(f, "{x}"),
            StaticValue::Category(s) => f.write_str(s),
        }
    }
}

/// One ICU stay: a dense `hours × features` grid where `None` marks an
/// unobserved cell.
#[derive(Debug, Clone, PartialEq)]
pub struct StayRecord {
    pub stay_id: String,
    pub hours: usize,
    /// Row-major, `hours * n_features` cells.
    pub cells: Vec<Option<f64>>,
    pub statics: Vec<StaticValue>,
    pub label_code: String,
}

impl StayRecord {
    pub fn n_features(&self) -> usize {
        self.cells.len() / self.hours.max(1)
    }

    pub fn cell(&self, hour: usize, feature: usize) -> Option<f64> {
        self.cells[hour * self.n_features() + feature]
    }

    pub fn mask(&self) -> Vec<bool> {
        self.cells.iter().map(Option::is_some).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub stays: Vec<StayRecord>,
    pub feature_names: Vec<String>,
    pub static_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    /// Allowed time-series features in column order. Inferred (sorted) from
    /// the file when absent.
    pub features: Option<Vec<String>>,
    /// Static columns read as categories rather than numbers.
    pub categorical_statics: Vec<String>,
    /// Hours at or beyond this index are dropped.
    pub max_hours: usize,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self { features: None, categorical_statics: Vec::new(), max_hours: 72 }
    }
}

/// One row of timeseries.csv after hourly aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlyObservation {
    pub stay_id: String,
    pub hour: u64,
    pub feature: String,
    pub value: Option<f64>,
}

/// One row of a minute-resolution export (`stay_id,minute,feature,value`).
#[derive(Debug, Clone, PartialEq)]
pub struct RawObservation {
    pub stay_id: String,
    pub minute: f64,
    pub feature: String,
    pub value: Option<f64>,
}

/// Collapses sub-hour rows to one value per (stay, hour, feature): the mean of
/// the present values in that hour, or missing if none were present.
///
/// Output is ordered by stay first appearance, then hour, then feature first
/// appearance.
pub fn resample_to_hours(raw: &[RawObservation]) -> Result<Vec<HourlyObservation>, CohortError> {
    let mut stay_order: HashMap<&str, usize> = HashMap::new();
    let mut feature_order: HashMap<&str, usize> = HashMap::new();
    // key: (stay rank, hour, feature rank) -> (sum, count)
    let mut buckets: BTreeMap<(usize, u64, usize), (f64, usize)> = BTreeMap::new();
    for row in raw {
        if row.minute < 0.0 || !row.minute.is_finite() {
            return Err(CohortError::NegativeTimestamp { stay: row.stay_id.clone(), minute: row.minute });
        }
        let n = stay_order.len();
        let s = *stay_order.entry(&row.stay_id).or_insert(n);
        let n = feature_order.len();
        let f = *feature_order.entry(&row.feature).or_insert(n);
        let hour = (row.minute / 60.0).floor() as u64;
        let slot = buckets.entry((s, hour, f)).or_insert((0.0, 0));
        if let Some(v) = row.value {
            slot.0 += v;
            slot.1 += 1;
        }
    }
    let mut stays = vec![""; stay_order.len()];
    for (k, v) in stay_order {
        stays[v] = k;
    }
    let mut features = vec![""; feature_order.len()];
    for (k, v) in feature_order {
        features[v] = k;
    }
    Ok(buckets
        .into_iter()
        .map(|((s, hour, f), (sum, count))| HourlyObservation {
            stay_id: stays[s].to_string(),
            hour,
            feature: features[f].to_string(),
            value: (count > 0).then(|| sum / count as f64),
        })
        .collect())
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::None)
        .from_reader(text.as_bytes())
}

fn malformed(file: &str, line: u64, reason: impl Into<String>) -> CohortError {
    CohortError::MalformedRow { file: file.to_string(), line, reason: reason.into() }
}

fn parse_value(file: &str, line: u64, field: &str) -> Result<Option<f64>, CohortError> {
    if field.is_empty() {
        return Ok(None);
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(malformed(file, line, format!("bad value `{field}`"))),
    }
}

fn read_file(path: &Path) -> Result<String, CohortError> {
    std::fs::read_to_string(path)
        .map_err(|e| CohortError::Io { path: path.display().to_string(), message: e.to_string() })
}

/// Parses the body of timeseries.csv. Accepts either an hourly header
/// (`stay_id,hour,feature,value`) or a minute header
/// (`stay_id,minute,feature,value`), the latter being resampled to hours.
pub fn parse_timeseries(text: &str) -> Result<Vec<HourlyObservation>, CohortError> {
    const FILE: &str = "timeseries.csv";
    let mut rdr = reader(text);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| malformed(FILE, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let minutes = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["stay_id", "hour", "feature", "value"] => false,
        ["stay_id", "minute", "feature", "value"] => true,
        _ => return Err(malformed(FILE, 1, "expected header `stay_id,hour,feature,value`")),
    };
    let mut hourly = Vec::new();
    let mut raw = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(FILE, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 4 {
            return Err(malformed(FILE, line, format!("expected 4 fields, found {}", rec.len())));
        }
        let value = parse_value(FILE, line, &rec[3])?;
        if minutes {
            let minute: f64 = rec[1]
                .parse()
                .map_err(|_| malformed(FILE, line, format!("bad minute `{}`", &rec[1])))?;
            raw.push(RawObservation {
                stay_id: rec[0].to_string(),
                minute,
                feature: rec[2].to_string(),
                value,
            });
        } else {
            let hour: u64 = rec[1]
                .parse()
                .map_err(|_| malformed(FILE, line, format!("bad hour `{}`", &rec[1])))?;
            hourly.push(HourlyObservation {
                stay_id: rec[0].to_string(),
                hour,
                feature: rec[2].to_string(),
                value,
            });
        }
    }
    if minutes {
        resample_to_hours(&raw)
    } else {
        Ok(hourly)
    }
}

impl Cohort {
    /// Reads the three cohort CSVs and assembles dense per-stay grids.
    pub fn ingest(
        timeseries_path: &Path,
        static_path: &Path,
        labels_path: &Path,
        config: &CohortConfig,
    ) -> Result<Self, CohortError> {
        Self::from_csv_text(
            &read_file(timeseries_path)?,
            &read_file(static_path)?,
            &read_file(labels_path)?,
            config,
        )
    }

    pub fn from_csv_text(
        timeseries: &str,
        statics: &str,
        labels: &str,
        config: &CohortConfig,
    ) -> Result<Self, CohortError> {
        let rows = parse_timeseries(timeseries)?;
        Self::from_hourly(&rows, statics, labels, config)
    }

    pub fn from_hourly(
        rows: &[HourlyObservation],
        statics: &str,
        labels: &str,
        config: &CohortConfig,
    ) -> Result<Self, CohortError> {
        let feature_names = match &config.features {
            Some(f) => f.clone(),
            None => {
                let mut names: Vec<String> = rows.iter().map(|r| r.feature.clone()).collect();
                names.sort();
                names.dedup();
                names
            }
        };
        let feature_index: HashMap<&str, usize> =
            feature_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();

        let mut stay_order: Vec<String> = Vec::new();
        let mut per_stay: HashMap<String, BTreeMap<(u64, usize), Option<f64>>> = HashMap::new();
        for (i, row) in rows.iter().enumerate() {
            let Some(&f) = feature_index.get(row.feature.as_str()) else {
                return Err(CohortError::UnknownFeature {
                    file: "timeseries.csv".into(),
                    line: i as u64 + 2,
                    feature: row.feature.clone(),
                });
            };
            let cells = per_stay.entry(row.stay_id.clone()).or_insert_with(|| {
                stay_order.push(row.stay_id.clone());
                BTreeMap::new()
            });
            if cells.insert((row.hour, f), row.value).is_some() {
                return Err(CohortError::DuplicateCell {
                    stay: row.stay_id.clone(),
                    hour: row.hour,
                    feature: row.feature.clone(),
                });
            }
        }

        let (static_names, static_rows) = parse_statics(statics, config)?;
        let label_rows = parse_labels(labels)?;
        let known: HashSet<&str> = stay_order.iter().map(String::as_str).collect();
        for stay in static_rows.keys() {
            if !known.contains(stay.as_str()) {
                return Err(CohortError::OrphanRow { file: "static.csv".into(), stay: stay.clone() });
            }
        }
        for stay in label_rows.keys() {
            if !known.contains(stay.as_str()) {
                return Err(CohortError::OrphanRow { file: "labels.csv".into(), stay: stay.clone() });
            }
        }

        let n_features = feature_names.len();
        let mut stays = Vec::with_capacity(stay_order.len());
        for stay_id in stay_order {
            let cells_map = &per_stay[&stay_id];
            let max_hour = cells_map.keys().map(|(h, _)| *h).max().unwrap_or(0) as usize;
            let hours = (max_hour + 1).min(config.max_hours.max(1));
            let mut cells = vec![None; hours * n_features];
            for (&(h, f), &v) in cells_map {
                if (h as usize) < hours {
                    cells[h as usize * n_features + f] = v;
                }
            }
            let statics = static_rows
                .get(&stay_id)
                .cloned()
                .ok_or_else(|| CohortError::MissingStatic(stay_id.clone()))?;
            let label_code = label_rows
                .get(&stay_id)
                .cloned()
                .ok_or_else(|| CohortError::MissingLabel(stay_id.clone()))?;
            stays.push(StayRecord { stay_id, hours, cells, statics, label_code });
        }
        Ok(Cohort { stays, feature_names, static_names })
    }

    pub fn len(&self) -> usize {
        self.stays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stays.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Checks that every stay label is a level-4 code of `taxonomy`.
    pub fn validate_labels(&self, taxonomy: &TaxonomyTree) -> Result<(), CohortError> {
        for s in &self.stays {
            if taxonomy.level_of(&s.label_code).ok() != Some(4) {
                return Err(CohortError::UnknownLabel { stay: s.stay_id.clone(), code: s.label_code.clone() });
            }
        }
        Ok(())
    }

    /// Serializes to (timeseries.csv, static.csv, labels.csv) bodies.
    ///
    /// Only observed cells are written, plus one empty-valued row at the last
    /// hour when that hour has no observation, so that `T` survives a
    /// round trip through [`Cohort::from_csv_text`].
    pub fn to_csv_text(&self) -> (String, String, String) {
        let mut ts = String::from("stay_id,hour,feature,value\n");
        let mut st = String::from("stay_id");
        for n in &self.static_names {
            st.push(',');
            st.push_str(n);
        }
        st.push('\n');
        let mut lb = String::from("stay_id,code\n");
        let f = self.n_features();
        for s in &self.stays {
            for h in 0..s.hours {
                let row = &s.cells[h * f..(h + 1) * f];
                let mut any = false;
                for (j, v) in row.iter().enumerate() {
                    if let Some(v) = v {
                        any = true;
                        ts.push_str(&format!("{},{},{},{}\n", s.stay_id, h, self.feature_names[j], v));
                    }
                }
                if !any && h + 1 == s.hours && f > 0 {
                    ts.push_str(&format!("{},{},{},\n", s.stay_id, h, self.feature_names[0]));
                }
            }
            st.push_str(&s.stay_id);
            for v in &s.statics {
                st.push(',');
                st.push_str(&v.to_string());
            }
            st.push('\n');
            lb.push_str(&format!("{},{}\n", s.stay_id, s.label_code));
        }
        (ts, st, lb)
    }

    /// Keeps only stays whose leaf label is in `codes`.
    pub fn retain_codes(&self, codes: &[String]) -> Cohort {
        let keep: HashSet<&str> = codes.iter().map(String::as_str).collect();
        Cohort {
            stays: self.stays.iter().filter(|s| keep.contains(s.label_code.as_str())).cloned().collect(),
            feature_names: self.feature_names.clone(),
            static_names: self.static_names.clone(),
        }
    }
}

fn parse_statics(
    text: &str,
    config: &CohortConfig,
) -> Result<(Vec<String>, HashMap<String, Vec<StaticValue>>), CohortError> {
    const FILE: &str = "static.csv";
    let mut rdr = reader(text);
    let header = rdr.headers().map_err(|e| malformed(FILE, 1, e.to_string()))?.clone();
    if header.get(0) != Some("stay_id") {
        return Err(malformed(FILE, 1, "first column must be `stay_id`"));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let categorical: Vec<bool> = names.iter().map(|n| config.categorical_statics.contains(n)).collect();
    let mut rows = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| malformed(FILE, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != names.len() + 1 {
            return Err(malformed(FILE, line, format!("expected {} fields, found {}", names.len() + 1, rec.len())));
        }
        let mut values = Vec::with_capacity(names.len());
        for (j, field) in rec.iter().skip(1).enumerate() {
            values.push(if field.is_empty() {
                StaticValue::Missing
            } else if categorical[j] {
                StaticValue::Category(field.to_string())
            } else {
                StaticValue::Number(parse_value(FILE, line, field)?.expect("non-empty"))
            });
        }
        let stay = rec[0].to_string();
        if rows.insert(stay.clone(), values).is_some() {
            return Err(CohortError::DuplicateStay { file: FILE.into(), stay });
        }
    }
    Ok((names, rows))
}

fn parse_labels(text: &str) -> Result<HashMap<String, String>, CohortError> {
    const FILE: &str = "labels.csv";
    let mut rdr = reader(text);
    let header = rdr.headers().map_err(|e| malformed(FILE, 1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["stay_id", "code"] {
        return Err(malformed(FILE, 1, "expected header `stay_id,code`"));
    }
    let mut rows = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| malformed(FILE, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 || rec[1].is_empty() {
            return Err(malformed(FILE, line, "expected `stay_id,code`"));
        }
        if rows.insert(rec[0].to_string(), rec[1].to_string()).is_some() {
            return Err(CohortError::DuplicateStay { file: FILE.into(), stay: rec[0].to_string() });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Stay → split, kept in cohort order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    entries: Vec<(String, Split)>,
    index: HashMap<String, usize>,
}

impl SplitAssignment {
    pub fn from_entries(entries: Vec<(String, Split)>) -> Self {
        let index = entries.iter().enumerate().map(|(i, (s, _))| (s.clone(), i)).collect();
        Self { entries, index }
    }

    pub fn get(&self, stay_id: &str) -> Option<Split> {
        self.index.get(stay_id).map(|&i| self.entries[i].1)
    }

    pub fn entries(&self) -> &[(String, Split)] {
        &self.entries
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|(_, s)| *s == split).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("stay_id,split\n");
        for (id, s) in &self.entries {
            out.push_str(&format!("{id},{}\n", s.as_str()));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, CohortError> {
        const FILE: &str = "split.csv";
        let mut rdr = reader(text);
        let mut entries = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| malformed(FILE, 0, e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line());
            let split = rec
                .get(1)
                .and_then(Split::parse)
                .ok_or_else(|| malformed(FILE, line, "expected `stay_id,train|val|test`"))?;
            entries.push((rec[0].to_string(), split));
        }
        Ok(Self::from_entries(entries))
    }
}

/// Assigns each stay to train/val/test by hashing its id with `seed` onto
/// [0, 1) and comparing against the cumulative ratios. The assignment of a
/// stay depends only on its id and the seed.
pub fn split(cohort: &Cohort, ratios: [f64; 3], seed: u64) -> Result<SplitAssignment, CohortError> {
    if cohort.is_empty() {
        return Err(CohortError::EmptyCohort);
    }
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CohortError::InvalidRatios(ratios));
    }
    let entries = cohort
        .stays
        .iter()
        .map(|s| (s.stay_id.clone(), split_of(&s.stay_id, ratios, seed)))
        .collect();
    Ok(SplitAssignment::from_entries(entries))
}

fn split_of(stay_id: &str, ratios: [f64; 3], seed: u64) -> Split {
    let u = unit_interval(keyed_hash(seed, stay_id));
    if u < ratios[0] {
        Split::Train
    } else if u < ratios[0] + ratios[1] {
        Split::Val
    } else {
        Split::Test
    }
}

/// The `n` most frequent leaf codes by stay count, ties broken
/// lexicographically.
pub fn select_top_codes(cohort: &Cohort, n: usize) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &cohort.stays {
        *counts.entry(&s.label_code).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.into_iter().take(n).map(|(c, _)| c.to_string()).collect()
}
