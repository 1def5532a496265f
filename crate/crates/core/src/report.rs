//! Task records and their aggregation into a report and a plot-ready table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("no completed evaluations to report")]
    NoResults,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetrics {
    pub v_measure: Option<f64>,
    pub homogeneity: Option<f64>,
    pub completeness: Option<f64>,
    pub ami: Option<f64>,
    pub accuracy_top1: Option<f64>,
    pub silhouette: Option<f64>,
}

impl ReportMetrics {
    pub fn entries(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("v_measure", self.v_measure),
            ("homogeneity", self.homogeneity),
            ("completeness", self.completeness),
            ("ami", self.ami),
            ("accuracy_top1", self.accuracy_top1),
            ("silhouette", self.silhouette),
        ]
    }
}

impl From<crate::metrics::ClusterMetrics> for ReportMetrics {
    fn from(m: crate::metrics::ClusterMetrics) -> Self {
        Self {
            v_measure: Some(m.v_measure),
            homogeneity: Some(m.homogeneity),
            completeness: Some(m.completeness),
            ami: Some(m.ami),
            accuracy_top1: m.accuracy_top1,
            silhouette: m.silhouette,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    /// `flat`, `rediscover`, `assign` or `hpo`.
    pub task: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub level: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub transition: Option<String>,
    pub embedder: String,
    pub strategy: Option<String>,
    pub k: Option<usize>,
    pub used_tsne: bool,
    pub metrics: ReportMetrics,
    pub n_evaluated_clusters: Option<usize>,
    pub n_skipped_clusters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hpo: Option<String>,
}

impl TaskRecord {
    /// `L<i>` for level tasks, the transition name otherwise.
    pub fn level_key(&self) -> String {
        match (&self.level, &self.transition) {
            (Some(l), _) => format!("L{l}"),
            (None, Some(t)) => t.clone(),
            (None, None) => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub provenance: serde_json::Value,
    pub records: Vec<TaskRecord>,
}

/// Sorts records by (task, level, embedder); strategy breaks remaining ties.
pub fn aggregate(mut records: Vec<TaskRecord>, provenance: serde_json::Value) -> Result<Report, ReportError> {
    if records.is_empty() {
        return Err(ReportError::NoResults);
    }
    records.sort_by(|a, b| {
        (&a.task, a.level_key(), &a.embedder, &a.strategy).cmp(&(&b.task, b.level_key(), &b.embedder, &b.strategy))
    });
    Ok(Report { provenance, records })
}

/// `task,level,embedder,strategy,metric,value`, one row per present metric.
pub fn plot_csv(report: &Report) -> String {
    let mut out = String::from("task,level,embedder,strategy,metric,value\n");
    for r in &report.records {
        for (name, value) in r.metrics.entries() {
            if let Some(v) = value {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.task,
                    r.level_key(),
                    r.embedder,
                    r.strategy.as_deref().unwrap_or(""),
                    name,
                    v
                );
            }
        }
    }
    out
}

/// Fixed-width text summary, one line per record.
pub fn summary_table(report: &Report) -> String {
    let mut out = format!(
        "{:<11} {:<8} {:<5} {:<9} {:>4} {:>8} {:>8} {:>8}\n",
        "task", "level", "emb", "strategy", "k", "v", "ami", "acc"
    );
    let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    for r in &report.records {
        let _ = writeln!(
            out,
            "{:<11} {:<8} {:<5} {:<9} {:>4} {:>8} {:>8} {:>8}",
            r.task,
            r.level_key(),
            r.embedder,
            r.strategy.as_deref().unwrap_or("-"),
            r.k.map_or("-".to_string(), |k| k.to_string()),
            f(r.metrics.v_measure),
            f(r.metrics.ami),
            f(r.metrics.accuracy_top1),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(task: &str, level: u8, embedder: &str) -> TaskRecord {
        TaskRecord {
            task: task.into(),
            level: Some(level),
            transition: None,
            embedder: embedder.into(),
            strategy: None,
            k: Some(3),
            used_tsne: false,
            metrics: ReportMetrics { v_measure: Some(0.5), ami: Some(0.4), ..Default::default() },
            n_evaluated_clusters: None,
            n_skipped_clusters: None,
            hpo: None,
        }
    }

    #[test]
    fn single_flat_record() {
        let r = aggregate(vec![record("flat", 1, "stat")], serde_json::Value::Null).unwrap();
        assert_eq!(r.records.len(), 1);
        let csv = plot_csv(&r);
        assert_eq!(
            csv,
            "task,level,embedder,strategy,metric,value\nflat,L1,stat,,v_measure,0.5\nflat,L1,stat,,ami,0.4\n"
        );
    }

    #[test]
    fn ordering() {
        let r = aggregate(
            vec![record("flat", 2, "stat"), record("assign", 1, "gru"), record("flat", 1, "stat"), record("flat", 1, "gru")],
            serde_json::Value::Null,
        )
        .unwrap();
        let keys: Vec<_> = r.records.iter().map(|r| (r.task.as_str(), r.level_key(), r.embedder.as_str())).collect();
        assert_eq!(
            keys,
            vec![
                ("assign", "L1".to_string(), "gru"),
                ("flat", "L1".to_string(), "gru"),
                ("flat", "L1".to_string(), "stat"),
                ("flat", "L2".to_string(), "stat")
            ]
        );
    }

    #[test]
    fn empty_is_an_error() {
        assert_eq!(aggregate(vec![], serde_json::Value::Null), Err(ReportError::NoResults));
    }
}
