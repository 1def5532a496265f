//! Fixed-size stay embeddings and their CSV form.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("embeddings.csv line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("embedding row {row} has width {found}, expected {expected}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("non-finite embedding value in row {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Embedder {
    Stat,
    Gru,
    Lstm,
}

impl Embedder {
    pub fn as_str(self) -> &'static str {
        match self {
            Embedder::Stat => "stat",
            Embedder::Gru => "gru",
            Embedder::Lstm => "lstm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "stat" => Some(Embedder::Stat),
            "gru" => Some(Embedder::Gru),
            "lstm" => Some(Embedder::Lstm),
            _ => None,
        }
    }
}

impl fmt::Display for Embedder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `N × d` row-major matrix of stay embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    pub stay_ids: Vec<String>,
    pub dim: usize,
    pub data: Vec<f64>,
    pub provenance: Embedder,
}

impl EmbeddingMatrix {
    pub fn from_rows(
        stay_ids: Vec<String>,
        rows: Vec<Vec<f64>>,
        provenance: Embedder,
    ) -> Result<Self, EmbeddingError> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.into_iter().enumerate() {
            if r.len() != dim {
                return Err(EmbeddingError::Ragged { row: i, expected: dim, found: r.len() });
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(EmbeddingError::NonFinite(i));
            }
            data.extend(r);
        }
        Ok(Self { stay_ids, dim, data, provenance })
    }

    pub fn len(&self) -> usize {
        self.stay_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stay_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim.max(1)).take(self.len())
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> EmbeddingMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        EmbeddingMatrix {
            stay_ids: indices.iter().map(|&i| self.stay_ids[i].clone()).collect(),
            dim: self.dim,
            data,
            provenance: self.provenance,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("stay_id");
        for j in 0..self.dim {
            out.push_str(&format!(",dim_{j}"));
        }
        out.push('\n');
        for (i, id) in self.stay_ids.iter().enumerate() {
            out.push_str(id);
            for v in self.row(i) {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, provenance: Embedder) -> Result<Self, EmbeddingError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#'));
        let (_, header) = lines
            .next()
            .ok_or(EmbeddingError::Malformed { line: 0, reason: "empty file".into() })?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"stay_id") {
            return Err(EmbeddingError::Malformed { line: 1, reason: "first column must be stay_id".into() });
        }
        let dim = cols.len() - 1;
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for (i, line) in lines {
            let mut fields = line.split(',');
            ids.push(fields.next().unwrap_or_default().to_string());
            let row = fields
                .map(|f| f.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| EmbeddingError::Malformed { line: i + 1, reason: e.to_string() })?;
            if row.len() != dim {
                return Err(EmbeddingError::Malformed {
                    line: i + 1,
                    reason: format!("expected {dim} values, found {}", row.len()),
                });
            }
            rows.push(row);
        }
        let mut m = Self::from_rows(ids, rows, provenance)?;
        m.dim = dim;
        Ok(m)
    }
}
