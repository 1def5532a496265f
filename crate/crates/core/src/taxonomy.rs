//! Four-level rooted code tree.
//!
//! Every code sits at a level in `1..=4`. Level-1 codes hang off the reserved
//! `ROOT` sentinel; every other code has exactly one parent one level up. The
//! vertex set is the union of the four level sets and each non-level-1 code
//! contributes one edge to its parent.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use thiserror::Error;

pub const ROOT: &str = "ROOT";
pub const MAX_LEVEL: u8 = 4;

#[derive(Debug, Error, PartialEq)]
pub enum TaxonomyError {
    #[error("taxonomy line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate code `{0}`")]
    DuplicateCode(String),
    #[error("code `{code}` references missing parent `{parent}`")]
    OrphanCode { code: String, parent: String },
    #[error("code `{code}` at level {level} has parent `{parent}` at level {parent_level}")]
    LevelSkip { code: String, level: u8, parent: String, parent_level: u8 },
    #[error("cycle through code `{0}`")]
    CycleDetected(String),
    #[error("`ROOT` is reserved and cannot be used as a code")]
    ReservedCode,
    #[error("unknown code `{0}`")]
    UnknownCode(String),
    #[error("target level {target} is above the level {level} of code `{code}`")]
    LevelAboveCode { code: String, level: u8, target: u8 },
    #[error("level {0} is outside 1..=4")]
    InvalidLevel(u8),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaxonomyNode {
    pub code: String,
    pub level: u8,
    /// `None` for level-1 codes (parent is `ROOT`).
    pub parent: Option<String>,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaxonomyTree {
    nodes: BTreeMap<String, TaxonomyNode>,
    children: BTreeMap<String, Vec<String>>,
    /// Codes in file order, for stable serialization.
    order: Vec<String>,
}

impl TaxonomyTree {
    /// Builds and validates a tree. Checks run in the order duplicates,
    /// orphans, cycles, levels, so the first structural defect is reported.
    pub fn from_nodes(nodes: Vec<TaxonomyNode>) -> Result<Self, TaxonomyError> {
        let mut map = BTreeMap::new();
        let mut order = Vec::with_capacity(nodes.len());
        for node in nodes {
            if node.code == ROOT {
                return Err(TaxonomyError::ReservedCode);
            }
            if !(1..=MAX_LEVEL).contains(&node.level) {
                return Err(TaxonomyError::InvalidLevel(node.level));
            }
            if map.contains_key(&node.code) {
                return Err(TaxonomyError::DuplicateCode(node.code));
            }
            order.push(node.code.clone());
            map.insert(node.code.clone(), node);
        }

        for node in map.values() {
            if let Some(parent) = &node.parent {
                if !map.contains_key(parent) {
                    return Err(TaxonomyError::OrphanCode {
                        code: node.code.clone(),
                        parent: parent.clone(),
                    });
                }
            }
        }

        for start in map.keys() {
            let mut seen = HashSet::new();
            let mut cur = start;
            while let Some(parent) = map[cur].parent.as_ref() {
                if !seen.insert(cur) {
                    return Err(TaxonomyError::CycleDetected(start.clone()));
                }
                cur = parent;
            }
        }

        for node in map.values() {
            let parent_level = node.parent.as_ref().map_or(0, |p| map[p].level);
            if parent_level + 1 != node.level {
                return Err(TaxonomyError::LevelSkip {
                    code: node.code.clone(),
                    level: node.level,
                    parent: node.parent.clone().unwrap_or_else(|| ROOT.to_string()),
                    parent_level,
                });
            }
        }

        let mut children: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for code in &order {
            if let Some(parent) = &map[code].parent {
                children.entry(parent.clone()).or_default().push(code.clone());
            }
        }
        Ok(Self { nodes: map, children, order })
    }

    /// Parses `code\tparent\tlevel\tname` with a header row. Lines starting
    /// with `#` are provenance comments and are skipped.
    pub fn from_tsv(text: &str) -> Result<Self, TaxonomyError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
        match lines.next() {
            Some((_, header)) if header.trim_end_matches('\r') == "code\tparent\tlevel\tname" => {}
            Some((i, _)) => {
                return Err(TaxonomyError::Malformed {
                    line: i + 1,
                    reason: "expected header `code\\tparent\\tlevel\\tname`".into(),
                })
            }
            None => {
                return Err(TaxonomyError::Malformed { line: 0, reason: "empty taxonomy".into() })
            }
        }
        let mut nodes = Vec::new();
        for (i, line) in lines {
            let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
            if fields.len() != 4 {
                return Err(TaxonomyError::Malformed {
                    line: i + 1,
                    reason: format!("expected 4 tab-separated fields, found {}", fields.len()),
                });
            }
            let level: u8 = fields[2].parse().map_err(|_| TaxonomyError::Malformed {
                line: i + 1,
                reason: format!("bad level `{}`", fields[2]),
            })?;
            let parent = (fields[1] != ROOT).then(|| fields[1].to_string());
            nodes.push(TaxonomyNode {
                code: fields[0].to_string(),
                level,
                parent,
                name: fields[3].to_string(),
            });
        }
        Self::from_nodes(nodes)
    }

    pub fn load(path: &Path) -> Result<Self, TaxonomyError> {
        let text = std::fs::read_to_string(path).map_err(|e| TaxonomyError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_tsv(&text)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("code\tparent\tlevel\tname\n");
        for code in &self.order {
            let n = &self.nodes[code];
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                n.code,
                n.parent.as_deref().unwrap_or(ROOT),
                n.level,
                n.name
            ));
        }
        out
    }

    pub fn node(&self, code: &str) -> Option<&TaxonomyNode> {
        self.nodes.get(code)
    }

    pub fn contains(&self, code: &str) -> bool {
        self.nodes.contains_key(code)
    }

    pub fn level_of(&self, code: &str) -> Result<u8, TaxonomyError> {
        self.nodes
            .get(code)
            .map(|n| n.level)
            .ok_or_else(|| TaxonomyError::UnknownCode(code.to_string()))
    }

    pub fn parent(&self, code: &str) -> Option<&str> {
        self.nodes.get(code).and_then(|n| n.parent.as_deref())
    }

    /// Direct children in file order.
    pub fn children(&self, code: &str) -> &[String] {
        self.children.get(code).map_or(&[], Vec::as_slice)
    }

    /// Walks the parent map up to `target_level`; identity at the code's own level.
    pub fn ancestor_at_level<'a>(&'a self, code: &str, target_level: u8) -> Result<&'a str, TaxonomyError> {
        let node = self
            .nodes
            .get(code)
            .ok_or_else(|| TaxonomyError::UnknownCode(code.to_string()))?;
        if target_level == 0 || target_level > node.level {
            return Err(TaxonomyError::LevelAboveCode {
                code: code.to_string(),
                level: node.level,
                target: target_level,
            });
        }
        let mut cur = node;
        while cur.level > target_level {
            // validated on construction: non-level-1 nodes always have a parent
            cur = &self.nodes[cur.parent.as_ref().expect("validated parent")];
        }
        Ok(&cur.code)
    }

    /// Sorted code set at level `level`.
    pub fn codes_at_level(&self, level: u8) -> BTreeSet<&str> {
        self.nodes
            .values()
            .filter(|n| n.level == level)
            .map(|n| n.code.as_str())
            .collect()
    }

    pub fn vertex_count(&self) -> usize {
        self.nodes.len()
    }

    /// Parent→child pairs.
    pub fn edges(&self) -> Vec<(&str, &str)> {
        self.order
            .iter()
            .filter_map(|c| self.nodes[c].parent.as_deref().map(|p| (p, c.as_str())))
            .collect()
    }

    pub fn depth(&self) -> u8 {
        self.nodes.values().map(|n| n.level).max().unwrap_or(0)
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }
}
