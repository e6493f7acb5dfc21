//! `tmnlab/1` line-delimited pair files.
//!
//! One JSON object per line:
//!
//! ```text
//! {"schema":"tmnlab/1","pair_id":"p0","label":1,
//!  "tree_a":{"n":2,"node_features":[[..],[..]],"edges":[[0,1]],
//!            "edge_features":[[..]],"root":0,"text":"optional"},
//!  "tree_b":{...}}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tree::{DepTree, Label, Matrix, TreePair};
use super::validate::{validate_tree, Strictness};
use super::DataError;

pub const SCHEMA: &str = "tmnlab/1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeRecord {
    n: usize,
    node_features: Vec<Vec<f64>>,
    edges: Vec<[usize; 2]>,
    edge_features: Vec<Vec<f64>>,
    root: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairRecord {
    schema: String,
    pair_id: String,
    label: Label,
    tree_a: TreeRecord,
    tree_b: TreeRecord,
}

impl TreeRecord {
    fn from_tree(t: &DepTree) -> Self {
        Self {
            n: t.num_nodes(),
            node_features: t.node_features.to_rows(),
            edges: t.edges.iter().map(|&(h, d)| [h, d]).collect(),
            edge_features: t.edge_features.to_rows(),
            root: t.root,
            text: t.text.clone(),
        }
    }

    fn into_tree(self, line: usize) -> Result<DepTree, DataError> {
        let parse = |message: String| DataError::Parse { line, message };
        let node_features = Matrix::from_rows(&self.node_features)
            .map_err(|e| parse(format!("node_features: {e}")))?;
        if node_features.rows() != self.n {
            return Err(parse(format!(
                "n = {} but {} node feature rows",
                self.n,
                node_features.rows()
            )));
        }
        let edge_features = Matrix::from_rows(&self.edge_features)
            .map_err(|e| parse(format!("edge_features: {e}")))?;
        Ok(DepTree {
            node_features,
            edges: self.edges.into_iter().map(|[h, d]| (h, d)).collect(),
            edge_features,
            root: self.root,
            text: self.text,
        })
    }
}

/// Serializes one pair as a single line (no trailing newline).
pub fn pair_to_line(pair: &TreePair) -> String {
    let rec = PairRecord {
        schema: SCHEMA.to_string(),
        pair_id: pair.pair_id.clone(),
        label: pair.label,
        tree_a: TreeRecord::from_tree(&pair.tree_a),
        tree_b: TreeRecord::from_tree(&pair.tree_b),
    };
    serde_json::to_string(&rec).expect("pair records always serialize")
}

/// Parses and validates one line. `line` is 1-based and only used for messages.
pub fn parse_line(text: &str, line: usize, strictness: Strictness) -> Result<TreePair, DataError> {
    let rec: PairRecord = serde_json::from_str(text).map_err(|e| DataError::Parse {
        line,
        message: e.to_string(),
    })?;
    if rec.schema != SCHEMA {
        return Err(DataError::Schema {
            line,
            found: rec.schema,
        });
    }
    let pair = TreePair {
        tree_a: rec.tree_a.into_tree(line)?,
        tree_b: rec.tree_b.into_tree(line)?,
        label: rec.label,
        pair_id: rec.pair_id,
    };
    for (side, tree) in [("tree_a", &pair.tree_a), ("tree_b", &pair.tree_b)] {
        let violations = validate_tree(tree, strictness);
        if !violations.is_empty() {
            return Err(DataError::Validation {
                pair_id: pair.pair_id.clone(),
                line,
                side,
                violations,
            });
        }
    }
    Ok(pair)
}

/// Reads a pair file, validating every record. Blank lines are skipped.
pub fn read_pairs(reader: impl BufRead, strictness: Strictness) -> Result<Vec<TreePair>, DataError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let mut text = line?;
        if line_no == 1 && text.starts_with('\u{feff}') {
            return Err(DataError::Parse {
                line: 1,
                message: "byte-order mark not allowed".into(),
            });
        }
        if text.ends_with('\r') {
            text.pop();
        }
        if text.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&text, line_no, strictness)?);
    }
    Ok(out)
}

pub fn load_pairs(path: impl AsRef<Path>, strictness: Strictness) -> Result<Vec<TreePair>, DataError> {
    let file = File::open(path.as_ref()).map_err(|e| DataError::Io {
        path: path.as_ref().display().to_string(),
        source: e,
    })?;
    read_pairs(BufReader::new(file), strictness)
}

pub fn write_pairs(path: impl AsRef<Path>, pairs: &[TreePair]) -> Result<(), DataError> {
    let io_err = |e| DataError::Io {
        path: path.as_ref().display().to_string(),
        source: e,
    };
    let mut w = BufWriter::new(File::create(path.as_ref()).map_err(io_err)?);
    for p in pairs {
        writeln!(w, "{}", pair_to_line(p)).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
