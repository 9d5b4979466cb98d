//! Plain-text graph files.
//!
//! * edges: one `u<TAB>v` pair per line, `#` lines ignored
//! * features: CSV without header, one row per node in id order
//! * labels: one integer per line

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::Graph;
use crate::error::{DparError, Result};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| DparError::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| DparError::io(path, e))
}

fn parse_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = read(path)?;
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(DparError::parse(path, i + 1, "expected two node ids separated by a tab"));
        };
        let parse_id = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| DparError::parse(path, i + 1, format!("bad node id {s:?}: {e}")))
        };
        edges.push((parse_id(a)?, parse_id(b)?));
    }
    Ok(edges)
}

fn parse_features(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let text = read(path)?;
    let mut values = Vec::new();
    let mut dim = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = values.len();
        for field in line.split(',') {
            let x = field.trim().parse::<f64>().map_err(|e| {
                DparError::parse(path, i + 1, format!("bad feature value {field:?}: {e}"))
            })?;
            values.push(x);
        }
        let width = values.len() - before;
        match dim {
            None => dim = Some(width),
            Some(d) if d != width => {
                return Err(DparError::parse(
                    path,
                    i + 1,
                    format!("row has {width} values, expected {d}"),
                ))
            }
            Some(_) => {}
        }
        rows += 1;
    }
    Ok((values, rows, dim.unwrap_or(0)))
}

fn parse_labels(path: &Path) -> Result<Vec<usize>> {
    let text = read(path)?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let s = line.trim();
        if s.is_empty() {
            continue;
        }
        labels.push(
            s.parse::<usize>()
                .map_err(|e| DparError::parse(path, i + 1, format!("bad label {s:?}: {e}")))?,
        );
    }
    Ok(labels)
}

/// Loads and validates a graph. The node count is the number of feature rows;
/// the class count is one more than the largest label.
pub fn load_graph(edge_path: &Path, feature_path: &Path, label_path: &Path) -> Result<Graph> {
    let edges = parse_edges(edge_path)?;
    let (features, n_nodes, dim) = parse_features(feature_path)?;
    let labels = parse_labels(label_path)?;
    if labels.len() != n_nodes {
        return Err(DparError::Dimension(format!(
            "{} feature rows but {} labels",
            n_nodes,
            labels.len()
        )));
    }
    if let Some(max_id) = edges.iter().map(|&(u, v)| u.max(v)).max() {
        if max_id >= n_nodes {
            return Err(DparError::Dimension(format!(
                "edge file references node {max_id} but only {n_nodes} feature rows exist"
            )));
        }
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    Graph::from_edges(n_nodes, &edges, features, dim, labels, n_classes)
}

/// Writes the three graph files. Floats use the shortest representation that
/// parses back to the identical value.
pub fn save_graph(graph: &Graph, edge_path: &Path, feature_path: &Path, label_path: &Path) -> Result<()> {
    let mut edges = String::new();
    for (u, v) in graph.edge_list() {
        let _ = writeln!(edges, "{u}\t{v}");
    }
    let mut feats = String::new();
    for node in 0..graph.n_nodes() {
        let row: Vec<String> = graph.features(node).iter().map(|x| format!("{x:?}")).collect();
        let _ = writeln!(feats, "{}", row.join(","));
    }
    let mut labels = String::new();
    for y in graph.labels() {
        let _ = writeln!(labels, "{y}");
    }
    write(edge_path, &edges)?;
    write(feature_path, &feats)?;
    write(label_path, &labels)
}
