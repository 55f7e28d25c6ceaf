//! Plain-text graph files.
//!
//! A dataset directory holds `edges.txt` (one `u v` pair of zero-based ids per
//! line), `features.csv` (row *i* = features of node *i*, no header) and an
//! optional `labels.txt` (one 0/1 per line).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{AttributedGraph, Domain};
use crate::diffcore::Tensor2D;
use crate::{Error, Result};

pub const EDGE_FILE: &str = "edges.txt";
pub const FEATURE_FILE: &str = "features.csv";
pub const LABEL_FILE: &str = "labels.txt";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = read(path)?;
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(path, i + 1, format!("expected `u v`, got {line:?}")));
        };
        let u = a
            .parse::<usize>()
            .map_err(|e| parse_err(path, i + 1, format!("bad node id {a:?}: {e}")))?;
        let v = b
            .parse::<usize>()
            .map_err(|e| parse_err(path, i + 1, format!("bad node id {b:?}: {e}")))?;
        edges.push((u, v));
    }
    Ok(edges)
}

fn parse_features(path: &Path) -> Result<Tensor2D> {
    let text = read(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for field in line.split(',') {
            let v = field
                .trim()
                .parse::<f64>()
                .map_err(|e| parse_err(path, i + 1, format!("bad value {field:?}: {e}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, i + 1, "non-finite feature value"));
            }
            data.push(v);
        }
        let width = data.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(parse_err(path, i + 1, format!("{width} columns, expected {c}")));
            }
            _ => {}
        }
        rows += 1;
    }
    Tensor2D::from_vec(rows, cols.unwrap_or(0), data)
}

fn parse_labels(path: &Path) -> Result<Vec<u8>> {
    let text = read(path)?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        match line.trim() {
            "" => continue,
            "0" => labels.push(0),
            "1" => labels.push(1),
            other => return Err(parse_err(path, i + 1, format!("label must be 0 or 1, got {other:?}"))),
        }
    }
    Ok(labels)
}

/// Reads a graph from its three files. For a target-domain graph the label
/// file, if given, becomes held-out evaluation labels.
pub fn load_graph(
    edge_file: &Path,
    feature_file: &Path,
    label_file: Option<&Path>,
    domain: Domain,
) -> Result<AttributedGraph> {
    let features = parse_features(feature_file)?;
    let edges = parse_edges(edge_file)?;
    let labels = label_file.map(parse_labels).transpose()?;
    AttributedGraph::from_edges(domain, features, edges, labels)
}

/// Reads `edges.txt`, `features.csv` and, when present, `labels.txt` from `dir`.
pub fn load_graph_dir(dir: &Path, domain: Domain) -> Result<AttributedGraph> {
    let labels = dir.join(LABEL_FILE);
    load_graph(
        &dir.join(EDGE_FILE),
        &dir.join(FEATURE_FILE),
        labels.exists().then_some(labels.as_path()),
        domain,
    )
}

/// Writes the graph's files into `dir` (created if needed). Labels are
/// written whenever the graph has them, held out or not.
pub fn write_graph_dir(g: &AttributedGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut edges = String::new();
    for (u, v) in g.edges() {
        writeln!(edges, "{u} {v}").unwrap();
    }
    let mut feats = String::new();
    for i in 0..g.node_count() {
        let row = g.features().row(i);
        for (j, x) in row.iter().enumerate() {
            if j > 0 {
                feats.push(',');
            }
            write!(feats, "{x}").unwrap();
        }
        feats.push('\n');
    }
    let write = |name: &str, body: &str| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    write(EDGE_FILE, &edges)?;
    write(FEATURE_FILE, &feats)?;
    if let Some(labels) = g.any_labels() {
        let body: String = labels.iter().map(|y| format!("{y}\n")).collect();
        write(LABEL_FILE, &body)?;
    }
    Ok(())
}
